"""Deterministic artifact writing: JSON with metadata, CSV tables and a dependency-free SVG plot."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from hwlab import __version__

VERSION_STRING = f"hwlab {__version__}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def write_text(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def write_bytes(out_dir: Path, name: str, data: bytes) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_bytes(data)
    return path


def with_metadata(payload: dict, config: dict, seed: int, streams) -> dict:
    return {"meta": {"version": VERSION_STRING, "config": config, "seed": seed, "streams": list(streams)}, **payload}


# ------------------------------------------------------------------ SVG

_W, _H = 640, 420
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 70, 20, 30, 50


def _ticks(lo: float, hi: float) -> list[float]:
    a, b = math.floor(lo), math.ceil(hi)
    return [10.0**k for k in range(a, b + 1)]


def rate_plot_svg(ds, values, bands=None, slope=None, intercept=None, title="", ylabel="distance") -> str:
    """Log-log scatter with optional symmetric error bars and a fitted power law ``exp(intercept) d^slope``."""
    ds = np.asarray(ds, dtype=float)
    ys = np.asarray(values, dtype=float)
    bands = np.zeros_like(ys) if bands is None else np.asarray(bands, dtype=float)
    lo_y = np.maximum(ys - bands, ys * 0.2)
    hi_y = ys + bands
    lx0, lx1 = math.log10(ds.min()) - 0.1, math.log10(ds.max()) + 0.1
    ly0, ly1 = math.log10(lo_y.min()) - 0.1, math.log10(hi_y.max()) + 0.1

    def px(x):
        return _PAD_L + (math.log10(x) - lx0) / (lx1 - lx0) * (_W - _PAD_L - _PAD_R)

    def py(y):
        return _H - _PAD_B - (math.log10(y) - ly0) / (ly1 - ly0) * (_H - _PAD_T - _PAD_B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>',
        f'<line x1="{_PAD_L}" y1="{_H - _PAD_B}" x2="{_W - _PAD_R}" y2="{_H - _PAD_B}" stroke="black"/>',
        f'<line x1="{_PAD_L}" y1="{_PAD_T}" x2="{_PAD_L}" y2="{_H - _PAD_B}" stroke="black"/>',
        f'<text x="{_W / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">d</text>',
        f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>',
    ]
    for t in _ticks(lx0, lx1):
        if lx0 <= math.log10(t) <= lx1:
            x = px(t)
            out.append(f'<line x1="{x:.1f}" y1="{_H - _PAD_B}" x2="{x:.1f}" y2="{_H - _PAD_B + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.1f}" y="{_H - _PAD_B + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in _ticks(ly0, ly1):
        if ly0 <= math.log10(t) <= ly1:
            y = py(t)
            out.append(f'<line x1="{_PAD_L - 5}" y1="{y:.1f}" x2="{_PAD_L}" y2="{y:.1f}" stroke="black"/>')
            out.append(f'<text x="{_PAD_L - 8}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:g}</text>')
    for d, y, lo, hi in zip(ds, ys, lo_y, hi_y):
        x = px(d)
        if hi > lo:
            out.append(f'<line x1="{x:.1f}" y1="{py(hi):.1f}" x2="{x:.1f}" y2="{py(lo):.1f}" stroke="#888"/>')
        out.append(f'<circle cx="{x:.1f}" cy="{py(y):.1f}" r="3.5" fill="#1f5fa8"/>')
    if slope is not None and intercept is not None:
        f0 = math.exp(intercept) * ds.min() ** slope
        f1 = math.exp(intercept) * ds.max() ** slope
        out.append(
            f'<line x1="{px(ds.min()):.1f}" y1="{py(f0):.1f}" x2="{px(ds.max()):.1f}" y2="{py(f1):.1f}" '
            'stroke="#c0392b" stroke-dasharray="6,4"/>'
        )
        out.append(
            f'<text x="{_W - _PAD_R - 4}" y="{_PAD_T + 14}" text-anchor="end" font-family="sans-serif" font-size="12" '
            f'fill="#c0392b">slope {slope:.3f}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
