"""Samplers for ``X_K`` (density ``exp(-pi dist^2(x, K)) / W(K)``) and ``H_K = pi dist^2``.

Three routes:

* ``box_exact``: coordinates of ``X_K`` are independent for a box, each
  uniform on the side with probability ``2T/(1+2T)`` and otherwise a
  half-Gaussian tail of variance ``1/(2 pi)`` beyond ``±T``.
* ``mixture``: ``H_K`` has the law of ``Gamma((d - V)/2, 1)`` given ``V``,
  with ``V`` drawn from the intrinsic-volume law.
* ``mala``: Metropolis-adjusted Langevin chains for any body.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from hwlab.bodies import ConvexBody, project_many
from hwlab.errors import InputError, TuningError
from hwlab.intrinsic import DiscreteLaw
from hwlab.rng import CHUNK, SeedSpec, as_seed, map_chunks

TAIL_SD = 1.0 / math.sqrt(2.0 * math.pi)
BINARY_MAGIC = b"HWLB"
BINARY_VERSION = 1


@dataclass
class SampleBatch:
    """A reproducible batch of draws.

    ``kind`` is ``"points"`` (shape ``(n, d)``) or ``"h_values"`` (shape
    ``(n,)``). ``log_weights`` is set only by importance-tilted samplers.
    """

    body: str
    kind: str
    values: np.ndarray
    sampler: str
    seed: SeedSpec
    diagnostics: dict = field(default_factory=dict)
    log_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "h_values" and np.any(self.values < 0):
            raise InputError("h_values must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1]) if self.values.ndim == 2 else 1

    def metadata(self) -> dict:
        return {
            "body": self.body,
            "kind": self.kind,
            "sampler": self.sampler,
            "n": self.n,
            "dim": self.dim,
            "seed": int(self.seed.seed),
            "stream": int(self.seed.stream),
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------- box route


def _rows_per_chunk(d: int) -> int:
    return max(1024, min(CHUNK, (1 << 21) // max(d, 1)))


def tilt_parameters(half_widths, tilt: float):
    """Per-coordinate interior probability and tail s.d. under the exponential tilt ``exp(-t H)``."""
    if not tilt > -1.0:
        raise InputError("tilt must exceed -1")
    t2 = 2.0 * np.asarray(half_widths, dtype=float)
    tail_mass = 1.0 / math.sqrt(1.0 + tilt)
    q = t2 / (t2 + tail_mass)
    sd = TAIL_SD / math.sqrt(1.0 + tilt)
    log_norm_ratio = float(np.sum(np.log(t2 + tail_mass) - np.log(t2 + 1.0)))
    return q, sd, log_norm_ratio


def _box_chunk(rng, size, center, hw, tilt):
    d = hw.size
    q, sd, log_ratio = tilt_parameters(hw, tilt)
    u = rng.random((size, d))
    z = rng.standard_normal((size, d))
    inside = u < q
    v = (u - q) / (1.0 - q)
    sign = np.where(v < 0.5, -1.0, 1.0)
    offset = np.where(inside, hw * (2.0 * u / q - 1.0), sign * (hw + sd * np.abs(z)))
    excess = np.where(inside, 0.0, np.abs(z) * sd)
    h = math.pi * np.einsum("ij,ij->i", excess, excess)
    logw = tilt * h + log_ratio if tilt != 0.0 else None
    return center + offset, h, logw


def _require_box(body):
    if not isinstance(body, ConvexBody) or body.kind != "box":
        raise InputError("box-exact sampling needs a Box body")


def map_box(box: ConvexBody, n: int, seed, fn, tilt: float = 0.0) -> list:
    """Stream box draws chunk by chunk: ``fn(points, h, log_weights)`` per chunk, in order."""
    _require_box(box)
    seed = as_seed(seed)
    hw = box.half_widths
    center = box.center

    def job(rng, size, _):
        return fn(*_box_chunk(rng, size, center, hw, tilt))

    return map_chunks(job, n, seed, _rows_per_chunk(box.dim))


def sample_box_exact(box: ConvexBody, n: int, seed=None, tilt: float = 0.0) -> SampleBatch:
    """I.i.d. draws of ``X_K`` for a box; a nonzero ``tilt`` samples ``exp(-t H)``-tilted and attaches weights."""
    seed = as_seed(seed)
    parts = map_box(box, n, seed, lambda x, h, lw: (x, lw), tilt)
    pts = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, box.dim))
    logw = np.concatenate([p[1] for p in parts]) if tilt != 0.0 and parts else None
    name = "box_exact" if tilt == 0.0 else "box_tilted"
    return SampleBatch(box.tag, "points", pts, name, seed, {"tilt": tilt}, logw)


def sample_box_h(box: ConvexBody, n: int, seed=None, tilt: float = 0.0) -> SampleBatch:
    """``H_K`` from box-exact draws without keeping the points."""
    seed = as_seed(seed)
    parts = map_box(box, n, seed, lambda x, h, lw: (h, lw), tilt)
    h = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    logw = np.concatenate([p[1] for p in parts]) if tilt != 0.0 and parts else None
    name = "box_exact" if tilt == 0.0 else "box_tilted"
    return SampleBatch(box.tag, "h_values", h, name, seed, {"tilt": tilt}, logw)


def _ball_chunk(rng, size, body, cdf):
    """Exact ball draws: distance from the mixture, direction uniform, uniform inside when ``V = d``."""
    d = body.dim
    v = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), d)
    h = rng.standard_gamma(0.5 * (d - v))
    z = rng.standard_normal((size, d))
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    inside_radius = body.radius * rng.random(size) ** (1.0 / d)
    rho = np.where(v == d, inside_radius, body.radius + np.sqrt(h / math.pi))
    return body.center + rho[:, None] * u, h


def map_points(body: ConvexBody, n: int, seed, fn) -> list:
    """Stream exact draws of ``X_K`` for boxes, balls and the point body.

    ``fn(points, h)`` is applied per chunk and the results are returned in
    chunk order.
    """
    seed = as_seed(seed)
    if body.kind == "box":
        return map_box(body, n, seed, lambda x, h, lw: fn(x, h))
    if body.kind != "ball":
        raise InputError("exact sampling is available for boxes and balls only; use MALA")
    rows = _rows_per_chunk(body.dim)
    if body.degenerate:

        def job(rng, size, _):
            z = TAIL_SD * rng.standard_normal((size, body.dim))
            return fn(body.center + z, math.pi * np.einsum("ij,ij->i", z, z))

        return map_chunks(job, n, seed, rows)
    from hwlab.intrinsic import profile_ball, vk_law

    cdf = np.cumsum(vk_law(profile_ball(body.dim, body.radius)).probs)

    def job(rng, size, _):
        return fn(*_ball_chunk(rng, size, body, cdf))

    return map_chunks(job, n, seed, rows)


def sample_exact(body: ConvexBody, n: int, seed=None) -> SampleBatch:
    """Exact i.i.d. draws of ``X_K`` for boxes, balls and the point body."""
    seed = as_seed(seed)
    parts = map_points(body, n, seed, lambda x, h: x)
    pts = np.concatenate(parts) if parts else np.empty((0, body.dim))
    name = "box_exact" if body.kind == "box" else "ball_exact"
    return SampleBatch(body.tag, "points", pts, name, seed, {})


def sample_points(body: ConvexBody, n: int, seed=None, **mala_kw) -> SampleBatch:
    """Exact draws when available, MALA otherwise."""
    if body.kind in ("box", "ball"):
        return sample_exact(body, n, seed)
    return sample_mala(body, n, seed=seed, **mala_kw)


# ------------------------------------------------------------ mixture route


def sample_vk(law: DiscreteLaw, n: int, seed=None) -> np.ndarray:
    seed = as_seed(seed)
    cdf = np.cumsum(law.probs)
    top = law.support_max

    def job(rng, size, _):
        return np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), top)

    parts = map_chunks(job, n, seed)
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def sample_hk_mixture(law: DiscreteLaw, d: int, n: int, seed=None, body: str = "profile") -> SampleBatch:
    """``H = Gamma((d - V)/2, 1)`` with ``V`` drawn from ``law``; ``H = 0`` when ``V = d``."""
    seed = as_seed(seed)
    if law.support_max > d:
        raise InputError(f"law support {law.support_max} exceeds dimension {d}")
    cdf = np.cumsum(law.probs)
    top = law.support_max

    def job(rng, size, _):
        v = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), top)
        return rng.standard_gamma(0.5 * (d - v))

    parts = map_chunks(job, n, seed)
    h = np.concatenate(parts) if parts else np.empty(0)
    return SampleBatch(body, "h_values", h, "mixture", seed, {"d": int(d)})


# --------------------------------------------------------------- MALA route


def _potential(body, x):
    p, dist = project_many(body, x)
    return math.pi * dist**2, 2.0 * math.pi * (x - p)


def _mala_chunk(body, rng, n_chains, burn_in, step, spc, thin, auto_tune, target):
    d = body.dim
    x = np.repeat(body.center[None, :], n_chains, axis=0)
    u_cur, g_cur = _potential(body, x)
    log_eps = math.log(step)
    tune_steps = burn_in // 2 if auto_tune else 0

    def one_step(x, u_cur, g_cur, eps):
        xi = rng.standard_normal((n_chains, d))
        prop = x - 0.5 * eps * eps * g_cur + eps * xi
        u_prop, g_prop = _potential(body, prop)
        back = x - prop + 0.5 * eps * eps * g_prop
        log_alpha = (u_cur - u_prop) - np.einsum("ij,ij->i", back, back) / (2 * eps * eps) + 0.5 * np.einsum(
            "ij,ij->i", xi, xi
        )
        acc = np.log(rng.random(n_chains)) < log_alpha
        x = np.where(acc[:, None], prop, x)
        u_cur = np.where(acc, u_prop, u_cur)
        g_cur = np.where(acc[:, None], g_prop, g_cur)
        return x, u_cur, g_cur, acc

    for it in range(burn_in):
        x, u_cur, g_cur, acc = one_step(x, u_cur, g_cur, math.exp(log_eps))
        if it < tune_steps:
            log_eps += (acc.mean() - target) / (it + 1) ** 0.6
    eps = math.exp(log_eps)
    out = np.empty((spc, n_chains, d))
    accepted = 0
    for k in range(spc):
        for _ in range(thin):
            x, u_cur, g_cur, acc = one_step(x, u_cur, g_cur, eps)
            accepted += int(acc.sum())
        out[k] = x
    return out, accepted, spc * thin * n_chains, eps


def _ess(series: np.ndarray) -> float:
    """Effective sample size of ``(steps, chains)`` output via averaged autocorrelations."""
    steps, chains = series.shape
    if steps < 4:
        return float(steps * chains)
    centered = series - series.mean(axis=0)
    var = (centered**2).mean()
    if var == 0:
        return float(steps * chains)
    rho_sum = 0.0
    for lag in range(1, steps // 2):
        rho = (centered[lag:] * centered[:-lag]).mean() / var
        if rho <= 0:
            break
        rho_sum += rho
    return float(steps * chains / (1.0 + 2.0 * rho_sum))


def sample_mala(
    body: ConvexBody,
    n: int,
    burn_in: int = 500,
    step: float = 0.5,
    seed=None,
    chains: int | None = None,
    thin: int = 5,
    auto_tune: bool = True,
    target: float = 0.55,
) -> SampleBatch:
    """MALA chains targeting ``exp(-pi dist^2(x, K))``, all started at ``body.center``.

    ``chains`` independent chains (default ``min(n, 4096)``) each yield
    ``ceil(n / chains)`` states spaced ``thin`` steps apart after burn-in.
    The step adapts toward ``target`` acceptance during the first half of
    burn-in and is frozen afterwards.
    """
    seed = as_seed(seed)
    if not step > 0:
        raise InputError("step must be positive")
    if n <= 0:
        raise InputError("n must be positive")
    chains = int(chains or min(n, 4096))
    spc = -(-n // chains)
    block = 4096

    def job(rng, size, _):
        return _mala_chunk(body, rng, size, burn_in, step, spc, thin, auto_tune, target)

    parts = map_chunks(job, chains, seed, block)
    states = np.concatenate([p[0] for p in parts], axis=1)
    accepted = sum(p[1] for p in parts)
    total = sum(p[2] for p in parts)
    rate = accepted / total
    h = math.pi * project_many(body, states.reshape(-1, body.dim))[1] ** 2
    ess = _ess(h.reshape(spc, -1))
    pts = states.reshape(-1, body.dim)[:n]
    diagnostics = {
        "acceptance_rate": rate,
        "ess": min(ess, float(n)),
        "step": [p[3] for p in parts],
        "chains": chains,
        "thin": thin,
        "burn_in": burn_in,
    }
    if not 0.1 <= rate <= 0.9:
        hint = "enable auto-tuning" if not auto_tune else "increase burn-in"
        raise TuningError(
            f"MALA acceptance rate {rate:.3f} outside [0.1, 0.9]; step {step:g} is "
            f"{'too large' if rate < 0.1 else 'too small'} ({hint} or change --step)",
            rate,
        )
    return SampleBatch(body.tag, "points", pts, "mala", seed, diagnostics)


# ------------------------------------------------------------------ helpers


def h_from_points(body: ConvexBody, batch: SampleBatch) -> SampleBatch:
    """Elementwise ``pi dist^2(x, K)``."""
    if batch.kind != "points":
        raise InputError("expected a batch of points")
    if batch.dim != body.dim:
        raise InputError(f"points have dimension {batch.dim}, body has {body.dim}")
    h = math.pi * project_many(body, batch.values)[1] ** 2
    return SampleBatch(batch.body, "h_values", h, batch.sampler, batch.seed, dict(batch.diagnostics), batch.log_weights)


def sample_h(body: ConvexBody, n: int, seed=None, profile=None, route: str | None = None, **mala_kw) -> SampleBatch:
    """``H_K`` by the cheapest valid route: mixture when a profile is known, else MALA."""
    from hwlab.intrinsic import profile_of, vk_law

    if profile is None:
        profile = profile_of(body)
    route = route or ("mixture" if profile is not None else "mala")
    if route == "mixture":
        if profile is None:
            raise InputError("mixture route needs a profile")
        return sample_hk_mixture(vk_law(profile), profile.d, n, seed, body=body.tag)
    if route == "box_exact":
        return sample_box_h(body, n, seed)
    if route == "mala":
        return h_from_points(body, sample_mala(body, n, seed=seed, **mala_kw))
    raise InputError(f"unknown route {route!r}")


def batch_to_csv(batch: SampleBatch) -> str:
    buf = io.StringIO()
    vals = batch.values if batch.values.ndim == 2 else batch.values[:, None]
    if batch.kind == "points":
        header = ",".join(f"x{i}" for i in range(vals.shape[1]))
    else:
        header = "h"
    if batch.log_weights is not None:
        header += ",log_weight"
        vals = np.column_stack([vals, batch.log_weights])
    buf.write(header + "\n")
    for row in vals:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def batch_to_binary(batch: SampleBatch) -> bytes:
    """16-byte header ``(magic, version, count, dim)`` then little-endian float64 rows."""
    vals = np.ascontiguousarray(batch.values, dtype="<f8")
    header = struct.pack("<4sIII", BINARY_MAGIC, BINARY_VERSION, batch.n, batch.dim)
    return header + vals.tobytes()


def batch_from_binary(data: bytes) -> np.ndarray:
    magic, version, count, dim = struct.unpack("<4sIII", data[:16])
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise InputError("not an hwlab batch file")
    vals = np.frombuffer(data[16:], dtype="<f8")
    if vals.size != count * dim:
        raise InputError("truncated batch file")
    return vals.reshape(count, dim) if dim > 1 else vals.copy()
