"""Convex bodies, metric projection and face classification.

Three variants are supported: axis-aligned boxes and Euclidean balls with
closed-form projections, and H-polytopes ``{x : <a_j, x> <= b_j}`` projected
with Dykstra's alternating method. All batch functions take an ``(n, d)``
array of points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from hwlab.errors import BoundaryCaseError, ConvergenceError, InfeasibleError, InputError

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 100_000
FACE_TOL = 1e-7


@dataclass(frozen=True)
class ConvexBody:
    kind: str
    dim: int
    center: np.ndarray
    half_widths: np.ndarray | None = None
    radius: float | None = None
    normals: np.ndarray | None = None
    offsets: np.ndarray | None = None
    degenerate: bool = False
    _radius: float = field(default=math.nan, repr=False, compare=False)

    # ------------------------------------------------------------ builders

    @classmethod
    def box(cls, center, half_widths) -> "ConvexBody":
        hw = np.atleast_1d(np.asarray(half_widths, dtype=float))
        c = np.broadcast_to(np.asarray(center, dtype=float), hw.shape).copy()
        if hw.ndim != 1 or np.any(~(hw > 0)):
            raise InputError("box half-widths must all be > 0")
        return cls("box", hw.size, c, half_widths=hw, _radius=float(np.linalg.norm(hw)))

    @classmethod
    def cube(cls, d: int, half_width: float = 0.5, center=0.0) -> "ConvexBody":
        """``center + [-half_width, half_width]^d``; the defaults give a unit-volume cube."""
        return cls.box(np.full(d, center, dtype=float), np.full(d, half_width, dtype=float))

    @classmethod
    def ball(cls, center, radius: float) -> "ConvexBody":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise InputError("ball radius must be > 0 (use ConvexBody.point for K = {c})")
        return cls("ball", c.size, c, radius=float(radius), _radius=float(radius))

    @classmethod
    def point(cls, center) -> "ConvexBody":
        """The degenerate body ``{center}``: ``X_K`` is Gaussian with variance ``1/(2 pi)``."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", c.size, c, radius=0.0, degenerate=True, _radius=0.0)

    @classmethod
    def hpolytope(cls, normals, offsets, interior_point, enclosing_radius=None) -> "ConvexBody":
        a = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float))
        c = np.atleast_1d(np.asarray(interior_point, dtype=float))
        if a.shape[0] != b.size or a.shape[1] != c.size:
            raise InputError("normals, offsets and interior point have inconsistent shapes")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms == 0):
            raise InputError("zero normal vector")
        a = a / norms[:, None]
        b = b / norms
        if np.any(a @ c >= b):
            raise InputError("interior point must strictly satisfy every constraint")
        radius = _polytope_radius(a, b, c, enclosing_radius)
        return cls("hpolytope", c.size, c, normals=a, offsets=b, _radius=radius)

    # ------------------------------------------------------------- helpers

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """H-representation; boxes are expanded to ``2 d`` halfspaces."""
        if self.kind == "hpolytope":
            return self.normals, self.offsets
        if self.kind == "box":
            eye = np.eye(self.dim)
            a = np.vstack([eye, -eye])
            b = np.concatenate([self.center + self.half_widths, -(self.center - self.half_widths)])
            return a, b
        raise InputError("balls have no H-representation")

    def as_hpolytope(self) -> "ConvexBody":
        a, b = self.halfspaces()
        return ConvexBody.hpolytope(a, b, self.center)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return distance(self, np.atleast_2d(x)) <= tol

    def to_json(self) -> dict:
        doc = {"dim": int(self.dim), "kind": self.kind, "center": self.center.tolist()}
        if self.kind == "box":
            doc["half_widths"] = self.half_widths.tolist()
        elif self.kind == "ball":
            doc["radius"] = self.radius
            if self.degenerate:
                doc["degenerate"] = True
        else:
            doc.pop("center")
            doc["normals"] = self.normals.tolist()
            doc["offsets"] = self.offsets.tolist()
            doc["interior_point"] = self.center.tolist()
        return doc

    @property
    def tag(self) -> str:
        if self.kind == "box":
            hw = self.half_widths
            if np.all(hw == hw[0]):
                return f"cube(d={self.dim},T={hw[0]:g})"
            return f"box(d={self.dim})"
        if self.kind == "ball":
            return f"point(d={self.dim})" if self.degenerate else f"ball(d={self.dim},R={self.radius:g})"
        return f"hpolytope(d={self.dim},m={self.offsets.size})"


def _polytope_radius(a, b, c, supplied) -> float:
    d = c.size
    lo = np.empty(d)
    hi = np.empty(d)
    for i in range(d):
        for sign in (1.0, -1.0):
            obj = np.zeros(d)
            obj[i] = -sign
            res = linprog(obj, A_ub=a, b_ub=b, bounds=[(None, None)] * d, method="highs")
            if res.status == 3:
                raise InfeasibleError("polytope is unbounded")
            if res.status != 0:
                raise InfeasibleError(f"bounding LP failed: {res.message}")
            if sign > 0:
                hi[i] = res.x[i]
            else:
                lo[i] = res.x[i]
    bound = float(np.linalg.norm(np.maximum(hi - c, c - lo)))
    if supplied is None:
        return bound
    supplied = float(supplied)
    # a supplied radius must dominate the support function in sampled directions
    rng = np.random.default_rng(0)
    dirs = np.vstack([np.eye(d), -np.eye(d), rng.standard_normal((64, d))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for u in dirs:
        res = linprog(-u, A_ub=a, b_ub=b, bounds=[(None, None)] * d, method="highs")
        if res.status == 0 and float(u @ (res.x - c)) > supplied * (1 + 1e-9):
            raise InputError("supplied enclosing radius does not contain the polytope")
    return min(supplied, bound)


# --------------------------------------------------------------- JSON I/O


def body_from_json(doc: dict) -> ConvexBody:
    """Build a body from ``{"dim": n, "kind": "box" | "ball" | "hpolytope", ...}``."""
    if not isinstance(doc, dict):
        raise InputError("body description must be a JSON object")
    try:
        kind = doc["kind"]
        dim = int(doc["dim"])
        if kind == "box":
            if "half_widths" in doc:
                hw = np.asarray(doc["half_widths"], dtype=float)
            elif "sides" in doc:
                hw = 0.5 * np.asarray(doc["sides"], dtype=float)
            else:
                raise InputError("box needs half_widths or sides")
            hw = np.broadcast_to(hw, (dim,))
            body = ConvexBody.box(doc.get("center", np.zeros(dim)), hw)
        elif kind == "ball":
            center = np.broadcast_to(np.asarray(doc.get("center", 0.0), dtype=float), (dim,))
            if doc.get("degenerate"):
                body = ConvexBody.point(center)
            else:
                body = ConvexBody.ball(center, float(doc["radius"]))
        elif kind == "hpolytope":
            body = ConvexBody.hpolytope(
                doc["normals"], doc["offsets"], doc["interior_point"], doc.get("enclosing_radius")
            )
        else:
            raise InputError(f"unknown body kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed body description: {exc!r}") from exc
    if body.dim != dim:
        raise InputError(f"dim={dim} does not match the body data (dimension {body.dim})")
    return body


def load_body(spec: str) -> ConvexBody:
    """Parse inline JSON or read a JSON file."""
    text = spec.strip()
    if not text.startswith("{"):
        try:
            text = Path(spec).read_text()
        except OSError as exc:
            raise InputError(f"cannot read body file {spec}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"body JSON parse error: {exc}") from exc
    return body_from_json(doc)


# ------------------------------------------------------------- projection


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    distance: float
    face_dim: int | str
    iterations: int = 0


def _check_points(body: ConvexBody, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != body.dim:
        raise InputError(f"points must have dimension {body.dim}, got shape {x.shape}")
    return x


def dykstra_project(halfspaces, x, tol: float = DYKSTRA_TOL, max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Project ``x`` onto ``{u : A u <= b}`` by Dykstra's alternating projections.

    ``halfspaces`` is ``(A, b)`` or a list of ``(a_j, b_j)`` pairs.
    """
    a, b = _normalize_halfspaces(halfspaces)
    x = np.asarray(x, dtype=float)
    if tol <= 0:
        raise InputError("tol must be positive")
    if x.shape != (a.shape[1],):
        raise InputError("point dimension does not match the halfspaces")
    if a.shape[0] > 1:
        res = linprog(np.zeros(a.shape[1]), A_ub=a, b_ub=b, bounds=[(None, None)] * a.shape[1], method="highs")
        if res.status == 2:
            raise InfeasibleError("halfspace intersection is empty")
    p, _ = dykstra_batch(a, b, x[None, :], tol, max_iter)
    return p[0]


def _normalize_halfspaces(halfspaces):
    if isinstance(halfspaces, tuple) and len(halfspaces) == 2 and np.ndim(halfspaces[1]) == 1:
        a, b = halfspaces
    else:
        pairs = list(halfspaces)
        if not pairs:
            raise InputError("halfspace list is empty")
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or a.shape[0] != b.size:
        raise InputError("halfspace list is empty or inconsistent")
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        raise InputError("zero normal vector")
    return a / norms[:, None], b / norms


def dykstra_batch(a, b, x, tol=DYKSTRA_TOL, max_iter=DYKSTRA_MAX_ITER):
    """Batched Dykstra over unit-normal halfspaces.

    Returns the projections and per-point sweep counts. A point stops once a
    full sweep moves it and all correction increments by less than ``tol``.
    """
    x = np.array(x, dtype=float, copy=True)
    n = x.shape[0]
    m = a.shape[0]
    iters = np.zeros(n, dtype=np.int64)
    outside = np.flatnonzero(np.any(x @ a.T > b, axis=1))
    if outside.size == 0:
        return x, iters
    idx = outside
    xw = x[idx]
    incr = np.zeros((m, idx.size, x.shape[1]))
    scale = 1.0 + np.abs(xw).max(axis=1) + np.abs(b).max()
    for sweep in range(1, max_iter + 1):
        move = np.zeros(idx.size)
        dinc = np.zeros(idx.size)
        x_start = xw.copy()
        for j in range(m):
            y = xw + incr[j]
            viol = y @ a[j] - b[j]
            xn = y - np.maximum(viol, 0.0)[:, None] * a[j]
            new_inc = y - xn
            dinc += np.linalg.norm(new_inc - incr[j], axis=1)
            incr[j] = new_inc
            xw = xn
        move = np.linalg.norm(xw - x_start, axis=1)
        size = np.sqrt((incr**2).sum(axis=(0, 2)))
        if np.any(size > 1e12 * scale):
            raise InfeasibleError("Dykstra increments diverge: empty intersection")
        done = (move <= tol) & (dinc <= tol)
        if np.any(done):
            x[idx[done]] = xw[done]
            iters[idx[done]] = sweep
            keep = ~done
            idx, xw, incr, scale = idx[keep], xw[keep], incr[:, keep], scale[keep]
            if idx.size == 0:
                return x, iters
    residual = float(np.max(np.linalg.norm(xw - x_start, axis=1)))
    raise ConvergenceError(f"Dykstra did not converge in {max_iter} sweeps (residual {residual:.3g})", residual)


def project_many(body: ConvexBody, x, tol: float = DYKSTRA_TOL, max_iter: int = DYKSTRA_MAX_ITER):
    """Return ``(projections, distances)`` for an ``(n, d)`` array of points."""
    x = _check_points(body, x)
    if body.kind == "box":
        lo = body.center - body.half_widths
        hi = body.center + body.half_widths
        p = np.clip(x, lo, hi)
    elif body.kind == "ball":
        if body.degenerate:
            p = np.broadcast_to(body.center, x.shape).copy()
        else:
            rel = x - body.center
            r = np.linalg.norm(rel, axis=1)
            factor = np.where(r > body.radius, body.radius / np.where(r > 0, r, 1.0), 1.0)
            p = body.center + rel * factor[:, None]
    else:
        p, _ = dykstra_batch(body.normals, body.offsets, x, tol, max_iter)
    return p, np.linalg.norm(x - p, axis=1)


def distance(body: ConvexBody, x, **kw) -> np.ndarray:
    return project_many(body, x, **kw)[1]


def project(body: ConvexBody, x, tol: float = DYKSTRA_TOL, max_iter: int = DYKSTRA_MAX_ITER) -> ProjectionResult:
    """Nearest point of ``body`` to ``x`` with distance and face dimension."""
    x = np.asarray(x, dtype=float)
    if x.shape != (body.dim,):
        raise InputError(f"point must have dimension {body.dim}, got shape {x.shape}")
    iterations = 0
    if body.kind == "hpolytope":
        p, its = dykstra_batch(body.normals, body.offsets, x[None, :], tol, max_iter)
        iterations = int(its[0])
    else:
        p, _ = project_many(body, x[None, :])
    p = p[0]
    dist = float(np.linalg.norm(x - p))
    if body.degenerate:
        face = 0
    elif dist == 0.0:
        face = body.dim
    elif body.kind == "ball":
        face = "smooth"
    else:
        face = int(face_dims(body, x[None, :], strict=False)[0])
    return ProjectionResult(point=p, distance=dist, face_dim=face, iterations=iterations)


# ------------------------------------------------------ face dimensions


def _rank(mat: np.ndarray, tol: float) -> int:
    if mat.shape[0] == 0:
        return 0
    _, r, _ = scipy.linalg.qr(mat.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    return int(np.sum(diag > tol * max(1.0, diag[0])))


def face_dims(body: ConvexBody, x, tol: float = FACE_TOL, strict: bool = True) -> np.ndarray:
    """Dimension of the face whose relative interior contains ``Pi_K(x)``, per point.

    For boxes this counts unclamped coordinates. For H-polytopes it is
    ``d - rank`` of the normals active at the projection; with ``strict`` a
    point whose activity pattern is unclear at the ``tol`` scale raises
    :class:`BoundaryCaseError`.
    """
    x = _check_points(body, x)
    if body.kind == "box":
        clamped = np.abs(x - body.center) > body.half_widths
        if strict:
            gap = np.abs(np.abs(x - body.center) - body.half_widths)
            if np.any(gap <= tol * (1 + body.half_widths)):
                raise BoundaryCaseError("point on a face-region boundary")
        return body.dim - clamped.sum(axis=1)
    if body.kind == "ball":
        raise InputError("balls have no faces; use trace_projection_jacobian")
    a, b = body.normals, body.offsets
    p, dist = project_many(body, x)
    slack = b[None, :] - p @ a.T
    thr = tol * (1.0 + np.abs(b))[None, :]
    active = slack <= thr
    if strict:
        ambiguous = (slack > thr) & (slack <= 100.0 * thr)
        bad = np.any(ambiguous, axis=1)
        bad |= _weak_multipliers(a, active, x - p, dist, tol)
        if np.any(bad):
            raise BoundaryCaseError(f"{int(bad.sum())} point(s) on a face-region boundary")
    out = np.full(x.shape[0], body.dim, dtype=np.int64)
    patterns, inverse = np.unique(active, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for k, pat in enumerate(patterns):
        out[inverse == k] = body.dim - _rank(a[pat], tol)
    out[dist == 0] = body.dim
    return out


def _weak_multipliers(a, active, normal, dist, tol):
    """Flag points whose normal ``x - Pi(x)`` lies on the boundary of the normal cone."""
    bad = np.zeros(active.shape[0], dtype=bool)
    patterns, inverse = np.unique(active, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for k, pat in enumerate(patterns):
        sel = np.flatnonzero((inverse == k) & (dist > 0))
        if sel.size == 0 or not pat.any():
            continue
        rows = a[pat]
        if _rank(rows, tol) < rows.shape[0]:
            continue
        lam, *_ = np.linalg.lstsq(rows.T, normal[sel].T, rcond=None)
        bad[sel] = np.any(lam <= 100.0 * tol * dist[sel][None, :], axis=0)
    return bad


def trace_jacobian_many(body: ConvexBody, x, tol: float = FACE_TOL, strict: bool = True) -> np.ndarray:
    """``Tr(grad Pi_K(x))`` per point."""
    x = _check_points(body, x)
    if body.kind == "ball":
        if body.degenerate:
            return np.zeros(x.shape[0])
        r = np.linalg.norm(x - body.center, axis=1)
        outside = r > body.radius
        return np.where(outside, body.radius * (body.dim - 1) / np.where(outside, r, 1.0), float(body.dim))
    return face_dims(body, x, tol, strict).astype(float)


def trace_projection_jacobian(body: ConvexBody, x, tol: float = FACE_TOL) -> float:
    """Trace of the Jacobian of the projection at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (body.dim,):
        raise InputError(f"point must have dimension {body.dim}, got shape {x.shape}")
    return float(trace_jacobian_many(body, x[None, :], tol)[0])


def enclosing_radius(body: ConvexBody) -> float:
    """``R`` with ``K`` inside the ball of radius ``R`` around ``body.center``."""
    return float(body._radius)
