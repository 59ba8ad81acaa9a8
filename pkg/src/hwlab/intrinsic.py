"""Intrinsic volumes, the Wills functional and the laws built from them.

Profiles are stored as natural logarithms of ``v_0, ..., v_d`` (``-inf`` for a
vanishing volume) so that cubes and balls in dimension 10^4 and beyond stay
representable. Raw values are available through :attr:`IntrinsicProfile.v`
and overflow to ``inf`` when they do not fit in a double.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from hwlab.errors import DegenerateError, InputError, PreconditionError

LOG_PI = math.log(math.pi)


def log_kappa(j):
    """Log-volume of the ``j``-dimensional unit ball."""
    j = np.asarray(j, dtype=float)
    if np.any(j < 0):
        raise InputError("kappa is defined for j >= 0")
    out = 0.5 * j * LOG_PI - gammaln(1.0 + 0.5 * j)
    return out if out.ndim else float(out)


def kappa(j):
    """Volume ``pi^(j/2) / Gamma(1 + j/2)`` of the ``j``-dimensional unit ball."""
    return np.exp(log_kappa(j))


def log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logw)
    if not finite.any():
        raise DegenerateError("all weights vanish")
    shift = logw[finite].max()
    w = np.exp(logw - shift)
    return w / w.sum()


@dataclass(frozen=True)
class IntrinsicProfile:
    """Intrinsic volumes ``(v_0, ..., v_d)`` held in log form."""

    d: int
    log_v: np.ndarray

    def __post_init__(self):
        log_v = np.asarray(self.log_v, dtype=float)
        if log_v.shape != (self.d + 1,):
            raise InputError(f"expected {self.d + 1} log-volumes, got shape {log_v.shape}")
        if np.any(np.isnan(log_v)) or np.any(log_v == np.inf):
            raise InputError("log-volumes must be finite or -inf")
        object.__setattr__(self, "log_v", log_v)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def log_wills(self) -> float:
        return float(logsumexp(self.log_v))

    @property
    def wills(self) -> float:
        return math.exp(self.log_wills)

    def scaled(self, lam: float) -> "IntrinsicProfile":
        """Profile of ``lam * K`` (``v_k`` is ``k``-homogeneous)."""
        return IntrinsicProfile(self.d, self.log_v + np.arange(self.d + 1) * math.log(lam))

    def to_json(self) -> dict:
        return {"d": int(self.d), "log_v": [None if not np.isfinite(x) else float(x) for x in self.log_v]}

    @classmethod
    def from_json(cls, doc: dict) -> "IntrinsicProfile":
        try:
            d = int(doc["d"])
            log_v = [-np.inf if x is None else float(x) for x in doc["log_v"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed profile document: {exc}") from exc
        return cls(d, np.array(log_v))


@dataclass(frozen=True)
class DiscreteLaw:
    """Probability vector on ``{0, ..., m}``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("probs must be a nonempty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12 * max(1, p.size):
            raise InputError("probs must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def support_max(self) -> int:
        return self.probs.size - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    @property
    def var(self) -> float:
        k = np.arange(self.probs.size)
        m = self.mean
        return float(np.dot((k - m) ** 2, self.probs))


@dataclass(frozen=True)
class SurfaceLaw:
    d: int
    s: float
    probs: np.ndarray
    e_p: float
    var_p: float


@dataclass(frozen=True)
class MomentSummary:
    """Population moments of ``V_K`` and of ``H_K = pi dist^2(X_K, K)``."""

    delta: float
    sigma2: float
    tau2: float
    mean_v: float

    def to_json(self) -> dict:
        return {"delta": self.delta, "sigma2": self.sigma2, "tau2": self.tau2, "mean_v": self.mean_v}


# ---------------------------------------------------------------- profiles


def log_elementary_symmetric(values) -> np.ndarray:
    """``log e_k(values)`` for ``k = 0..n`` by the one-pass forward recurrence.

    ``e_k <- e_k + x * e_{k-1}`` is applied in log form, which keeps every
    intermediate positive and free of overflow.
    """
    x = np.asarray(values, dtype=float)
    if np.any(x <= 0):
        raise InputError("values must be positive")
    n = x.size
    out = np.full(n + 1, -np.inf)
    out[0] = 0.0
    for j, lx in enumerate(np.log(x), start=1):
        out[1 : j + 1] = np.logaddexp(out[1 : j + 1], lx + out[0:j])
    return out


def profile_box(sides) -> IntrinsicProfile:
    """Intrinsic volumes of a box with the given side lengths.

    ``v_k`` is the ``k``-th elementary symmetric polynomial of the sides; equal
    sides use the closed form ``C(d, k) s^k``.
    """
    sides = np.atleast_1d(np.asarray(sides, dtype=float))
    if sides.ndim != 1 or sides.size == 0 or np.any(sides <= 0):
        raise InputError("sides must be a nonempty vector of positive lengths")
    d = sides.size
    if np.all(sides == sides[0]):
        k = np.arange(d + 1)
        return IntrinsicProfile(d, log_binom(d, k) + k * math.log(sides[0]))
    return IntrinsicProfile(d, log_elementary_symmetric(sides))


def profile_ball(d: int, radius: float) -> IntrinsicProfile:
    """``v_k = C(d, k) kappa_d / kappa_{d-k} R^k``."""
    d = int(d)
    if d < 1:
        raise InputError("dimension must be at least 1")
    if radius < 0:
        raise InputError("radius must be nonnegative")
    if radius == 0:
        return profile_point(d)
    k = np.arange(d + 1)
    log_v = log_binom(d, k) + log_kappa(d) - log_kappa(d - k) + k * math.log(radius)
    return IntrinsicProfile(d, log_v)


def profile_point(d: int) -> IntrinsicProfile:
    log_v = np.full(int(d) + 1, -np.inf)
    log_v[0] = 0.0
    return IntrinsicProfile(int(d), log_v)


def profile_of(body) -> IntrinsicProfile | None:
    """Exact profile for boxes and balls; ``None`` for H-polytopes."""
    if body.kind == "box":
        return profile_box(2.0 * body.half_widths)
    if body.kind == "ball":
        return profile_ball(body.dim, body.radius)
    return None


def steiner_volume(profile: IntrinsicProfile, r: float) -> float:
    """``Vol(K + rB) = sum_k kappa_{d-k} v_k r^{d-k}``."""
    d = profile.d
    k = np.arange(d + 1)
    terms = profile.v * kappa(d - k) * float(r) ** (d - k)
    return float(terms.sum())


# -------------------------------------------------------------------- laws


def vk_law(profile: IntrinsicProfile) -> DiscreteLaw:
    return DiscreteLaw(_normalize_log(profile.log_v))


def is_ultra_log_concave(x, tol: float = 1e-12, log: bool = False) -> bool:
    """Check ``k x_k^2 >= (k+1) x_{k-1} x_{k+1}`` for every interior ``k``.

    The comparison is relative: a violation smaller than ``tol`` times the
    larger side is accepted. With ``log=True`` the input holds ``log x``.
    """
    lx = np.asarray(x, dtype=float)
    if not log:
        if np.any(lx < 0):
            return False
        with np.errstate(divide="ignore"):
            lx = np.log(lx)
    if lx.size < 3:
        return True
    k = np.arange(1, lx.size - 1)
    lhs = np.log(k) + 2.0 * lx[1:-1]
    rhs = np.log(k + 1.0) + lx[:-2] + lx[2:]
    both_zero = np.isneginf(lhs) & np.isneginf(rhs)
    with np.errstate(invalid="ignore"):
        ok = both_zero | (lhs >= rhs) | (lhs - rhs >= math.log1p(-tol))
    return bool(np.all(ok))


@dataclass(frozen=True)
class UlcBounds:
    mean_bound: float
    var_bound: float
    mean: float
    var: float
    mean_ok: bool
    var_ok: bool
    lotz_tropp_bound: float
    lotz_tropp_ok: bool


def ulc_moment_bounds(law: DiscreteLaw, tol: float = 1e-12) -> UlcBounds:
    """Mean and variance bounds ``x_1 / x_0`` for an ultra log-concave law.

    Also reports whether the refinement ``Var <= 2 (d - E)/(d + E) E`` holds.
    """
    p = law.probs
    if p[0] <= 0:
        raise DegenerateError("x_0 = 0: the ratio bound is undefined")
    if not is_ultra_log_concave(p, tol):
        raise PreconditionError("law is not ultra log-concave")
    x1 = p[1] if p.size > 1 else 0.0
    bound = float(x1 / p[0])
    mean, var = law.mean, law.var
    d = law.support_max
    lt = 0.0 if mean == 0 else 2.0 * (d - mean) / (d + mean) * mean
    slack = 1e-12 * max(1.0, bound)
    return UlcBounds(
        mean_bound=bound,
        var_bound=bound,
        mean=mean,
        var=var,
        mean_ok=mean <= bound + slack,
        var_ok=var <= bound + slack,
        lotz_tropp_bound=lt,
        lotz_tropp_ok=var <= lt + 1e-12 * max(1.0, lt),
    )


def _surface_log_weights(profile: IntrinsicProfile) -> np.ndarray:
    d = profile.d
    i = np.arange(d)
    with np.errstate(divide="ignore"):
        return np.log(d - i) + profile.log_v[:d] + log_kappa(d - i)


def surface_law(profile: IntrinsicProfile, s: float) -> SurfaceLaw:
    """Face-dimension law ``p_i(s) ∝ (d-i) v_i kappa_{d-i} s^i`` on ``{0..d-1}``.

    ``s = inf`` returns the point mass at ``d - 1``.
    """
    d = profile.d
    s = float(s)
    if not s > 0:
        raise InputError("s must be positive (or inf)")
    if math.isinf(s):
        probs = np.zeros(d)
        probs[-1] = 1.0
    else:
        probs = _normalize_log(_surface_log_weights(profile) + np.arange(d) * math.log(s))
    i = np.arange(d)
    e = float(np.dot(i, probs))
    var = max(float(np.dot(i * i, probs)) - e * e, 0.0)
    return SurfaceLaw(d=d, s=s, probs=probs, e_p=e, var_p=var)


def surface_moments(profile: IntrinsicProfile, s, chunk: int = 4096):
    """Vectorized ``(e_p(s), var_p(s))`` for an array of arguments ``s``."""
    s = np.asarray(s, dtype=float)
    flat = s.ravel()
    if np.any(~(flat > 0)):
        raise InputError("s must be positive (or inf)")
    d = profile.d
    base = _surface_log_weights(profile)
    i = np.arange(d, dtype=float)
    e = np.empty_like(flat)
    var = np.empty_like(flat)
    inf = np.isinf(flat)
    e[inf] = d - 1
    var[inf] = 0.0
    idx = np.flatnonzero(~inf)
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        lw = base[None, :] + np.log(flat[sel])[:, None] * i[None, :]
        lw -= lw.max(axis=1, keepdims=True)
        w = np.exp(lw)
        w /= w.sum(axis=1, keepdims=True)
        m1 = w @ i
        m2 = w @ (i * i)
        e[sel] = m1
        var[sel] = np.maximum(m2 - m1 * m1, 0.0)
    return e.reshape(s.shape), var.reshape(s.shape)


def moments(profile: IntrinsicProfile) -> MomentSummary:
    """Exact moments from a profile.

    ``delta = E[pi dist^2] = (d - E V)/2`` and ``sigma2 = Var(pi dist^2) = tau2/4 + delta``.
    """
    law = vk_law(profile)
    mean_v, tau2 = law.mean, law.var
    delta = 0.5 * (profile.d - mean_v)
    return MomentSummary(delta=delta, sigma2=0.25 * tau2 + delta, tau2=tau2, mean_v=mean_v)
