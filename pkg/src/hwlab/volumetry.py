"""Monte Carlo volumes of parallel bodies and recovery of intrinsic volumes.

Two independent recovery routes are provided: a weighted least-squares fit of
the Steiner polynomial to hit-or-miss estimates of ``Vol(K + rB)``, and a
Vandermonde fit to importance-sampling estimates of ``W(lam K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from hwlab.bodies import ConvexBody, enclosing_radius, face_dims, project_many
from hwlab.errors import BandWidthError, ConditioningError, InputError, ProposalQualityError
from hwlab.intrinsic import IntrinsicProfile, kappa, profile_of, surface_law
from hwlab.rng import as_seed, map_chunks, pairwise_sum
from hwlab.sampling import sample_box_exact, sample_mala, tilt_parameters

MAX_HIT_OR_MISS_DIM = 8
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    stderr: float
    n: int
    method: str


@dataclass(frozen=True)
class FittedProfile:
    """Intrinsic volumes recovered by least squares, with parameter covariance."""

    v: np.ndarray
    cov: np.ndarray
    abscissae: np.ndarray
    estimates: list

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def d(self) -> int:
        return self.v.size - 1

    def profile(self) -> IntrinsicProfile:
        """Point estimate as a profile (negative estimates clipped to a tiny positive value)."""
        v = np.clip(self.v, 1e-300, None)
        return IntrinsicProfile(self.d, np.log(v))


def estimate_parallel_volume(body: ConvexBody, r: float, n: int, seed=None) -> VolumeEstimate:
    """Hit-or-miss estimate of ``Vol(K + rB)`` inside the cube of half-width ``R + r``."""
    if n <= 0:
        raise InputError("n must be positive")
    if r < 0:
        raise InputError("r must be nonnegative")
    if body.dim > MAX_HIT_OR_MISS_DIM:
        raise InputError(f"hit-or-miss is limited to d <= {MAX_HIT_OR_MISS_DIM}; use the Wills route")
    seed = as_seed(seed)
    half = enclosing_radius(body) + r
    d = body.dim

    def job(rng, size, _):
        x = body.center + rng.uniform(-half, half, (size, d))
        return int(np.count_nonzero(project_many(body, x)[1] <= r))

    hits = sum(map_chunks(job, n, seed))
    box_volume = (2.0 * half) ** d
    p = hits / n
    return VolumeEstimate(box_volume * p, box_volume * math.sqrt(p * (1 - p) / n), int(n), "hit_or_miss")


def default_radii(body: ConvexBody, count: int | None = None) -> np.ndarray:
    count = count or 2 * (body.dim + 1)
    rad = enclosing_radius(body)
    return np.geomspace(0.25 * rad, 4.0 * rad, count)


def _wls(design, y, se, constrain_first=None):
    """Weighted least squares ``design @ beta ≈ y``; optionally fixes ``beta[0]``."""
    if constrain_first is not None:
        y = y - design[:, 0] * constrain_first
        design = design[:, 1:]
    w = 1.0 / se
    a = design * w[:, None]
    col = np.linalg.norm(a, axis=0)
    cond = np.linalg.cond(a / col)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(f"design condition number {cond:.3g} exceeds {MAX_CONDITION:g}; choose other abscissae")
    scaled = a / col
    beta_s, *_ = np.linalg.lstsq(scaled, y * w, rcond=None)
    cov_s = np.linalg.inv(scaled.T @ scaled)
    beta = beta_s / col
    cov = cov_s / np.outer(col, col)
    if constrain_first is not None:
        beta = np.concatenate([[constrain_first], beta])
        full = np.zeros((beta.size, beta.size))
        full[1:, 1:] = cov
        cov = full
    return beta, cov


def fit_steiner(body: ConvexBody, radii=None, n_per_radius: int = 10**6, seed=None, constrain_v0: bool = False) -> FittedProfile:
    """Recover ``(v_0..v_d)`` from parallel volumes: columns are ``kappa_{d-k} r^{d-k}``."""
    seed = as_seed(seed)
    d = body.dim
    radii = default_radii(body) if radii is None else np.asarray(radii, dtype=float)
    if np.unique(radii).size < d + 1 - int(constrain_v0):
        raise InputError(f"need at least {d + 1} distinct radii")
    estimates = [estimate_parallel_volume(body, r, n_per_radius, seed.child(j)) for j, r in enumerate(radii)]
    y = np.array([e.value for e in estimates])
    se = np.array([max(e.stderr, 1e-300) for e in estimates])
    if np.any(se <= 1e-300):
        raise InputError("a radius produced a zero-variance estimate; use larger radii or more samples")
    k = np.arange(d + 1)
    design = kappa(d - k)[None, :] * radii[:, None] ** (d - k)[None, :]
    beta, cov = _wls(design, y, se, 1.0 if constrain_v0 else None)
    return FittedProfile(beta, cov, radii, estimates)


@dataclass(frozen=True)
class WillsEstimate:
    lam: float
    value: float
    stderr: float
    n: int
    ess: float


def estimate_wills_scaled(body: ConvexBody, lambdas, n: int, seed=None) -> list[WillsEstimate]:
    """Importance-sampling estimates of ``W(lam K) = ∫ exp(-pi dist^2(x, lam K)) dx``.

    The proposal is an isotropic Gaussian at ``lam * center`` whose variance
    adds the Gaussian tail variance ``1/(2 pi)`` to the per-coordinate spread
    ``(lam R)^2 / d`` of the body, inflated by ``1.2^2``.
    """
    seed = as_seed(seed)
    if n <= 0:
        raise InputError("n must be positive")
    out = []
    d = body.dim
    rad = enclosing_radius(body)
    for j, lam in enumerate(np.atleast_1d(np.asarray(lambdas, dtype=float))):
        if not lam > 0:
            raise InputError("lambda must be positive")
        s = 1.2 * math.sqrt(1.0 / (2 * math.pi) + (lam * rad) ** 2 / d)
        mu = lam * body.center
        log_norm = d * math.log(s * math.sqrt(2 * math.pi))

        def job(rng, size, _, lam=lam, s=s, mu=mu, log_norm=log_norm):
            z = rng.standard_normal((size, d))
            x = mu + s * z
            dist = lam * project_many(body, x / lam)[1]
            logw = -math.pi * dist**2 + 0.5 * np.einsum("ij,ij->i", z, z) + log_norm
            w = np.exp(logw)
            return w.sum(), (w * w).sum()

        parts = map_chunks(job, n, seed.child(j))
        s1 = pairwise_sum(p[0] for p in parts)
        s2 = pairwise_sum(p[1] for p in parts)
        mean = s1 / n
        var = max(s2 / n - mean * mean, 0.0)
        ess = s1 * s1 / s2 if s2 > 0 else 0.0
        if ess < 0.01 * n:
            raise ProposalQualityError(f"effective sample size {ess:.0f} below 1% of n at lambda={lam:g}", ess)
        out.append(WillsEstimate(float(lam), mean, math.sqrt(var / n), int(n), ess))
    return out


def recover_from_wills(estimates: list[WillsEstimate], d: int) -> FittedProfile:
    """Solve ``W(lam) = sum_k lam^k v_k`` by weighted least squares in ``lam``."""
    lams = np.array([e.lam for e in estimates])
    if np.unique(lams).size < d + 1:
        raise InputError(f"need at least {d + 1} distinct lambdas")
    y = np.array([e.value for e in estimates])
    se = np.array([e.stderr for e in estimates])
    design = lams[:, None] ** np.arange(d + 1)[None, :]
    beta, cov = _wls(design, y, se)
    return FittedProfile(beta, cov, lams, list(estimates))


# --------------------------------------------------------- surface slices


def tilt_for_mean_h(half_widths, target_h: float) -> float:
    """Exponential tilt ``t`` whose tilted box law has ``E[H] = target_h``."""

    def mean_h(t):
        q, _, _ = tilt_parameters(half_widths, t)
        return float(np.sum(1.0 - q)) / (2.0 * (1.0 + t)) - target_h

    lo, hi = -1.0 + 1e-12, 1.0
    while mean_h(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise InputError("target H too small for tilting")
    return float(brentq(mean_h, lo, hi, xtol=1e-14))


@dataclass(frozen=True)
class SliceEstimate:
    r: float
    width: float
    probs: np.ndarray
    stderr: np.ndarray
    theory: np.ndarray | None
    tv: float | None
    hits: int
    ess: float
    binning_bias: float | None
    sampler: str


def estimate_surface_slice(
    body: ConvexBody,
    r: float,
    n: int,
    seed=None,
    profile: IntrinsicProfile | None = None,
    min_hits: int = 1000,
    rel_width: float = 0.05,
    tilt: bool = True,
    **mala_kw,
) -> SliceEstimate:
    """Face-dimension histogram of ``X_K`` given ``dist(X_K, K) ∈ [r - w, r + w]``, ``w = rel_width * r``.

    Boxes are sampled exactly, optionally under an exponential tilt that moves
    the distance toward ``r`` (draws then carry exact importance weights);
    H-polytopes use MALA. The histogram is compared with ``surface_law(1/r)``.
    """
    if not r > 0:
        raise InputError("r must be positive")
    if body.kind not in ("box", "hpolytope"):
        raise InputError("surface slices need a polytope or a box")
    seed = as_seed(seed)
    width = rel_width * r
    if body.kind == "box":
        t = tilt_for_mean_h(body.half_widths, math.pi * r * r) if tilt else 0.0
        batch = sample_box_exact(body, n, seed, tilt=t)
    else:
        batch = sample_mala(body, n, seed=seed, **mala_kw)
    x = batch.values
    dist = project_many(body, x)[1]
    band = np.abs(dist - r) <= width
    logw = batch.log_weights[band] if batch.log_weights is not None else np.zeros(int(band.sum()))
    hits = int(band.sum())
    if hits == 0:
        raise BandWidthError(f"no draws within {width:g} of r={r:g}", 0)
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / (w * w).sum())
    if ess < min_hits:
        raise BandWidthError(f"only {ess:.0f} effective hits in the band around r={r:g} (need {min_hits})", ess)
    dims = face_dims(body, x[band], strict=False)
    d = body.dim
    onehot = dims[:, None] == np.arange(d)[None, :]
    total = w.sum()
    probs = (w[:, None] * onehot).sum(axis=0) / total
    stderr = np.sqrt((w[:, None] ** 2 * (onehot - probs[None, :]) ** 2).sum(axis=0)) / total
    profile = profile if profile is not None else profile_of(body)
    theory = tv = bias = None
    if profile is not None:
        theory = surface_law(profile, 1.0 / r).probs
        tv = 0.5 * float(np.abs(probs - theory).sum())
        inner = surface_law(profile, 1.0 / max(r - width, 1e-12)).probs
        outer = surface_law(profile, 1.0 / (r + width)).probs
        bias = 0.5 * float(np.abs(inner - outer).sum())
    return SliceEstimate(float(r), width, probs, stderr, theory, tv, hits, ess, bias, batch.sampler)
