"""Monte Carlo estimators for the Stein bound on ``d_TV(F_K, N(0, 1))``.

Conventions: ``phi(x) = pi dist^2(x, K) + log W(K)``, ``grad phi = 2 pi (x - Pi(x))``,
``Hess phi = 2 pi (I - grad Pi)`` and ``H(y) = |y|^2 / (4 pi)``, so that
``H(grad phi(x)) = pi dist^2(x, K)``. ``sigma2`` is ``Var(pi dist^2)``.

The A-term integrand collapses in closed form. Because ``grad Pi(x)`` kills
``x - Pi(x)``, ``Hess phi(X) grad H(Y) = Y``. The time integrals are
``∫ e^{-2t} dt = 1/2`` and ``∫ e^{-t} sqrt(1 - e^{-2t}) dt = pi/4``, which leaves

    S(X) = (|Y|^2 / 2 + (pi/4) <Y, m>) / (2 pi),   m = E[Y],

and ``A = (2 / sigma2) sd(S)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammainc

from hwlab.bodies import ConvexBody, project_many
from hwlab.errors import DegenerateError, InputError
from hwlab.intrinsic import IntrinsicProfile, kappa, log_kappa, moments, profile_ball, profile_of, surface_moments, vk_law
from hwlab.rng import as_seed
from hwlab.sampling import map_box, map_points, sample_hk_mixture, sample_mala, tilt_parameters

B_CONSTANT = 1.14


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def to_json(self) -> dict:
        return {"value": self.value, "stderr": self.stderr}


def _variance_with_stderr(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    c = x - x.mean()
    var = float(np.mean(c * c)) * n / (n - 1)
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / n)


def _sd_with_stderr(x: np.ndarray) -> tuple[float, float]:
    var, se = _variance_with_stderr(x)
    sd = math.sqrt(var)
    return sd, (se / (2 * sd) if sd > 0 else 0.0)


def _sigma2(body, profile, sigma2):
    if sigma2 is not None:
        return float(sigma2)
    profile = profile if profile is not None else profile_of(body)
    if profile is None:
        return None
    return moments(profile).sigma2


def _point_chunks(body, n, seed, fn, **mala_kw):
    """``fn(points, h)`` over exact chunks, or over one MALA batch for H-polytopes."""
    if body.kind in ("box", "ball"):
        return map_points(body, n, seed, fn)
    pts = sample_mala(body, n, seed=seed, **mala_kw).values
    dist = project_many(body, pts)[1]
    return [fn(pts, math.pi * dist**2)]


def gradient_phi(body: ConvexBody, x: np.ndarray) -> np.ndarray:
    p, _ = project_many(body, x)
    return 2.0 * math.pi * (x - p)


# ---------------------------------------------------------------- A term


@dataclass(frozen=True)
class AEstimate:
    value: float
    stderr: float
    sigma2: float
    m: np.ndarray
    sd_s: float


def estimate_A(body: ConvexBody, n: int, seed=None, profile: IntrinsicProfile | None = None, sigma2=None, **mala_kw) -> AEstimate:
    """Collapsed estimator ``(2/sigma2) sd(S)``; ``m`` comes from an independent half of the draws."""
    seed = as_seed(seed)
    n1 = n // 2
    n2 = n - n1
    sums = _point_chunks(body, n1, seed.child(0), lambda x, h: gradient_phi(body, x).sum(axis=0), **mala_kw)
    m = np.sum(sums, axis=0) / n1

    def s_values(x, h):
        y = gradient_phi(body, x)
        return (0.5 * np.einsum("ij,ij->i", y, y) + 0.25 * math.pi * (y @ m)) / (2 * math.pi), h

    parts = _point_chunks(body, n2, seed.child(1), s_values, **mala_kw)
    s = np.concatenate([p[0] for p in parts])
    h = np.concatenate([p[1] for p in parts])
    sig2 = _sigma2(body, profile, sigma2)
    if sig2 is None:
        sig2 = float(np.var(h, ddof=1))
    sd, se = _sd_with_stderr(s)
    scale = 2.0 / sig2
    return AEstimate(scale * sd, scale * se, sig2, m, sd)


def hessian_phi(body: ConvexBody, x: np.ndarray) -> np.ndarray:
    """Explicit ``Hess phi = 2 pi (I - grad Pi)`` per point, shape ``(n, d, d)``."""
    n, d = x.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    if body.kind == "box":
        inside = np.abs(x - body.center) <= body.half_widths
        jac = np.zeros((n, d, d))
        idx = np.arange(d)
        jac[:, idx, idx] = inside
        return 2 * math.pi * (eye - jac)
    if body.kind == "ball":
        if body.degenerate:
            return 2 * math.pi * eye.copy()
        rel = x - body.center
        r = np.linalg.norm(rel, axis=1)
        u = rel / r[:, None]
        outer = np.where(r > body.radius, body.radius / r, 1.0)
        jac = np.where(
            (r > body.radius)[:, None, None],
            outer[:, None, None] * (eye - u[:, :, None] * u[:, None, :]),
            eye,
        )
        return 2 * math.pi * (eye - jac)
    raise InputError("explicit Hessian available for boxes and balls")


def estimate_A_nested(body: ConvexBody, n_outer: int, n_inner: int, seed=None, sigma2=None) -> Estimate:
    """Brute-force two-level Monte Carlo of the A-term.

    Uses the explicit Hessian, numerical time quadrature and ``n_inner``
    fresh draws of ``X_inf`` for every outer draw.
    """
    seed = as_seed(seed)
    d = body.dim
    outer = np.concatenate(map_points(body, n_outer, seed.child(0), lambda x, h: x))
    inner = np.concatenate(map_points(body, n_outer * n_inner, seed.child(1), lambda x, h: x))
    y0 = gradient_phi(body, outer)
    m_inf = gradient_phi(body, inner).reshape(n_outer, n_inner, d).mean(axis=1)
    a = np.einsum("nij,nj->ni", hessian_phi(body, outer), y0 / (2 * math.pi))
    i_decay = integrate.quad(lambda t: math.exp(-2 * t), 0, np.inf)[0]
    i_mix = integrate.quad(lambda t: math.exp(-t) * math.sqrt(-math.expm1(-2 * t)), 0, np.inf)[0]
    vals = (i_decay * np.einsum("ij,ij->i", a, y0) + i_mix * np.einsum("ij,ij->i", a, m_inf)) / (2 * math.pi)
    sig2 = _sigma2(body, None, sigma2)
    sd, se = _sd_with_stderr(vals)
    return Estimate(2.0 / sig2 * sd, 2.0 / sig2 * se)


# ---------------------------------------------------------------- B term


def ep_of_distance(profile: IntrinsicProfile, dist: np.ndarray) -> np.ndarray:
    """``e_p(1/dist)`` with ``dist = 0`` mapped to ``e_p(inf) = d - 1``."""
    dist = np.asarray(dist, dtype=float)
    with np.errstate(divide="ignore"):
        s = np.where(dist > 0, 1.0 / np.where(dist > 0, dist, 1.0), np.inf)
    return surface_moments(profile, s)[0]


def _bootstrap_sd_stderr(x: np.ndarray, seed, reps: int = 200) -> float:
    rng = seed.generator(0)
    sds = np.empty(reps)
    for b in range(reps):
        sds[b] = np.std(x[rng.integers(0, x.size, x.size)], ddof=1)
    return float(np.std(sds, ddof=1))


@dataclass(frozen=True)
class BEstimate:
    value: float
    stderr: float
    sigma2: float
    sd_ep: float
    sd_ep_stderr: float
    route: str


def estimate_B(
    body: ConvexBody | None,
    profile: IntrinsicProfile | None,
    n: int,
    seed=None,
    sigma2=None,
    route: str = "mixture",
    bootstrap: int = 200,
    **mala_kw,
) -> BEstimate:
    """``(1.14 / sigma) sd(e_p(1 / dist))`` with distances from the mixture or from point draws."""
    seed = as_seed(seed)
    if profile is None:
        raise InputError("estimate_B needs an intrinsic-volume profile (exact or fitted)")
    if route == "mixture":
        h = sample_hk_mixture(vk_law(profile), profile.d, n, seed).values
        dist = np.sqrt(h / math.pi)
    elif route == "geometric":
        if body is None:
            raise InputError("geometric route needs a body")
        parts = _point_chunks(body, n, seed, lambda x, h: np.sqrt(h / math.pi), **mala_kw)
        dist = np.concatenate(parts)
    else:
        raise InputError(f"unknown route {route!r}")
    ep = ep_of_distance(profile, dist)
    sig2 = float(sigma2) if sigma2 is not None else moments(profile).sigma2
    sd = float(np.std(ep, ddof=1))
    se = _bootstrap_sd_stderr(ep, seed.child(7), bootstrap) if sd > 0 else 0.0
    scale = B_CONSTANT / math.sqrt(sig2)
    return BEstimate(scale * sd, scale * se, sig2, sd, se, route)


# ------------------------------------------------------- IBP and BL checks

TEST_FUNCTIONS = ("identity", "constant", "cubic")


@dataclass(frozen=True)
class IbpResult:
    test_fn: str
    lhs: float
    rhs: float
    residual: float
    stderr: float

    @property
    def z(self) -> float:
        return self.residual / self.stderr if self.stderr > 0 else (0.0 if self.residual == 0 else math.inf)


def check_ibp(body: ConvexBody, test_fn: str, n: int, seed=None, **mala_kw) -> IbpResult:
    """Monte Carlo residual of ``E<f(X), grad phi(X)> - E[Tr grad f(X)]``."""
    if test_fn not in TEST_FUNCTIONS:
        raise InputError(f"test_fn must be one of {TEST_FUNCTIONS}")
    seed = as_seed(seed)
    d = body.dim

    def job(x, h):
        y = gradient_phi(body, x)
        if test_fn == "identity":
            lhs = np.einsum("ij,ij->i", x, y)
            rhs = np.full(x.shape[0], float(d))
        elif test_fn == "constant":
            lhs = y.sum(axis=1)
            rhs = np.zeros(x.shape[0])
        else:
            sq = np.einsum("ij,ij->i", x, x)
            lhs = sq * np.einsum("ij,ij->i", x, y)
            rhs = (d + 2) * sq
        return lhs, rhs

    parts = _point_chunks(body, n, seed, job, **mala_kw)
    lhs = np.concatenate([p[0] for p in parts])
    rhs = np.concatenate([p[1] for p in parts])
    diff = lhs - rhs
    return IbpResult(test_fn, float(lhs.mean()), float(rhs.mean()), float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n)))


BL_TEST_FUNCTIONS = ("sum", "sqnorm", "dist2")


@dataclass(frozen=True)
class BLResult:
    test_fn: str
    epsilon: float
    variance: float
    variance_stderr: float
    bound: float
    bound_stderr: float

    @property
    def stderr(self) -> float:
        return math.hypot(self.variance_stderr, self.bound_stderr)

    @property
    def passed(self) -> bool:
        return self.variance <= self.bound + 4.0 * self.stderr

    @property
    def gap(self) -> float:
        return self.bound - self.variance


def _tilted_coordinate(rng, n, center, hw, eps):
    """1-D draws with density ∝ exp(-pi (|u - c| - T)_+^2 - eps pi u^2) by rejection from the box marginal."""
    out = np.empty(0)
    while out.size < n:
        need = n - out.size
        m = max(1024, int(need * 2.5))
        if hw > 0:
            q, sd, _ = tilt_parameters(np.array([hw]), 0.0)
            u = rng.random(m)
            z = rng.standard_normal(m)
            inside = u < q[0]
            sign = np.where((u - q[0]) / (1 - q[0]) < 0.5, -1.0, 1.0)
            cand = center + np.where(inside, hw * (2 * u / q[0] - 1), sign * (hw + sd * np.abs(z)))
        else:
            cand = center + rng.standard_normal(m) / math.sqrt(2 * math.pi)
        keep = rng.random(m) < np.exp(-eps * math.pi * cand * cand)
        out = np.concatenate([out, cand[keep]])
    return out[:n]


def brascamp_lieb_check(body: ConvexBody, epsilon: float, test_fn: str, n: int, seed=None) -> BLResult:
    """Compare ``Var f(X_eps)`` with ``E[grad f^T (Hess phi_eps)^{-1} grad f]``.

    ``X_eps`` has density ∝ ``exp(-pi dist^2(x, K) - eps pi |x|^2)``; for a
    box its Hessian is diagonal, ``2 pi (1 + eps)`` on clamped coordinates and
    ``2 pi eps`` on interior ones.
    """
    if test_fn not in BL_TEST_FUNCTIONS:
        raise InputError(f"test_fn must be one of {BL_TEST_FUNCTIONS}")
    if epsilon < 0:
        raise InputError("epsilon must be nonnegative")
    if body.kind == "box":
        hw, center = body.half_widths, body.center
        if epsilon == 0:
            raise DegenerateError("epsilon = 0 leaves a singular Hessian on the interior of a box")
    elif body.kind == "ball" and body.degenerate:
        hw, center = np.zeros(body.dim), body.center
    else:
        raise InputError("Brascamp-Lieb check needs a box or the point body")
    seed = as_seed(seed)
    rng = seed.generator(0)
    d = body.dim
    x = np.column_stack([_tilted_coordinate(rng, n, center[i], hw[i], epsilon) for i in range(d)])
    clamped = np.abs(x - center) > hw
    hdiag = 2 * math.pi * np.where(clamped, 1.0 + epsilon, epsilon)
    if test_fn == "sum":
        f = x.sum(axis=1)
        grad = np.ones_like(x)
    elif test_fn == "sqnorm":
        f = np.einsum("ij,ij->i", x, x)
        grad = 2 * x
    else:
        p = np.clip(x, center - hw, center + hw)
        f = math.pi * np.einsum("ij,ij->i", x - p, x - p)
        grad = 2 * math.pi * (x - p)
    var, var_se = _variance_with_stderr(f)
    integrand = (grad * grad / hdiag).sum(axis=1)
    return BLResult(test_fn, float(epsilon), var, var_se, float(integrand.mean()), float(integrand.std(ddof=1) / math.sqrt(n)))


# ---------------------------------------------------------------- report


@dataclass
class SteinReport:
    d: int
    body: str
    sigma: float
    A: Estimate
    B: Estimate
    bound: float
    bound_lemma: float
    empirical_distance: float
    ks_distance: float
    n: int
    extra: dict = field(default_factory=dict)

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.A.stderr, self.B.stderr)

    @property
    def accepted(self) -> bool:
        return self.bound >= self.empirical_distance - 4.0 * self.combined_stderr

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "body": self.body,
            "sigma": self.sigma,
            "A": self.A.to_json(),
            "B": self.B.to_json(),
            "bound": self.bound,
            "bound_lemma_constant": self.bound_lemma,
            "empirical_tv_proxy": self.empirical_distance,
            "empirical_ks": self.ks_distance,
            "combined_stderr": self.combined_stderr,
            "accepted": self.accepted,
            "n": self.n,
            **self.extra,
        }


def stein_bound(body: ConvexBody, profile: IntrinsicProfile | None, n: int, seed=None, **mala_kw) -> SteinReport:
    """Assemble ``A + B`` and set it against the empirical distance of ``F_K`` to ``N(0, 1)``.

    ``bound_lemma`` doubles the A prefactor (``4 / sigma2`` instead of ``2 / sigma2``).
    """
    from hwlab.cltlab import ks_distance_to_gaussian, standardize, tv_distance_histogram

    seed = as_seed(seed)
    profile = profile if profile is not None else profile_of(body)
    if profile is None:
        raise InputError("stein_bound needs a profile (exact or fitted)")
    mom = moments(profile)
    a = estimate_A(body, n, seed.child(0), profile=profile, **mala_kw)
    b = estimate_B(body, profile, n, seed.child(1), **mala_kw)
    h = np.concatenate(_point_chunks(body, n, seed.child(2), lambda x, hh: hh, **mala_kw))
    f = standardize(h, mom)
    tv = tv_distance_histogram(f)
    ks = ks_distance_to_gaussian(f).statistic
    return SteinReport(
        d=body.dim,
        body=body.tag,
        sigma=math.sqrt(mom.sigma2),
        A=Estimate(a.value, a.stderr),
        B=Estimate(b.value, b.stderr),
        bound=a.value + b.value,
        bound_lemma=2 * a.value + b.value,
        empirical_distance=tv,
        ks_distance=ks,
        n=int(n),
        extra={"A_sigma": a.value * math.sqrt(mom.sigma2), "B_sqrt_d": b.value * math.sqrt(body.dim)},
    )


# --------------------------------------------------- proof-step checks


def varp_upper_bound(d: int, s, alpha: float = 0.0, c: float = 1.0):
    """``s c d^alpha v_1(B^d) (kappa_{d-1}/kappa_d) (d-1)/d`` for bodies inside ``c d^alpha B^d``."""
    v1_ball = math.exp(profile_ball(d, 1.0).log_v[1])
    ratio = math.exp(log_kappa(d - 1) - log_kappa(d))
    return np.asarray(s, dtype=float) * c * d**alpha * v1_ball * ratio * (d - 1) / d


def tail_probability_exact(profile: IntrinsicProfile, rho: float) -> float:
    """``P(dist(X_K, K) <= rho)`` from the Gamma mixture: ``sum_k P(V=k) P(Gamma((d-k)/2) <= pi rho^2)``."""
    law = vk_law(profile)
    d = profile.d
    k = np.arange(d + 1)
    shape = 0.5 * (d - k)
    cdf = np.where(shape > 0, gammainc(np.where(shape > 0, shape, 1.0), math.pi * rho * rho), 1.0)
    return float(np.dot(law.probs, cdf))


def tail_probability_is(box: ConvexBody, rho: float, n: int, seed=None) -> Estimate:
    """Exponential-tilting estimate of ``P(dist(X_K, K) <= rho)`` for a box.

    The tilt is chosen so that the tilted mean of ``H`` equals ``pi rho^2``.
    """
    from hwlab.volumetry import tilt_for_mean_h

    target = math.pi * rho * rho
    t = tilt_for_mean_h(box.half_widths, target)

    def job(x, h, logw):
        w = np.where(h <= target, np.exp(logw), 0.0)
        return w.sum(), (w * w).sum()

    parts = map_box(box, n, seed, job, tilt=t)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return Estimate(mean, math.sqrt(var / n))


def count_tail_hits(box: ConvexBody, rho: float, n: int, seed=None) -> int:
    """Plain box-exact count of draws with ``dist <= rho``."""
    target = math.pi * rho * rho
    return int(sum(map_box(box, n, seed, lambda x, h, lw: int(np.count_nonzero(h <= target)))))


def ball_ep_closed_form(d: int, dist) -> np.ndarray:
    """``e_p(1/r) = (d - 1) / (1 + r)`` for the unit ball."""
    return (d - 1) / (1.0 + np.asarray(dist, dtype=float))


__all__ = [
    "estimate_A",
    "estimate_A_nested",
    "estimate_B",
    "check_ibp",
    "brascamp_lieb_check",
    "stein_bound",
    "varp_upper_bound",
    "tail_probability_exact",
    "tail_probability_is",
    "count_tail_hits",
    "kappa",
]
