"""Distances between standardized information content and the standard Gaussian, and rate fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from hwlab.bodies import ConvexBody
from hwlab.errors import DegenerateError, InputError
from hwlab.intrinsic import IntrinsicProfile, MomentSummary, moments, profile_of, vk_law
from hwlab.rng import as_seed
from hwlab.sampling import SampleBatch, sample_hk_mixture, sample_mala, h_from_points

DKW_ALPHA = 0.01


def standardize(h, moments_: MomentSummary | str = "sample") -> np.ndarray:
    """``F = (H - delta) / sqrt(sigma2)``.

    ``H = pi dist^2`` so the factor ``pi`` cancels against the standardization
    of ``dist^2``. Pass ``"sample"`` to use the sample mean and variance.
    """
    values = h.values if isinstance(h, SampleBatch) else np.asarray(h, dtype=float)
    if isinstance(moments_, str):
        if moments_ != "sample":
            raise InputError("moments must be a MomentSummary or 'sample'")
        if values.size < 100:
            raise InputError("sample moments need at least 100 values")
        mean, var = float(values.mean()), float(values.var(ddof=1))
    else:
        mean, var = moments_.delta, moments_.sigma2
    if not var > 0:
        raise DegenerateError("zero variance: cannot standardize")
    return (values - mean) / math.sqrt(var)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    band: float
    n: int


def dkw_band(n: int, alpha: float = DKW_ALPHA) -> float:
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def ks_distance_to_gaussian(f) -> KsResult:
    f = np.asarray(f, dtype=float)
    if f.size < 10:
        raise InputError("KS needs at least 10 values")
    stat = float(stats.kstest(f, "norm", method="asymp").statistic)
    return KsResult(stat, dkw_band(f.size), int(f.size))


def tv_distance_histogram(f, bins: int | None = None) -> float:
    """Half the L1 gap between bin frequencies and Gaussian bin masses over equal-probability bins.

    Binning can only merge mass, so this underestimates the true total
    variation between the underlying law and ``N(0, 1)``.
    """
    f = np.asarray(f, dtype=float)
    n = f.size
    if n < 1000:
        raise InputError("TV proxy needs at least 1000 values")
    bins = bins or math.ceil(n ** (1.0 / 3.0))
    edges = ndtri(np.arange(1, bins) / bins)
    counts = np.bincount(np.searchsorted(edges, f, side="right"), minlength=bins)
    return 0.5 * float(np.abs(counts / n - 1.0 / bins).sum())


def _phi_quantile_integral(u):
    """Antiderivative of the Gaussian quantile: ``-phi(Phi^{-1}(u))`` (0 at the endpoints)."""
    u = np.asarray(u, dtype=float)
    inner = (u > 0) & (u < 1)
    q = ndtri(np.where(inner, u, 0.5))
    return np.where(inner, -np.exp(-0.5 * q * q) / math.sqrt(2 * math.pi), 0.0)


def wasserstein1_to_gaussian(f) -> float:
    """Exact ``W1`` between the empirical law of ``f`` and ``N(0, 1)``: ``∫ |F_n^{-1} - Phi^{-1}|``."""
    x = np.sort(np.asarray(f, dtype=float))
    n = x.size
    a = np.arange(n) / n
    b = np.arange(1, n + 1) / n
    c = np.clip(ndtr(x), a, b)
    ga, gb, gc = _phi_quantile_integral(a), _phi_quantile_integral(b), _phi_quantile_integral(c)
    below = x * (c - a) - (gc - ga)
    above = (gb - gc) - x * (b - c)
    return float(np.sum(below + above))


@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float
    intercept: float


def rate_fit(ds, distances) -> RateFit:
    ds = np.asarray(ds, dtype=float)
    y = np.asarray(distances, dtype=float)
    if ds.size < 3 or ds.size != y.size:
        raise InputError("rate fit needs at least 3 matching grid points")
    if np.any(y <= 0) or np.any(ds <= 0):
        raise InputError("rate fit needs positive dimensions and distances")
    res = stats.linregress(np.log(ds), np.log(y))
    return RateFit(float(res.slope), float(res.stderr), float(res.intercept))


def direct_remainders(profile: IntrinsicProfile) -> tuple[float, float]:
    """``(tau2 / (tau2 + 4 delta), E[V] / (2 delta))``; both vanish when ``V_K`` is negligible next to ``H_K``."""
    m = moments(profile)
    return m.tau2 / (m.tau2 + 4 * m.delta), m.mean_v / (2 * m.delta)


# ----------------------------------------------------------- experiments


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    alpha: float = 0.0
    c: float | None = None
    bodies: tuple = ()

    def __post_init__(self):
        if self.kind not in ("cube", "ball", "polytope"):
            raise InputError("family must be cube, ball or polytope")
        if self.kind == "polytope" and not self.bodies:
            raise InputError("polytope family needs an explicit body list")

    @property
    def scale(self) -> float:
        if self.c is not None:
            return float(self.c)
        return 0.5 if self.kind == "cube" else 1.0

    def body(self, d: int) -> ConvexBody:
        size = self.scale * d**self.alpha
        if self.kind == "cube":
            return ConvexBody.cube(d, half_width=size)
        if self.kind == "ball":
            return ConvexBody.ball(np.zeros(d), size)
        for b in self.bodies:
            if b.dim == d:
                return b
        raise InputError(f"no polytope of dimension {d} in the family")

    @property
    def tag(self) -> str:
        if self.kind == "polytope":
            return "polytope"
        rule = "half_width" if self.kind == "cube" else "radius"
        return f"{self.kind}({rule}={self.scale:g}*d^{self.alpha:g})"


@dataclass
class CltRow:
    d: int
    ks: float
    ks_band: float
    tv_proxy: float
    w1: float
    n: int
    mean_f: float
    var_f: float

    def scaled(self, power: float) -> float:
        return self.d**power * self.ks


@dataclass
class CltReport:
    family: str
    alpha: float
    c: float
    rows: list
    fit: RateFit | None
    extra: dict = field(default_factory=dict)

    @property
    def ds(self) -> np.ndarray:
        return np.array([r.d for r in self.rows])

    @property
    def ks(self) -> np.ndarray:
        return np.array([r.ks for r in self.rows])

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "alpha": self.alpha,
            "c": self.c,
            "grid": [r.d for r in self.rows],
            "rows": [vars(r) for r in self.rows],
            "slope": None if self.fit is None else self.fit.slope,
            "slope_stderr": None if self.fit is None else self.fit.stderr,
            "max_scaled_ks": max(r.scaled(0.5 - self.alpha) for r in self.rows) if self.rows else None,
            **self.extra,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d", "ks", "ks_band", "tv_proxy", "w1", "n"])
        for r in self.rows:
            w.writerow([r.d, repr(r.ks), repr(r.ks_band), repr(r.tv_proxy), repr(r.w1), r.n])
        return buf.getvalue()


def measure(f: np.ndarray, d: int) -> CltRow:
    ks = ks_distance_to_gaussian(f)
    return CltRow(
        d=int(d),
        ks=ks.statistic,
        ks_band=ks.band,
        tv_proxy=tv_distance_histogram(f),
        w1=wasserstein1_to_gaussian(f),
        n=int(f.size),
        mean_f=float(f.mean()),
        var_f=float(f.var(ddof=1)),
    )


def run_family_experiment(family: FamilySpec, dgrid, n: int, seed=None, **mala_kw) -> CltReport:
    """One row per dimension: build the profile, draw ``H``, standardize with population moments, measure.

    Cubes and balls use the Gamma mixture over ``V_K`` (constant cost per
    draw); polytopes use MALA and sample moments.
    """
    seed = as_seed(seed)
    rows = []
    for j, d in enumerate(dgrid):
        body = family.body(int(d))
        sub = seed.child(j)
        profile = profile_of(body)
        if profile is not None:
            h = sample_hk_mixture(vk_law(profile), body.dim, n, sub, body=body.tag)
            f = standardize(h, moments(profile))
        else:
            h = h_from_points(body, sample_mala(body, n, seed=sub, **mala_kw))
            f = standardize(h, "sample")
        rows.append(measure(f, body.dim))
    fit = rate_fit([r.d for r in rows], [r.ks for r in rows]) if len(rows) >= 3 else None
    return CltReport(family.tag, family.alpha, family.scale, rows, fit)


def profile_for(family: FamilySpec, d: int) -> IntrinsicProfile | None:
    return profile_of(family.body(d))
