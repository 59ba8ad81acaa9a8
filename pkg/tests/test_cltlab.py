import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from hwlab.bodies import ConvexBody
from hwlab.cltlab import (
    FamilySpec,
    direct_remainders,
    dkw_band,
    ks_distance_to_gaussian,
    rate_fit,
    run_family_experiment,
    standardize,
    tv_distance_histogram,
    wasserstein1_to_gaussian,
)
from hwlab.errors import DegenerateError, InputError
from hwlab.intrinsic import moments, profile_ball, profile_box, vk_law
from hwlab.rng import SeedSpec
from hwlab.sampling import sample_hk_mixture


# -------------------------------------------------------------- standardize


def test_standardize_gaussian_is_nearly_identity(rng):
    g = rng.standard_normal(100_000)
    f = standardize(g)
    np.testing.assert_allclose(f, g, atol=0.03)


def test_standardize_unit_cube_population_moments():
    d = 64
    prof = profile_box(np.ones(d))
    m = moments(prof)
    assert (m.delta, m.sigma2) == pytest.approx((16.0, 20.0))
    h = sample_hk_mixture(vk_law(prof), d, 200_000, SeedSpec(1))
    f = standardize(h, m)
    n = f.size
    assert abs(f.mean()) <= 4 / math.sqrt(n)
    kurt = stats.kurtosis(f, fisher=False)
    assert abs(f.var(ddof=1) - 1) <= 4 * math.sqrt((kurt - 1) / n)


def test_standardize_errors():
    with pytest.raises(DegenerateError):
        standardize(np.full(500, 3.0))
    with pytest.raises(InputError):
        standardize(np.arange(50.0))
    with pytest.raises(InputError):
        standardize(np.arange(500.0), "population")


# ---------------------------------------------------------------------- KS


def test_ks_null_case(rng):
    res = ks_distance_to_gaussian(rng.standard_normal(1_000_000))
    assert res.statistic <= 0.002
    assert res.statistic <= res.band
    assert res.band == pytest.approx(math.sqrt(math.log(200) / 2e6))


def test_ks_point_mass_at_median():
    assert ks_distance_to_gaussian(np.zeros(1000)).statistic == pytest.approx(0.5)


def test_ks_standardized_exponential_matches_cdf_grid(rng):
    x = np.linspace(-1.0, 12.0, 1_000_001)
    oracle = np.max(np.abs(stats.expon.cdf(1 + x) - stats.norm.cdf(x)))
    f = rng.exponential(size=200_000) - 1.0
    res = ks_distance_to_gaussian(f)
    assert abs(res.statistic - oracle) <= res.band


def test_ks_too_few_values():
    with pytest.raises(InputError):
        ks_distance_to_gaussian(np.zeros(5))


def test_dkw_band_coverage(rng):
    """Over repeated null draws the band is exceeded in roughly 1% of runs at most."""
    n, reps = 500, 400
    exceed = sum(ks_distance_to_gaussian(rng.standard_normal(n)).statistic > dkw_band(n) for _ in range(reps))
    assert exceed <= 12


# ---------------------------------------------------------------------- TV


def test_tv_null_case(rng):
    assert tv_distance_histogram(rng.standard_normal(1_000_000)) <= 0.01


@pytest.mark.parametrize("bins", [None, 10, 57])
def test_tv_point_mass(bins):
    n = 2000
    b = bins or math.ceil(n ** (1 / 3))
    assert tv_distance_histogram(np.zeros(n), bins) >= 1 - 1 / b - 1e-12


def _gamma2_tv_oracle():
    g = stats.gamma(2)
    r2 = math.sqrt(2)

    def gap(f):
        return abs(r2 * g.pdf(2 + r2 * f) - stats.norm.pdf(f))

    return 0.5 * (
        integrate.quad(gap, -np.inf, -r2)[0] + integrate.quad(gap, -r2, 8, limit=400)[0] + integrate.quad(gap, 8, np.inf)[0]
    )


def test_tv_standardized_gamma_against_quadrature():
    d = 4
    h = np.random.default_rng(5).gamma(d / 2, size=1_000_000)
    f = standardize(h, moments(profile_ball(d, 0.0)))
    assert abs(tv_distance_histogram(f) - _gamma2_tv_oracle()) <= 0.01


def test_tv_too_few_values():
    with pytest.raises(InputError):
        tv_distance_histogram(np.zeros(999))


# ---------------------------------------------------------------------- W1


def _w1_oracle(sample):
    """``∫ |F_n(x) - Phi(x)| dx`` by adaptive quadrature between order statistics."""
    x = np.sort(sample)
    n = x.size
    total = integrate.quad(stats.norm.cdf, -np.inf, x[0])[0] + integrate.quad(stats.norm.sf, x[-1], np.inf)[0]
    for k in range(1, n):
        total += integrate.quad(lambda t: abs(k / n - stats.norm.cdf(t)), x[k - 1], x[k])[0]
    return total


@pytest.mark.parametrize("shift", [0.0, 0.7])
def test_w1_against_integration_oracle(rng, shift):
    sample = rng.standard_normal(60) + shift
    assert wasserstein1_to_gaussian(sample) == pytest.approx(_w1_oracle(sample), abs=1e-8)


def test_w1_point_mass():
    assert wasserstein1_to_gaussian(np.zeros(10)) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-9)


@given(st.floats(-3, 3))
def test_w1_of_shift_for_large_sample(shift):
    g = np.random.default_rng(9).standard_normal(20_000)
    assert wasserstein1_to_gaussian(g + shift) == pytest.approx(abs(shift), abs=0.03)


# ---------------------------------------------------------------- rate fit


def test_rate_fit_synthetic():
    ds = 2.0 ** np.arange(4, 15, 2)
    a = rate_fit(ds, ds**-0.5)
    assert a.slope == pytest.approx(-0.5, abs=1e-12)
    assert a.stderr == pytest.approx(0.0, abs=1e-12)
    b = rate_fit(ds, 3 * ds**-0.25)
    assert b.slope == pytest.approx(-0.25, abs=1e-12)
    assert math.exp(b.intercept) == pytest.approx(3.0)


@pytest.mark.parametrize("ds,ys", [([1, 2], [1, 1]), ([1, 2, 3], [1, 0, 1]), ([1, 2, 3], [1, -1, 1]), ([1, 2, 3], [1, 2])])
def test_rate_fit_errors(ds, ys):
    with pytest.raises(InputError):
        rate_fit(ds, ys)


# ----------------------------------------------------- profile-only checks


def test_direct_remainders_inscribed_cube_family():
    """Cubes of half-width 1/sqrt(d) sit inside the unit ball; both remainders vanish."""
    prev = (1.0, 1.0)
    for d in 4 ** np.arange(2, 9):
        r1, r2 = direct_remainders(profile_box(np.full(d, 2 / math.sqrt(d))))
        assert r2 == pytest.approx(2 / math.sqrt(d), rel=1e-9)
        assert r1 < prev[0] and r2 < prev[1]
        prev = (r1, r2)
    assert max(prev) < 0.05


def test_direct_remainders_unit_cube_do_not_vanish():
    """The unit cube is only inside (sqrt(d)/2) B^d, so E V / (2 delta) stays at 1."""
    r1, r2 = direct_remainders(profile_box(np.ones(256)))
    assert r1 == pytest.approx(0.2)
    assert r2 == pytest.approx(1.0)


def test_first_intrinsic_volume_of_ball_family_is_sublinear():
    ratios = []
    for d in (16, 64, 256, 1024, 4096):
        v1 = math.exp(profile_ball(d, d**0.25).log_v[1])
        assert v1 == pytest.approx(math.sqrt(2 * math.pi) * d**0.75, rel=0.05)
        ratios.append(v1 / d)
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.32


# --------------------------------------------------------------- pipeline


@pytest.mark.parametrize(
    "prof,d",
    [
        (profile_box(np.ones(32)), 32),
        (profile_box(np.linspace(0.1, 3, 20)), 20),
        (profile_ball(50, 2.0), 50),
        (profile_ball(9, 0.0), 9),
    ],
)
def test_moment_closure(prof, d):
    h = sample_hk_mixture(vk_law(prof), d, 200_000, SeedSpec(d))
    f = standardize(h, moments(prof))
    n = f.size
    assert abs(f.mean()) <= 4 / math.sqrt(n)
    m4 = np.mean((f - f.mean()) ** 4)
    assert abs(f.var(ddof=1) - 1) <= 4 * math.sqrt((m4 - f.var() ** 2) / n)


def test_family_experiment_cube():
    rep = run_family_experiment(FamilySpec("cube"), [16, 64, 256], 100_000, SeedSpec(3))
    assert list(rep.ds) == [16, 64, 256]
    assert all(a > b for a, b in zip(rep.ks, rep.ks[1:]))
    for row in rep.rows:
        assert 0 <= row.ks <= 1 and 0 <= row.tv_proxy <= 1
        assert row.ks <= 2 * row.tv_proxy + 2 * row.ks_band + 1 / math.ceil(row.n ** (1 / 3))
    assert math.isfinite(rep.fit.slope)
    doc = rep.to_json()
    assert doc["grid"] == [16, 64, 256] and doc["max_scaled_ks"] == pytest.approx(max(rep.ks * rep.ds**0.5))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "d,ks,ks_band,tv_proxy,w1,n" and len(lines) == 4


def test_family_experiment_is_seed_deterministic():
    a = run_family_experiment(FamilySpec("ball", 0.25, 1.0), [8, 32, 128], 20_000, SeedSpec(4))
    b = run_family_experiment(FamilySpec("ball", 0.25, 1.0), [8, 32, 128], 20_000, SeedSpec(4))
    assert a.to_json() == b.to_json()


def test_family_experiment_polytope_route():
    tri = ConvexBody.hpolytope([[0, -1], [-1, 0], [1, 1]], [0, 0, 1], [0.25, 0.25])
    simplex = ConvexBody.hpolytope(np.vstack([-np.eye(3), np.ones((1, 3))]), [0, 0, 0, 1], [0.2] * 3)
    sq = ConvexBody.cube(3)
    rep = run_family_experiment(FamilySpec("polytope", bodies=(tri, simplex, sq)), [2, 3], 4000, SeedSpec(6), chains=200)
    assert rep.fit is None and [r.d for r in rep.rows] == [2, 3]
    # sample standardization centers exactly
    assert all(abs(r.mean_f) < 1e-12 for r in rep.rows)


def test_family_spec_validation():
    with pytest.raises(InputError):
        FamilySpec("simplex")
    with pytest.raises(InputError):
        FamilySpec("polytope")
    with pytest.raises(InputError):
        FamilySpec("polytope", bodies=(ConvexBody.cube(2),)).body(5)
    assert FamilySpec("cube").body(4).half_widths[0] == 0.5
    assert FamilySpec("cube", 0.75, 1.0).body(16).half_widths[0] == pytest.approx(8.0)
