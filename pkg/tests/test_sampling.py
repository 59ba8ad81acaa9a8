import math

import numpy as np
import pytest
from scipy import stats

from hwlab.bodies import ConvexBody, project_many
from hwlab.errors import InputError, TuningError
from hwlab.intrinsic import DiscreteLaw, moments, profile_ball, profile_box, profile_of, vk_law
from hwlab.rng import CHUNK, SeedSpec, map_chunks, pairwise_sum, set_threads
from hwlab.sampling import (
    SampleBatch,
    batch_from_binary,
    batch_to_binary,
    batch_to_csv,
    h_from_points,
    sample_box_exact,
    sample_box_h,
    sample_exact,
    sample_h,
    sample_hk_mixture,
    sample_mala,
    sample_vk,
)

TRIANGLE = ConvexBody.hpolytope([[0, -1], [-1, 0], [1, 1]], [0, 0, 1], [0.25, 0.25])


def ks_critical(n, m, alpha=0.01):
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n + m) / (n * m))


# -------------------------------------------------------------------- RNG


def test_streams_are_reproducible_and_distinct():
    a = SeedSpec(5, 0).generator(0).random(4)
    b = SeedSpec(5, 0).generator(0).random(4)
    c = SeedSpec(5, 1).generator(0).random(4)
    d = SeedSpec(5, 0).generator(1).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_thread_count_does_not_change_results():
    job = lambda rng, size, _: rng.standard_normal(size)  # noqa: E731
    n = 3 * CHUNK + 17
    set_threads(1)
    one = np.concatenate(map_chunks(job, n, SeedSpec(9)))
    set_threads(4)
    try:
        four = np.concatenate(map_chunks(job, n, SeedSpec(9)))
    finally:
        set_threads(1)
    np.testing.assert_array_equal(one, four)


def test_pairwise_sum_is_order_fixed():
    vals = [1e16, 1.0, -1e16, 1.0]
    assert pairwise_sum(vals) == pairwise_sum(list(vals))
    assert pairwise_sum([]) == 0.0


def test_invalid_seed():
    with pytest.raises(ValueError):
        SeedSpec(-1)


# -------------------------------------------------------------- box exact


def test_box_exact_interior_mass():
    box = ConvexBody.box(np.zeros(3), np.ones(3))
    x = sample_box_exact(box, 100_000, SeedSpec(1)).values
    inside = np.abs(x[:, 0]) <= 1
    p = 2 / 3
    assert abs(inside.mean() - p) <= 4 * math.sqrt(p * (1 - p) / x.shape[0])


def test_box_exact_marginal_cdf():
    t = 0.7
    box = ConvexBody.box(np.zeros(2), np.full(2, t))
    u = sample_box_exact(box, 200_000, SeedSpec(2)).values[:, 0]
    z = 1 + 2 * t

    def cdf(v):
        v = np.asarray(v)
        left = stats.norm.cdf(v + t, scale=1 / math.sqrt(2 * math.pi)) / z
        mid = (0.5 + np.clip(v + t, 0, 2 * t)) / z
        right = (0.5 + 2 * t + stats.norm.cdf(v - t, scale=1 / math.sqrt(2 * math.pi)) - 0.5) / z
        return np.where(v < -t, left, np.where(v <= t, mid, right))

    res = stats.kstest(u, cdf)
    assert res.pvalue > 0.01


def test_box_exact_mean_is_center():
    center = np.array([2.0, -1.0, 0.5])
    box = ConvexBody.box(center, [0.5, 1.0, 2.0])
    x = sample_box_exact(box, 100_000, SeedSpec(3)).values
    se = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - center) <= 4 * se)


def test_point_body_is_gaussian():
    x = sample_exact(ConvexBody.point(np.zeros(3)), 100_000, SeedSpec(4)).values
    assert stats.kstest(x[:, 1], "norm", args=(0, 1 / math.sqrt(2 * math.pi))).pvalue > 0.01


def test_box_exact_rejects_other_bodies():
    with pytest.raises(InputError):
        sample_box_exact(ConvexBody.ball(np.zeros(2), 1.0), 10, SeedSpec())


def test_box_h_matches_geometric_h():
    box = ConvexBody.cube(5)
    pts = sample_box_exact(box, 5000, SeedSpec(6))
    h1 = h_from_points(box, pts).values
    h2 = sample_box_h(box, 5000, SeedSpec(6)).values
    np.testing.assert_allclose(h1, h2, rtol=1e-10, atol=1e-14)


def test_tilted_box_weights_are_exact():
    box = ConvexBody.cube(6)
    batch = sample_box_h(box, 200_000, SeedSpec(7), tilt=1.5)
    w = np.exp(batch.log_weights)
    assert abs(w.mean() - 1.0) <= 4 * w.std() / math.sqrt(w.size)
    est = float(np.mean(w * batch.values))
    se = float(np.std(w * batch.values) / math.sqrt(w.size))
    assert abs(est - moments(profile_of(box)).delta) <= 4 * se


# ---------------------------------------------------------------- mixture


def test_mixture_degenerate_laws():
    d = 6
    h = sample_hk_mixture(DiscreteLaw(np.eye(d + 1)[0]), d, 50_000, SeedSpec(8)).values
    assert stats.kstest(h, "gamma", args=(d / 2,)).pvalue > 0.01
    h = sample_hk_mixture(DiscreteLaw(np.eye(d + 1)[d]), d, 1000, SeedSpec(8)).values
    assert np.all(h == 0.0)


def test_mixture_rejects_oversized_law():
    with pytest.raises(InputError):
        sample_hk_mixture(DiscreteLaw(np.full(5, 0.2)), 3, 10, SeedSpec())


def test_mixture_mean_unit_cube():
    h = sample_hk_mixture(vk_law(profile_box([1.0] * 64)), 64, 1_000_000, SeedSpec(9)).values
    assert abs(h.mean() - 16.0) <= 4 * h.std(ddof=1) / math.sqrt(h.size)


def test_sample_vk_law():
    law = vk_law(profile_ball(5, 1.0))
    v = sample_vk(law, 200_000, SeedSpec(10))
    counts = np.bincount(v, minlength=6)
    assert stats.chisquare(counts, law.probs * v.size).pvalue > 0.01


@pytest.mark.parametrize("d", [4, 16, 64])
def test_box_exact_and_mixture_agree(d):
    box = ConvexBody.cube(d)
    h_geo = h_from_points(box, sample_box_exact(box, 100_000, SeedSpec(11))).values
    h_mix = sample_hk_mixture(vk_law(profile_of(box)), d, 100_000, SeedSpec(12)).values
    stat = stats.ks_2samp(h_geo, h_mix).statistic
    assert stat < ks_critical(h_geo.size, h_mix.size)


@pytest.mark.parametrize("d", [2, 7])
def test_ball_exact_and_mixture_agree(d):
    ball = ConvexBody.ball(np.zeros(d), 1.3)
    pts = sample_exact(ball, 100_000, SeedSpec(13))
    h_geo = h_from_points(ball, pts).values
    h_mix = sample_hk_mixture(vk_law(profile_of(ball)), d, 100_000, SeedSpec(14)).values
    assert stats.ks_2samp(h_geo, h_mix).statistic < ks_critical(100_000, 100_000)
    inside = np.linalg.norm(pts.values, axis=1) <= 1.3
    p = vk_law(profile_of(ball)).probs[d]
    assert abs(inside.mean() - p) <= 4 * math.sqrt(p * (1 - p) / inside.size)


def test_zero_mean_gradient():
    box = ConvexBody.box(np.array([0.5, -1.0, 0.0]), [0.2, 1.0, 3.0])
    x = sample_exact(box, 200_000, SeedSpec(15)).values
    y = 2 * math.pi * (x - project_many(box, x)[0])
    se = y.std(axis=0, ddof=1) / math.sqrt(y.shape[0])
    assert np.all(np.abs(y.mean(axis=0)) <= 4 * se)


def test_tail_event_never_seen_at_d40():
    box = ConvexBody.cube(40, 0.2 / math.sqrt(40))
    h = sample_box_h(box, 1_000_000, SeedSpec(16)).values
    assert int(np.count_nonzero(h <= math.pi * 40 / 49)) == 0


# ------------------------------------------------------------------- MALA


def test_mala_unit_cube_interior_probability():
    box = ConvexBody.cube(3)
    batch = sample_mala(box, 40_000, seed=SeedSpec(17))
    inside = np.all(np.abs(batch.values) <= 0.5, axis=1).mean()
    ess = batch.diagnostics["ess"]
    assert abs(inside - 1 / 8) <= 4 * math.sqrt((1 / 8) * (7 / 8) / ess)
    assert 0.4 <= batch.diagnostics["acceptance_rate"] <= 0.7


def test_mala_unit_square_mean_h():
    box = ConvexBody.cube(2)
    batch = sample_mala(box, 40_000, seed=SeedSpec(18))
    h = h_from_points(box, batch).values
    assert abs(h.mean() - 0.5) <= 4 * h.std() / math.sqrt(batch.diagnostics["ess"])


def test_mala_matches_box_exact():
    box = ConvexBody.cube(4)
    h_mala = h_from_points(box, sample_mala(box, 10_000, seed=SeedSpec(19))).values
    h_exact = sample_box_h(box, 10_000, SeedSpec(20)).values
    assert stats.ks_2samp(h_mala, h_exact).statistic < ks_critical(10_000, 10_000)


def test_mala_triangle_matches_mixture_moments():
    batch = sample_mala(TRIANGLE, 40_000, seed=SeedSpec(21))
    h = h_from_points(TRIANGLE, batch).values
    assert np.all(h >= 0)
    v_triangle = np.array([1.0, 1 + math.sqrt(2) / 2, 0.5])  # v_1 = half perimeter
    delta = (2 - np.dot([0, 1, 2], v_triangle) / v_triangle.sum()) / 2
    assert abs(h.mean() - delta) <= 4 * h.std() / math.sqrt(batch.diagnostics["ess"])


def test_mala_bad_step_without_tuning_fails():
    with pytest.raises(TuningError):
        sample_mala(TRIANGLE, 1000, step=50.0, auto_tune=False, seed=SeedSpec(22))


def test_mala_is_reproducible():
    a = sample_mala(TRIANGLE, 500, seed=SeedSpec(23), burn_in=100).values
    b = sample_mala(TRIANGLE, 500, seed=SeedSpec(23), burn_in=100).values
    np.testing.assert_array_equal(a, b)


# -------------------------------------------------------------- utilities


def test_h_from_points_examples():
    box = ConvexBody.box(np.zeros(2), np.ones(2))
    batch = SampleBatch("b", "points", np.array([[2.0, 0.5], [0.1, 0.2]]), "manual", SeedSpec())
    np.testing.assert_allclose(h_from_points(box, batch).values, [math.pi, 0.0])
    with pytest.raises(InputError):
        h_from_points(ConvexBody.cube(3), batch)


def test_h_values_must_be_nonnegative():
    with pytest.raises(InputError):
        SampleBatch("b", "h_values", np.array([-1.0]), "manual", SeedSpec())


def test_sample_h_routes():
    box = ConvexBody.cube(3)
    assert sample_h(box, 100, SeedSpec()).sampler == "mixture"
    assert sample_h(box, 100, SeedSpec(), route="box_exact").sampler == "box_exact"
    assert sample_h(TRIANGLE, 100, SeedSpec(), burn_in=50).sampler == "mala"
    with pytest.raises(InputError):
        sample_h(TRIANGLE, 100, SeedSpec(), route="mixture")


def test_binary_round_trip_and_layout():
    batch = sample_box_exact(ConvexBody.cube(3), 10, SeedSpec(24))
    data = batch_to_binary(batch)
    assert data[:4] == b"HWLB" and len(data) == 16 + 10 * 3 * 8
    np.testing.assert_array_equal(batch_from_binary(data), batch.values)
    with pytest.raises(InputError):
        batch_from_binary(b"XXXX" + data[4:])
    with pytest.raises(InputError):
        batch_from_binary(data[:-8])


def test_csv_export():
    batch = sample_box_exact(ConvexBody.cube(2), 3, SeedSpec(25))
    lines = batch_to_csv(batch).splitlines()
    assert lines[0] == "x0,x1" and len(lines) == 4
    assert float(lines[1].split(",")[0]) == batch.values[0, 0]
