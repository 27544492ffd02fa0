import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from irsloc.association import run_scheme
from irsloc.channel import budget_table
from irsloc.estimator import (
    MeasurementSample,
    default_region,
    link_variances,
    mle_locate,
    monte_carlo,
    sample_crlb,
    sample_measurements,
)
from irsloc.geometry import Scenario, random_scenario

THREE = Scenario(((50, 0), (0, 50), (-40, -30)), ((0, 0),), r_e=5.0)


def exact_sample(scenario, truth, variance=0.01):
    bs = np.array(scenario.bs_positions)
    d = np.sqrt(np.sum((bs - truth) ** 2, axis=1) + scenario.height_gap**2)
    var = np.full(len(bs), variance)
    return MeasurementSample(tuple(range(len(bs))), bs, scenario.height_gap, d, var, np.asarray(truth, float))


def test_tiny_variance_gives_true_ranges(rng):
    s = sample_measurements(THREE, 0, [1e-30] * 3, rng)
    d = np.sqrt(np.sum((s.bs_xy - s.truth) ** 2, axis=1) + THREE.height_gap**2)
    assert np.allclose(s.measured, d, rtol=1e-12)
    assert np.hypot(*s.truth) <= THREE.r_e


def test_noise_is_unbiased_with_the_right_variance(rng):
    sigma2 = 0.5
    z = np.empty((100_000, 3))
    for i in range(len(z)):
        s = sample_measurements(THREE, 0, [sigma2] * 3, rng)
        d = np.sqrt(np.sum((s.bs_xy - s.truth) ** 2, axis=1) + THREE.height_gap**2)
        z[i] = s.measured - d
    z = z.ravel()
    assert abs(z.mean()) <= 4 * math.sqrt(sigma2 / z.size)
    assert z.var() == pytest.approx(sigma2, rel=0.05)


def test_infinite_variance_skips_the_bs(rng):
    s = sample_measurements(THREE, 0, [0.1, np.inf, 0.2], rng)
    assert s.bs == (0, 2)
    assert len(s) == 2


def test_zero_noise_estimate_is_within_one_cell():
    s = exact_sample(THREE, (1.3, -2.2))
    est = mle_locate(s, (0.0, 0.0, 8.0), resolution=0.01)
    assert abs(est.x - 1.3) <= 0.01 and abs(est.y + 2.2) <= 0.01
    assert not est.ambiguous


def test_translation_equivariance(rng):
    s = sample_measurements(THREE, 0, [0.3] * 3, rng)
    c = 17.0
    moved = MeasurementSample(s.bs, s.bs_xy + c, s.height_gap, s.measured, s.variance, s.truth + c)
    a = mle_locate(s, (0.0, 0.0, 8.0))
    b = mle_locate(moved, (c, c, 8.0))
    assert b.x - a.x == pytest.approx(c, abs=1e-6)
    assert b.y - a.y == pytest.approx(c, abs=1e-6)


def test_matches_dense_grid(rng):
    s = sample_measurements(THREE, 0, [0.3] * 3, rng)
    half = 8.0
    xs = np.linspace(-half, half, 2001)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    cost = sum(
        (dm - np.sqrt((gx - bx) ** 2 + (gy - by) ** 2 + s.height_gap**2)) ** 2 / v
        for (bx, by), dm, v in zip(s.bs_xy, s.measured, s.variance)
    )
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    est = mle_locate(s, (0.0, 0.0, half), resolution=0.01)
    step = xs[1] - xs[0]
    assert abs(est.x - xs[i]) <= step + 0.01
    assert abs(est.y - xs[j]) <= step + 0.01


def test_two_bs_mirror_is_flagged():
    sc = Scenario(((50, 0), (0, 50)), ((0, 0),), r_e=5.0)
    s = exact_sample(sc, (2.0, 1.0))
    # the mirror image across the line through both BSs is far outside the
    # prior disk, so a wide region sees two equal minima
    est = mle_locate(s, (25.0, 25.0, 40.0), resolution=0.01)
    assert est.ambiguous
    near = mle_locate(s, default_region(s, sc, 0))
    assert not near.ambiguous
    assert abs(near.x - 2.0) <= 0.01 and abs(near.y - 1.0) <= 0.01


def test_one_range_is_not_enough():
    s = exact_sample(Scenario(((50, 0), (0, 50)), ((0, 0),)), (0.0, 0.0))
    one = MeasurementSample((0,), s.bs_xy[:1], s.height_gap, s.measured[:1], s.variance[:1], s.truth)
    with pytest.raises(ValueError):
        mle_locate(one, (0.0, 0.0, 5.0))


def test_sample_crlb_matches_closed_form_at_truth():
    s = exact_sample(THREE, (0.0, 0.0), variance=1.0)
    assert 0 < sample_crlb(s) < math.inf


@pytest.fixture(scope="module")
def solved():
    sc = random_scenario(np.random.default_rng(7), 1, 4)
    return sc, run_scheme(sc, "proposed")


def test_link_variances(solved):
    sc, res = solved
    t = budget_table(sc)
    v = link_variances(res.plan, res.allocation.eta, t, 0)
    eta = res.allocation.eta
    with np.errstate(divide="ignore"):
        expected = np.where(eta > 0, t.c0 / (eta * t.gamma_bar[0]), np.inf)
    assert np.allclose(v, expected)


def test_monte_carlo_is_deterministic(solved):
    sc, res = solved
    a = monte_carlo(sc.with_power(1e-6), res.plan, res.allocation, 20, seed=3)
    b = monte_carlo(sc.with_power(1e-6), res.plan, res.allocation, 20, seed=3)
    assert a.mse == b.mse and a.crlb == b.crlb
    with pytest.raises(ValueError):
        monte_carlo(sc, res.plan, res.allocation, 0, seed=3)


def test_high_power_is_tight(solved):
    sc, res = solved
    mc = monte_carlo(sc, res.plan, res.allocation, 300, seed=11)
    assert mc.mse >= mc.crlb - 3 * mc.mse_se
    assert mc.ratio <= 1.5


def test_mse_falls_with_power(solved):
    sc, res = solved
    powers = np.logspace(-9, -3, 7)
    mse = [monte_carlo(sc.with_power(p), res.plan, res.allocation, 60, seed=5).mse for p in powers]
    rho, _ = spearmanr(powers, mse)
    assert rho < -0.9


def test_more_trials_stay_within_sampling_error(solved):
    sc, res = solved
    a = monte_carlo(sc, res.plan, res.allocation, 500, seed=21)
    b = monte_carlo(sc, res.plan, res.allocation, 1000, seed=21)
    # the first 500 substreams are shared, so the gap is half the gap between halves
    assert abs(b.mse - a.mse) <= 3 * a.mse_se
