
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsloc.channel import (
    budget_table,
    flattened_gain,
    link_budget,
    measurement_variance,
    subarray_counts,
    subarray_directions,
)
from irsloc.errors import InfiniteVariance
from irsloc.geometry import Scenario, random_scenario


def phasor_gain(delta, n):
    """|sum of n unit phasors| with the phase step of one element."""
    k = np.arange(n) - (n - 1) / 2
    return float(np.real(np.sum(np.exp(1j * np.pi * delta * k))))


@pytest.mark.parametrize(
    "L, width, q",
    [(40, 0.2, 2), (40, 0.0, 1), (40, 0.3, 3), (40, 2.0, 7)],
)
def test_subarray_counts(L, width, q):
    assert subarray_counts(L, L, (0.0, width), (0.1, 0.1 + width)) == (q, q)


def test_gain_at_boresight():
    assert flattened_gain(0.0, 0.0, 8, 8) == 64


def test_gain_null():
    assert flattened_gain(2 / 8, 0.0, 8, 8) == pytest.approx(0.0, abs=1e-12)


def test_gain_half_null_matches_phasor_sum():
    assert flattened_gain(1 / 8, 0.0, 8, 8) == pytest.approx(phasor_gain(1 / 8, 8) * 8, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(d=st.floats(-1.9, 1.9), n=st.integers(1, 16))
def test_gain_is_even_and_matches_phasors(d, n):
    assert flattened_gain(d, 0.0, n, 1) == pytest.approx(flattened_gain(-d, 0.0, n, 1), abs=1e-9)
    assert flattened_gain(d, 0.0, n, 1) == pytest.approx(phasor_gain(d, n), abs=1e-9)


def test_gain_continuous_at_zero():
    assert flattened_gain(1e-9, 1e-9, 8, 5) == pytest.approx(phasor_gain(1e-9, 8) * phasor_gain(1e-9, 5), rel=1e-12)


def test_directions():
    assert subarray_directions(0.1, 0.3, 1, 20) == [pytest.approx(0.2)]
    assert subarray_directions(0.0, 0.2, 2, 20) == [pytest.approx(0.05), pytest.approx(0.15)]


def test_directions_cover_the_span():
    lo, hi = -0.1, 0.2
    L = 40
    q, _ = subarray_counts(L, L, (lo, hi), (0.0, 0.0))
    assert q == 3
    Ls = L // q
    centers = np.array(subarray_directions(lo, hi, q, Ls))
    samples = np.linspace(lo, hi, 3600)
    gap = np.min(np.abs(samples[:, None] - centers[None, :]), axis=1)
    assert gap.max() <= 1 / Ls + 1e-12


def test_baseline_snr_arithmetic():
    # d = 10 m with zero height gap and r_e = 0 so Q = 1
    sc = Scenario(((10.0, 0.0), (0.0, 10.0)), ((0.0, 0.0),), h_bs=1.0, h_irs=1.0, allow_coplanar=True, r_e=0.0)
    lb = link_budget(sc, 0, 0)
    expected = 1.0 * (1e-3) ** 2 * 0.1 * 1600**2 / (1 * 1e-6 * 10**4 * 1e-8)
    assert expected == pytest.approx(2.56e9)
    assert lb.gamma_bar == pytest.approx(expected, rel=1e-12)
    assert lb.gamma_tilde_rate == lb.gamma_bar
    assert lb.q == 1


def test_doubling_distance_divides_snr_by_16():
    kw = dict(h_bs=1.0, h_irs=1.0, allow_coplanar=True, r_e=0.0)
    near = Scenario(((10.0, 0.0), (0.0, 10.0)), ((0.0, 0.0),), **kw)
    far = Scenario(((20.0, 0.0), (0.0, 10.0)), ((0.0, 0.0),), **kw)
    assert link_budget(near, 0, 0).gamma_bar / link_budget(far, 0, 0).gamma_bar == pytest.approx(16.0)


def test_measurement_variance():
    assert measurement_variance(1e3, 0.1) == pytest.approx(1e-4)
    assert measurement_variance(0.5 * 2.0, 0.1) == pytest.approx(0.1)
    assert measurement_variance(1e300, 0.1) == pytest.approx(0.0, abs=1e-290)
    with pytest.raises(InfiniteVariance):
        measurement_variance(0.0, 0.1)


def test_budget_table_invariants(rng):
    sc = random_scenario(rng, 5, 6)
    t = budget_table(sc)
    assert t.gamma_bar.shape == (5, 6)
    assert np.all(t.q >= 1)
    ratio = t.gamma_tilde / t.gamma_bar
    assert np.all((ratio > 0) & (ratio <= 1))
    assert np.allclose(ratio, np.cos(t.elevation) ** 2, rtol=1e-12)


def test_zero_radius_means_one_subarray(rng):
    sc = random_scenario(rng, 4, 5, r_e=0.0)
    assert np.all(budget_table(sc).q == 1)


def test_snr_scales_with_inverse_square_of_subarray_count():
    bs = ((12.0, 0.0), (0.0, 30.0))
    point = link_budget(Scenario(bs, ((0.0, 0.0),), r_e=0.0), 0, 0)
    disk = link_budget(Scenario(bs, ((0.0, 0.0),), r_e=8.0), 0, 0)
    assert disk.q > 1
    assert disk.gamma_bar == pytest.approx(point.gamma_bar / disk.q**2, rel=1e-12)
