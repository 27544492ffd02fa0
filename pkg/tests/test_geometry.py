import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsloc.errors import DegenerateSpan, ValidationError
from irsloc.geometry import (
    RadioParams,
    Scenario,
    compute_spans,
    link_geometry,
    random_scenario,
    roadside_scenario,
    spatial_frequencies,
)


def one_link(bs, target=(0.0, 0.0), **kwargs):
    return Scenario((bs, (-bs[0], -bs[1] + 1.0)), (target,), **kwargs)


def test_distance_pythagorean():
    g = link_geometry(one_link((3.0, 4.0), r_e=0.0), 0, 0)
    assert g.distance == pytest.approx(math.sqrt(41), rel=1e-12)


def test_axis_aligned_coplanar():
    sc = one_link((10.0, 0.0), h_bs=1.0, h_irs=1.0, allow_coplanar=True, r_e=0.0)
    g = link_geometry(sc, 0, 0)
    assert g.azimuth == 0.0
    assert g.elevation == 0.0


def test_elevation_at_twice_the_height_gap():
    # gap 4, d = 8: horizontal distance sqrt(48)
    g = link_geometry(one_link((math.sqrt(48), 0.0), r_e=0.0), 0, 0)
    assert g.elevation == pytest.approx(math.pi / 6, abs=1e-12)


def test_zero_radius_spans_have_zero_width():
    g = link_geometry(one_link((30.0, 20.0), r_e=0.0), 0, 0)
    assert g.phi_span[0] == g.phi_span[1]
    assert g.omega_span[0] == g.omega_span[1]
    assert g.phi_span[0] == pytest.approx(g.phi)


def test_far_bs_on_x_axis_gives_symmetric_omega_span():
    phi, omega = compute_spans(one_link((500.0, 0.0), r_e=2.0), 0, 0)
    assert omega[0] == pytest.approx(-omega[1], abs=1e-12)


def test_span_widths_match_interior_grid():
    sc = one_link((50.0, 0.0), r_e=5.0)
    phi, omega = compute_spans(sc, 0, 0)
    n = 1000
    u = np.linspace(-5, 5, n)
    gx, gy = np.meshgrid(u, u)
    inside = gx**2 + gy**2 <= 25
    P, O = spatial_frequencies((50.0, 0.0), np.stack([gx[inside], gy[inside]], axis=-1), sc.height_gap)
    assert phi[1] - phi[0] == pytest.approx(P.max() - P.min(), abs=1e-4)
    assert omega[1] - omega[0] == pytest.approx(O.max() - O.min(), abs=1e-4)
    # the grid is a subset of the disk, so its spread cannot exceed the span
    assert P.min() >= phi[0] - 1e-12 and P.max() <= phi[1] + 1e-12


def test_bs_inside_disk_is_degenerate():
    with pytest.raises(DegenerateSpan):
        compute_spans(one_link((3.0, 0.0), r_e=5.0), 0, 0)


@pytest.mark.parametrize(
    "kwargs, path",
    [
        (dict(r_e=-1.0), "r_e_m"),
        (dict(h_bs=1.0, h_irs=1.0), "heights"),
        (dict(irs_size=(0, 4)), "irs.L_x"),
    ],
)
def test_invalid_scenarios_name_the_field(kwargs, path):
    with pytest.raises(ValidationError) as exc:
        Scenario(((10.0, 0.0), (0.0, 10.0)), ((0.0, 0.0),), **kwargs)
    assert exc.value.path == path


def test_needs_two_bs_and_a_target():
    with pytest.raises(ValidationError):
        Scenario(((10.0, 0.0),), ((0.0, 0.0),))
    with pytest.raises(ValidationError):
        Scenario(((10.0, 0.0), (0.0, 10.0)), ())


def test_radio_params_validation():
    with pytest.raises(ValidationError):
        RadioParams(c0=0.0)
    with pytest.raises(ValidationError):
        RadioParams(delta_t=1.0, delta_T=0.1)


def test_random_scenario_keeps_clearance(rng):
    sc = random_scenario(rng, 6, 8, r_e=5.0)
    t = np.array(sc.target_priors)
    for b in sc.bs_positions:
        assert np.min(np.hypot(*(t - b).T)) > 15.0


def test_roadside_scenario_layout(rng):
    sc = roadside_scenario(rng, 4, 12, offset=20.0)
    assert all(y == 0.0 and abs(x) <= 150 for x, y in sc.target_priors)
    assert all(abs(y) == 20.0 and abs(x) <= 300 for x, y in sc.bs_positions)
    assert sc.n_bs == 12


coord = st.floats(-200, 200)


@settings(max_examples=60, deadline=None)
@given(bx=coord, by=coord, r=st.floats(0.0, 20.0))
def test_spatial_frequencies_bounded_and_monotone_in_radius(bx, by, r):
    if math.hypot(bx, by) <= r + 1e-3:
        return
    sc = one_link((bx, by), r_e=r)
    phi, omega = compute_spans(sc, 0, 0)
    assert -1 <= phi[0] <= phi[1] <= 1
    assert -1 <= omega[0] <= omega[1] <= 1
    phi2, omega2 = compute_spans(one_link((bx, by), r_e=r / 2), 0, 0)
    assert phi2[0] >= phi[0] - 1e-12 and phi2[1] <= phi[1] + 1e-12
    assert omega2[0] >= omega[0] - 1e-12 and omega2[1] <= omega[1] + 1e-12


@settings(max_examples=100, deadline=None)
@given(d=st.floats(1.0, 500.0), az=st.floats(-math.pi + 1e-9, math.pi))
def test_azimuth_round_trip(d, az):
    g = link_geometry(one_link((d * math.cos(az), d * math.sin(az)), r_e=0.0), 0, 0)
    assert g.azimuth == pytest.approx(az, abs=1e-12)
