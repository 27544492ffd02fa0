"""Scenario description and per-link geometry.

Coordinates are in meters. Every target carries an IRS at the common height
``h_irs``; every BS sits at ``h_bs``. Angles are those of the BS as seen from
the target: azimuth in the xy-plane measured from +x, elevation above the
horizontal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateSpan, ValidationError

SPAN_SAMPLES = 3600


def _positive(path: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(path, f"must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class RadioParams:
    """Radio constants, all linear.

    beta0 is the channel power gain at 1 m, sigma_s2 the receiver noise
    power (W), p_tx the BS transmit power (W), delta_T the dwell window (s),
    delta_t the symbol time (s), c0 the range-estimator variance constant and
    d_min the minimum BS-target distance used by the analytic bound (m).
    """

    beta0: float = 1e-3
    sigma_s2: float = 1e-8
    p_tx: float = 1.0
    delta_T: float = 0.1
    delta_t: float = 1e-6
    c0: float = 0.1
    d_min: float = 10.0

    def __post_init__(self):
        for name in ("beta0", "sigma_s2", "p_tx", "delta_T", "delta_t", "c0", "d_min"):
            _positive(f"radio.{name}", getattr(self, name))
        if self.delta_t > self.delta_T:
            raise ValidationError("radio.delta_t", "symbol time exceeds the dwell window")


@dataclass(frozen=True)
class Scenario:
    bs_positions: tuple[tuple[float, float], ...]
    target_priors: tuple[tuple[float, float], ...]
    h_bs: float = 5.0
    h_irs: float = 1.0
    r_e: float = 5.0
    irs_size: tuple[int, int] = (40, 40)
    radio: RadioParams = field(default_factory=RadioParams)
    # BSs and IRSs at the same height give zero elevation; opt in explicitly.
    allow_coplanar: bool = False

    def __post_init__(self):
        bs = tuple((float(x), float(y)) for x, y in self.bs_positions)
        tg = tuple((float(x), float(y)) for x, y in self.target_priors)
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "target_priors", tg)
        object.__setattr__(self, "irs_size", (int(self.irs_size[0]), int(self.irs_size[1])))
        if len(bs) < 2:
            raise ValidationError("bs", "at least 2 BSs are required")
        if len(tg) < 1:
            raise ValidationError("targets", "at least 1 target is required")
        for i, p in enumerate(bs):
            if not all(math.isfinite(c) for c in p):
                raise ValidationError(f"bs[{i}]", "non-finite coordinate")
        for i, p in enumerate(tg):
            if not all(math.isfinite(c) for c in p):
                raise ValidationError(f"targets[{i}]", "non-finite coordinate")
        for name in ("h_bs", "h_irs"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"heights.{name}", "must be finite")
        if self.h_bs == self.h_irs and not self.allow_coplanar:
            raise ValidationError("heights", "h_bs == h_irs requires allow_coplanar")
        if not (math.isfinite(self.r_e) and self.r_e >= 0):
            raise ValidationError("r_e_m", f"must be finite and >= 0, got {self.r_e!r}")
        if self.irs_size[0] < 1:
            raise ValidationError("irs.L_x", "must be >= 1")
        if self.irs_size[1] < 1:
            raise ValidationError("irs.L_y", "must be >= 1")

    @property
    def n_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def n_targets(self) -> int:
        return len(self.target_priors)

    @property
    def n_elements(self) -> int:
        return self.irs_size[0] * self.irs_size[1]

    @property
    def height_gap(self) -> float:
        return abs(self.h_bs - self.h_irs)

    def with_power(self, p_tx: float) -> Scenario:
        return replace(self, radio=replace(self.radio, p_tx=p_tx))

    def subset(self, bs: Sequence[int] | None = None, targets: Sequence[int] | None = None) -> Scenario:
        """Scenario restricted to the given BS and target indices."""
        bs_pos = self.bs_positions if bs is None else tuple(self.bs_positions[i] for i in bs)
        tg_pos = self.target_priors if targets is None else tuple(self.target_priors[i] for i in targets)
        return replace(self, bs_positions=bs_pos, target_priors=tg_pos)


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    azimuth: float
    elevation: float
    phi_span: tuple[float, float]
    omega_span: tuple[float, float]

    @property
    def phi(self) -> float:
        """Spatial frequency along x at the prior center."""
        return math.sin(self.elevation) * math.cos(self.azimuth)

    @property
    def omega(self) -> float:
        return math.sin(self.elevation) * math.sin(self.azimuth)


def _angles(dx, dy, gap):
    """Azimuth, elevation and 3D distance for BS offsets (dx, dy) from a target."""
    dxy2 = dx * dx + dy * dy
    d = np.sqrt(dxy2 + gap * gap)
    az = np.arctan2(dy, dx)
    el = np.arcsin(np.divide(gap, d, out=np.zeros_like(d), where=d > 0))
    return az, el, d


def spatial_frequencies(bs_xy, target_xy, gap):
    """(Phi, Omega) of a BS seen from one or many target locations."""
    t = np.asarray(target_xy, dtype=float)
    dx = bs_xy[0] - t[..., 0]
    dy = bs_xy[1] - t[..., 1]
    az, el, _ = _angles(dx, dy, gap)
    s = np.sin(el)
    return s * np.cos(az), s * np.sin(az)


def _refined_extreme(theta, values, fn, sign):
    """Extremum of a periodic sampled function, polished by one parabolic step.

    ``sign`` is +1 for the maximum, -1 for the minimum. The returned value is
    an exact function evaluation, never an interpolated one.
    """
    v = sign * values
    i = int(np.argmax(v))
    n = len(theta)
    y0, y1, y2 = v[(i - 1) % n], v[i], v[(i + 1) % n]
    curv = y0 - 2 * y1 + y2
    best = values[i]
    if curv < 0:
        step = theta[1] - theta[0]
        t = theta[i] + 0.5 * step * (y0 - y2) / curv
        cand = fn(np.array([t]))[0]
        if sign * cand > sign * best:
            best = cand
    return float(best)


def compute_spans(scenario: Scenario, k: int, m: int):
    """Ranges of (Phi, Omega) for BS ``m`` over target ``k``'s uncertainty disk.

    Neither spatial frequency has a critical point away from the BS foot
    point, so the extremes sit on the disk boundary; the boundary is sampled
    densely and each extreme polished with a parabolic step.
    """
    bx, by = scenario.bs_positions[m]
    cx, cy = scenario.target_priors[k]
    r = scenario.r_e
    gap = scenario.height_gap
    if math.hypot(bx - cx, by - cy) <= r:
        raise DegenerateSpan(f"BS {m} lies inside the uncertainty disk of target {k}")
    if r == 0:
        phi, omega = spatial_frequencies((bx, by), (cx, cy), gap)
        return (float(phi), float(phi)), (float(omega), float(omega))

    theta = np.linspace(0.0, 2 * np.pi, SPAN_SAMPLES, endpoint=False)

    def boundary(th):
        pts = np.stack([cx + r * np.cos(th), cy + r * np.sin(th)], axis=-1)
        return spatial_frequencies((bx, by), pts, gap)

    phi, omega = boundary(theta)
    phi_c, omega_c = spatial_frequencies((bx, by), (cx, cy), gap)

    def phi_fn(th):
        return boundary(th)[0]

    def omega_fn(th):
        return boundary(th)[1]

    phi_lo = min(_refined_extreme(theta, phi, phi_fn, -1), float(phi_c))
    phi_hi = max(_refined_extreme(theta, phi, phi_fn, +1), float(phi_c))
    om_lo = min(_refined_extreme(theta, omega, omega_fn, -1), float(omega_c))
    om_hi = max(_refined_extreme(theta, omega, omega_fn, +1), float(omega_c))
    return (phi_lo, phi_hi), (om_lo, om_hi)


def link_geometry(scenario: Scenario, k: int, m: int) -> LinkGeometry:
    bx, by = scenario.bs_positions[m]
    cx, cy = scenario.target_priors[k]
    az, el, d = _angles(np.float64(bx - cx), np.float64(by - cy), scenario.height_gap)
    phi_span, omega_span = compute_spans(scenario, k, m)
    return LinkGeometry(float(d), float(az), float(el), phi_span, omega_span)


def random_scenario(
    rng: np.random.Generator,
    n_targets: int,
    n_bs: int,
    *,
    bs_half_width: float = 300.0,
    target_half_width: float = 150.0,
    min_clearance: float = 10.0,
    **kwargs,
) -> Scenario:
    """Targets uniform in one square, BSs uniform in a larger concentric one.

    BSs closer than ``r_e + min_clearance`` to any target prior are redrawn
    so every span is well defined.
    """
    r_e = kwargs.get("r_e", Scenario.__dataclass_fields__["r_e"].default)
    targets = rng.uniform(-target_half_width, target_half_width, size=(n_targets, 2))
    bs = np.empty((n_bs, 2))
    for i in range(n_bs):
        while True:
            p = rng.uniform(-bs_half_width, bs_half_width, size=2)
            if np.min(np.hypot(*(targets - p).T)) > r_e + min_clearance:
                bs[i] = p
                break
    return Scenario(tuple(map(tuple, bs)), tuple(map(tuple, targets)), **kwargs)


def roadside_scenario(
    rng: np.random.Generator,
    n_targets: int,
    n_bs: int,
    *,
    road_half_length: float = 300.0,
    target_half_length: float = 150.0,
    offset: float = 20.0,
    min_clearance: float = 10.0,
    **kwargs,
) -> Scenario:
    """Targets on a straight road along x; BSs beside it at ``offset`` m on a random side.

    BS x positions are uniform over the road; target x positions are uniform
    over its central stretch. BSs too close to a target prior are redrawn.
    """
    r_e = kwargs.get("r_e", Scenario.__dataclass_fields__["r_e"].default)
    tx = rng.uniform(-target_half_length, target_half_length, size=n_targets)
    targets = np.column_stack([tx, np.zeros(n_targets)])
    bs = np.empty((n_bs, 2))
    for i in range(n_bs):
        while True:
            p = np.array([rng.uniform(-road_half_length, road_half_length),
                          offset if rng.random() < 0.5 else -offset])
            if np.min(np.hypot(*(targets - p).T)) > r_e + min_clearance:
                bs[i] = p
                break
    return Scenario(tuple(map(tuple, bs)), tuple(map(tuple, targets)), **kwargs)
