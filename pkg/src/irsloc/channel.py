"""Beam-flattening subarray model and per-link echo SNR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfiniteVariance
from .geometry import LinkGeometry, Scenario, link_geometry

# Guards ceil() against sqrt(4.000000000000001) style round-off.
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class LinkBudget:
    q_x: int
    q_y: int
    gamma_bar: float
    gamma_tilde_rate: float
    geometry: LinkGeometry

    @property
    def q(self) -> int:
        return self.q_x * self.q_y


def _count(n_elements: int, width: float) -> int:
    q = math.ceil(math.sqrt(n_elements * abs(width) / 2.0) - _CEIL_SLACK)
    return int(min(max(q, 1), n_elements))


def subarray_counts(L_x: int, L_y: int, phi_span, omega_span) -> tuple[int, int]:
    """Number of subarrays along x and y needed to cover the spans."""
    return (
        _count(L_x, phi_span[1] - phi_span[0]),
        _count(L_y, omega_span[1] - omega_span[0]),
    )


def _dirichlet(delta, n):
    """sin(pi n delta / 2) / sin(pi delta / 2) with removable zeros filled in."""
    delta = np.asarray(delta, dtype=float)
    x = 0.5 * np.pi * delta
    den = np.sin(x)
    num = np.sin(n * x)
    # Zeros of the denominator sit at delta = 2j; the limit there is n * (-1)^(j (n-1)).
    j = np.rint(delta / 2.0)
    near = np.abs(delta - 2.0 * j) < 1e-12
    limit = n * np.where((j * (n - 1)) % 2 == 0, 1.0, -1.0)
    safe = np.where(near, 1.0, den)
    return np.where(near, limit, num / safe)


def flattened_gain(delta_phi, delta_omega, L_x_s: int, L_y_s: int):
    """Array factor of one L_x_s x L_y_s subarray at a spatial-frequency offset."""
    out = _dirichlet(delta_phi, L_x_s) * _dirichlet(delta_omega, L_y_s)
    return float(out) if np.ndim(out) == 0 else out


def subarray_directions(span_lo: float, span_hi: float, q: int, L_s: int) -> list[float]:
    """Beam-center spatial frequencies of ``q`` subarrays with ``L_s`` elements.

    Centers are spaced by one beamwidth 2/L_s starting half a beamwidth above
    the lower span edge; a single subarray points at the span midpoint.
    """
    if q == 1:
        return [0.5 * (span_lo + span_hi)]
    return [span_lo + (1 + 2 * i) / L_s for i in range(q)]


def link_budget(scenario: Scenario, k: int, m: int) -> LinkBudget:
    geo = link_geometry(scenario, k, m)
    L_x, L_y = scenario.irs_size
    q_x, q_y = subarray_counts(L_x, L_y, geo.phi_span, geo.omega_span)
    radio = scenario.radio
    L = scenario.n_elements
    q = q_x * q_y
    gamma_bar = (
        radio.p_tx * radio.beta0**2 * radio.delta_T * L**2
        / (q**2 * radio.delta_t * geo.distance**4 * radio.sigma_s2)
    )
    gamma_tilde = gamma_bar * math.cos(geo.elevation) ** 2
    return LinkBudget(q_x, q_y, gamma_bar, gamma_tilde, geo)


def measurement_variance(gamma: float, c0: float) -> float:
    """Range-error variance of a measurement accumulated at SNR ``gamma``."""
    if gamma <= 0:
        raise InfiniteVariance("zero SNR: the link was never allocated time")
    return c0 / gamma


@dataclass(frozen=True)
class BudgetTable:
    """All K x M link budgets of a scenario as arrays."""

    gamma_bar: np.ndarray
    gamma_tilde: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    distance: np.ndarray
    q: np.ndarray
    c0: float
    links: tuple[tuple[LinkBudget, ...], ...]

    @property
    def n_targets(self) -> int:
        return self.gamma_bar.shape[0]

    @property
    def n_bs(self) -> int:
        return self.gamma_bar.shape[1]


def budget_table(scenario: Scenario) -> BudgetTable:
    links = tuple(
        tuple(link_budget(scenario, k, m) for m in range(scenario.n_bs))
        for k in range(scenario.n_targets)
    )

    def grab(fn):
        return np.array([[fn(b) for b in row] for row in links], dtype=float)

    return BudgetTable(
        gamma_bar=grab(lambda b: b.gamma_bar),
        gamma_tilde=grab(lambda b: b.gamma_tilde_rate),
        azimuth=grab(lambda b: b.geometry.azimuth),
        elevation=grab(lambda b: b.geometry.elevation),
        distance=grab(lambda b: b.geometry.distance),
        q=grab(lambda b: b.q),
        c0=scenario.radio.c0,
        links=links,
    )
