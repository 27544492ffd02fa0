"""Fisher information and CRLB of 2D range-only localization.

A range measurement to a BS at azimuth ``az`` and elevation ``el`` has
gradient ``cos(el) * (cos az, sin az)`` with respect to the horizontal target
position, so every measurement contributes a rank-one term to the FIM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AllZeroAllocation, DegenerateGeometry, InvalidGeometry
from .geometry import RadioParams

# Relative size below which the Eq.-11 style determinant is treated as zero.
DEGENERACY_TOL = 1e-15


@dataclass(frozen=True)
class MeasurementSet:
    azimuth: np.ndarray
    elevation: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        az = np.atleast_1d(np.asarray(self.azimuth, dtype=float))
        el = np.atleast_1d(np.asarray(self.elevation, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if not (az.shape == el.shape == var.shape) or az.ndim != 1:
            raise ValueError("azimuth, elevation and variance must be aligned 1-D arrays")
        if az.size < 2:
            raise ValueError("a MeasurementSet needs at least 2 entries")
        if not np.all(np.isfinite(var) & (var > 0)):
            raise ValueError("variances must be finite and > 0")
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", el)
        object.__setattr__(self, "variance", var)

    def __len__(self):
        return self.azimuth.size


@dataclass(frozen=True)
class CrlbReport:
    value: float
    fim: np.ndarray
    degenerate: bool


def _weighted_sums(ms: MeasurementSet):
    w = np.cos(ms.elevation) ** 2 / ms.variance
    c, s = np.cos(ms.azimuth), np.sin(ms.azimuth)
    return np.sum(w), np.sum(w * c * c), np.sum(w * s * s), np.sum(w * c * s)


def jacobian(ms: MeasurementSet) -> np.ndarray:
    ce = np.cos(ms.elevation)
    return np.column_stack([np.cos(ms.azimuth) * ce, np.sin(ms.azimuth) * ce])


def fim(ms: MeasurementSet) -> np.ndarray:
    J = jacobian(ms)
    return J.T @ (J / ms.variance[:, None])


def crlb_closed_form(ms: MeasurementSet) -> CrlbReport:
    """Trace of the inverse FIM via its explicit 2x2 ratio.

    Collinear geometry (all azimuths equal modulo pi) is reported in-band as
    ``value = inf`` with ``degenerate = True``.
    """
    total, sxx, syy, sxy = _weighted_sums(ms)
    info = np.array([[sxx, sxy], [sxy, syy]])
    det = sxx * syy - sxy * sxy
    if det <= DEGENERACY_TOL * total * total:
        return CrlbReport(math.inf, info, True)
    return CrlbReport(float(total / det), info, False)


def crlb_matrix(ms: MeasurementSet) -> float:
    """Trace of the adjugate-inverted FIM; the matrix route of crlb_closed_form."""
    info = fim(ms)
    det = info[0, 0] * info[1, 1] - info[0, 1] * info[1, 0]
    if det <= DEGENERACY_TOL * np.trace(info) ** 2:
        return math.inf
    return float((info[0, 0] + info[1, 1]) / det)


def pairwise_denominator(x, azimuths):
    """Sum over pairs j < i of x_j x_i sin^2(az_i - az_j), batched over leading axes.

    ``x`` has shape (..., M); azimuths has shape (M,).
    """
    az = np.asarray(azimuths, dtype=float)
    s2 = np.sin(az[:, None] - az[None, :]) ** 2
    x = np.asarray(x, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", x, s2, x)


def crlb_simplified(etas, gamma_tildes, azimuths, c0: float) -> float:
    """CRLB from time shares and equivalent SNRs.

    Returns ``inf`` when fewer than two non-parallel BSs receive time.
    """
    eta = np.asarray(etas, dtype=float)
    g = np.asarray(gamma_tildes, dtype=float)
    if not np.any(eta > 0):
        raise AllZeroAllocation("every time share is zero")
    x = eta * g
    num = c0 * np.sum(x)
    den = pairwise_denominator(x, azimuths)
    if den <= DEGENERACY_TOL * np.sum(x) ** 2:
        return math.inf
    return float(num / den)


def analytic_lower_bound(params: RadioParams, L: int, height_gap: float) -> float:
    """Minimum CRLB over BS placements at distance >= d_min with one subarray."""
    d = params.d_min
    if d <= height_gap:
        raise InvalidGeometry(f"d_min={d} does not exceed the height gap {height_gap}")
    return (
        4 * params.c0 * params.delta_t * d**6 * params.sigma_s2
        / (params.p_tx * params.delta_T * params.beta0**2 * L**2 * (d * d - height_gap**2))
    )


def two_bs_optimal(gamma1: float, gamma2: float, azimuth_gap: float, c0: float):
    """Optimal split of the window between two BSs and the resulting CRLB."""
    s2 = math.sin(azimuth_gap) ** 2
    if s2 <= DEGENERACY_TOL:
        raise DegenerateGeometry("the two BSs are collinear with the target")
    r1, r2 = math.sqrt(gamma1), math.sqrt(gamma2)
    eta1 = r2 / (r1 + r2)
    eta2 = r1 / (r1 + r2)
    value = c0 * (r1 + r2) ** 2 / (gamma1 * gamma2 * s2)
    return eta1, eta2, value


def crlb_multitarget(plan, etas: Sequence[float], table) -> list[CrlbReport]:
    """Per-target CRLB reports for an association plan and slot shares.

    ``table`` is a :class:`irsloc.channel.BudgetTable`. Slots with zero share
    contribute no measurement; targets left with fewer than two measurements
    report an infinite CRLB.
    """
    eta = np.asarray(etas, dtype=float)
    reports = []
    for k in range(plan.b.shape[0]):
        az, el, var = [], [], []
        for m, n in zip(*np.nonzero(plan.b[k])):
            gamma = eta[n] * table.gamma_bar[k, m]
            if gamma > 0:
                az.append(table.azimuth[k, m])
                el.append(table.elevation[k, m])
                var.append(table.c0 / gamma)
        if len(az) < 2:
            info = np.zeros((2, 2))
            if az:
                u = np.array([math.cos(az[0]), math.sin(az[0])]) * math.cos(el[0])
                info = np.outer(u, u) / var[0]
            reports.append(CrlbReport(math.inf, info, True))
            continue
        reports.append(crlb_closed_form(MeasurementSet(az, el, var)))
    return reports
