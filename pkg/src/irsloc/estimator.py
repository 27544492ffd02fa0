"""Synthetic range measurements and grid-search maximum-likelihood localization."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import BudgetTable, budget_table
from .crlb import MeasurementSet, crlb_closed_form
from .geometry import Scenario, _angles

# Coarse grids have at most this many cells per axis.
COARSE_CELLS = 200
# Each refinement stage spans this many coarse cells on either side of the incumbent.
ZOOM_HALF_CELLS = 5
# Relative cost gap under which two separated minima count as a tie.
AMBIGUITY_RTOL = 1e-6


@dataclass(frozen=True)
class MeasurementSample:
    """Noisy ranges from one target to the BSs that measured it."""

    bs: tuple[int, ...]
    bs_xy: np.ndarray
    height_gap: float
    measured: np.ndarray
    variance: np.ndarray
    truth: np.ndarray

    def __len__(self):
        return len(self.bs)


@dataclass(frozen=True)
class MleResult:
    x: float
    y: float
    cost: float
    ambiguous: bool

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class MonteCarloResult:
    mse: float
    crlb: float
    trials: int
    power: float
    seed: int
    mse_se: float = 0.0
    ambiguous: int = 0

    @property
    def ratio(self) -> float:
        return self.mse / self.crlb


def link_variances(plan, eta: Sequence[float], table: BudgetTable, k: int) -> np.ndarray:
    """Range variance of each BS for target ``k``; ``inf`` where it gets no time."""
    b = np.asarray(plan.b[k], dtype=float)
    gamma = (b @ np.asarray(eta, dtype=float)) * table.gamma_bar[k]
    with np.errstate(divide="ignore"):
        return np.where(gamma > 0, table.c0 / gamma, np.inf)


def _uniform_in_disk(rng, center, radius):
    r = radius * math.sqrt(rng.random())
    t = 2 * math.pi * rng.random()
    return np.array([center[0] + r * math.cos(t), center[1] + r * math.sin(t)])


def sample_measurements(scenario: Scenario, k: int, variances: Sequence[float], rng: np.random.Generator) -> MeasurementSample:
    """True location uniform in target ``k``'s disk, plus one Gaussian range per measured BS.

    BSs with infinite variance are skipped. Non-positive ranges are redrawn.
    """
    var = np.asarray(variances, dtype=float)
    bs = tuple(int(m) for m in np.flatnonzero(np.isfinite(var)))
    truth = _uniform_in_disk(rng, scenario.target_priors[k], scenario.r_e)
    bs_xy = np.array([scenario.bs_positions[m] for m in bs], dtype=float).reshape(-1, 2)
    gap = scenario.height_gap
    d = np.sqrt(np.sum((bs_xy - truth) ** 2, axis=1) + gap * gap)
    sd = np.sqrt(var[list(bs)])
    measured = d + sd * rng.standard_normal(len(bs))
    while np.any(measured <= 0):
        bad = measured <= 0
        measured[bad] = d[bad] + sd[bad] * rng.standard_normal(int(bad.sum()))
    return MeasurementSample(bs, bs_xy, gap, measured, var[list(bs)], truth)


def sample_crlb(sample: MeasurementSample) -> float:
    """CRLB of the sample's measurements at its true location."""
    off = sample.bs_xy - sample.truth
    az, el, _ = _angles(off[:, 0], off[:, 1], sample.height_gap)
    return crlb_closed_form(MeasurementSet(az, el, sample.variance)).value


def _cost(sample, xs, ys):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    out = np.zeros_like(gx)
    g2 = sample.height_gap ** 2
    for (bx, by), dm, v in zip(sample.bs_xy, sample.measured, sample.variance):
        r = np.sqrt((gx - bx) ** 2 + (gy - by) ** 2 + g2)
        out += (dm - r) ** 2 / v
    return out


def _axis(center, half, step):
    n = int(math.ceil(half / step - 1e-9))
    return center + step * np.arange(-n, n + 1)


def _zoom(sample, x, y, step, resolution):
    """Refine a grid minimizer by 10x per stage until the step reaches ``resolution``."""
    while step > resolution * (1 + 1e-9):
        half = ZOOM_HALF_CELLS * step
        step = max(step / 10.0, resolution)
        for _ in range(20):
            xs, ys = _axis(x, half, step), _axis(y, half, step)
            c = _cost(sample, xs, ys)
            i, j = np.unravel_index(int(np.argmin(c)), c.shape)
            x, y = float(xs[i]), float(ys[j])
            # Re-center when the minimum sits on the window edge.
            if 0 < i < len(xs) - 1 and 0 < j < len(ys) - 1:
                break
    c = _cost(sample, np.array([x]), np.array([y]))
    return x, y, float(c[0, 0])


def _local_minima(c):
    """Indices of grid cells no larger than any of their 8 neighbours, best first."""
    p = np.pad(c, 1, constant_values=np.inf)
    core = p[1:-1, 1:-1]
    ok = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                ok &= core <= p[1 + di:p.shape[0] - 1 + di, 1 + dj:p.shape[1] - 1 + dj]
    idx = np.argwhere(ok)
    return idx[np.argsort(c[ok], kind="stable")]


def default_region(sample: MeasurementSample, scenario: Scenario, k: int, spread: float = 0.0):
    """Square search region about the prior center: r_e plus three error scales."""
    scale = max(float(np.sqrt(sample.variance.max())), spread)
    cx, cy = scenario.target_priors[k]
    return (cx, cy, scenario.r_e + 3.0 * scale)


def mle_locate(sample: MeasurementSample, search_region, resolution: float = 0.01) -> MleResult:
    """Grid-search MLE of the horizontal target position.

    ``search_region`` is ``(cx, cy, half_width)``. A coarse grid of at most
    200 cells per axis is searched first; the best coarse cell is refined by
    successive 10x finer grids down to ``resolution``. The runner-up coarse
    local minimum (at least three cells away) is refined as well, and the
    result is flagged ambiguous when it ties with the winner.
    """
    if len(sample) < 2:
        raise ValueError("at least two ranges are needed")
    cx, cy, half = search_region
    step = max(2.0 * half / COARSE_CELLS, resolution)
    xs, ys = _axis(cx, half, step), _axis(cy, half, step)
    c = _cost(sample, xs, ys)
    minima = _local_minima(c)
    i, j = minima[0]
    x, y, cost = _zoom(sample, float(xs[i]), float(ys[j]), step, resolution)

    ambiguous = False
    for i2, j2 in minima[1:]:
        if max(abs(i2 - i), abs(j2 - j)) >= 3:
            x2, y2, cost2 = _zoom(sample, float(xs[i2]), float(ys[j2]), step, resolution)
            if math.hypot(x2 - x, y2 - y) > 2 * step:
                if cost2 < cost:
                    x, y, cost, cost2 = x2, y2, cost2, cost
                ambiguous = cost2 - cost <= AMBIGUITY_RTOL * (1.0 + cost)
            break
    return MleResult(x, y, cost, ambiguous)


def monte_carlo(
    scenario: Scenario,
    plan,
    allocation,
    trials: int,
    seed: int,
    table: BudgetTable | None = None,
    resolution: float | None = None,
) -> MonteCarloResult:
    """Mean squared MLE error against the CRLB at the sampled true locations.

    Every target is localized in every trial; both statistics average over
    targets and trials. Trial ``t`` draws from its own substream of
    ``seed``, so results do not depend on evaluation order. The grid
    resolution defaults to 0.01 m, or finer when the CRLB is small enough
    for grid quantization to matter.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    table = table or budget_table(scenario)
    eta = np.asarray(getattr(allocation, "eta", allocation), dtype=float)
    K = scenario.n_targets
    variances = [link_variances(plan, eta, table, k) for k in range(K)]
    streams = np.random.SeedSequence(seed).spawn(trials)
    errors = np.zeros((trials, K))
    bounds = np.zeros((trials, K))
    ambiguous = 0
    for t, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        for k in range(K):
            sample = sample_measurements(scenario, k, variances[k], rng)
            crlb = sample_crlb(sample)
            res = resolution or min(0.01, 0.05 * math.sqrt(crlb))
            region = default_region(sample, scenario, k, math.sqrt(crlb))
            est = mle_locate(sample, region, res)
            errors[t, k] = float(np.sum((est.xy - sample.truth) ** 2))
            bounds[t, k] = crlb
            ambiguous += est.ambiguous
    per_trial = errors.mean(axis=1)
    se = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MonteCarloResult(
        mse=float(per_trial.mean()),
        crlb=float(bounds.mean()),
        trials=trials,
        power=scenario.radio.p_tx,
        seed=seed,
        mse_se=se,
        ambiguous=ambiguous,
    )
