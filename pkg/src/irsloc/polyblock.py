"""Polyblock outer approximation for time allocation on the simplex.

The objectives here are CRLB-type functions that decrease in every time
share. Minimizing such a function over ``{eta >= 0, sum(eta) = 1}`` is the
same as minimizing it over the normal set ``{eta in [0, 1]^N, sum(eta) <= 1}``,
which is what the polyblock approximates from outside: a union of boxes
``[0, v]`` whose upper corners ``v`` are the vertices.

Each iteration takes the vertex with the smallest objective (a lower bound
for its box), reduces it against the incumbent, projects it radially onto
the simplex and replaces it by the corners obtained by pulling one coordinate
back to the projection.

Near an interior optimum the vertex bounds tighten only slowly, so an
objective may also offer ``polish(eta, ub)`` (a local improvement of the
incumbent) and ``dual_bound(eta, ub)`` (a certified global lower bound).
:class:`CrlbObjective` provides both. Writing ``x_j = gamma_j eta_j``,
``S = sum x`` and ``z = sum x_j exp(2i az_j)``, the pairwise denominator is
``(S^2 - |z|^2) / 4``, so ``CRLB <= 1/s`` is the second-order cone constraint
``||(Re z, Im z, 2 c0 s)|| <= S - 2 c0 s`` and the problem is convex in
``(eta, s)``.
"""
from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .crlb import DEGENERACY_TOL
from .errors import DimensionTooLarge, InfeasiblePlan, MaxIterExceeded, NonMonotoneObjective

SIMPLEX_TOL = 1e-12
POLISH_ROUNDS = 3


@dataclass(frozen=True)
class TimeAllocation:
    eta: np.ndarray

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if eta.ndim != 1 or eta.size == 0:
            raise ValueError("eta must be a non-empty vector")
        if np.any(eta < 0) or np.any(eta > 1):
            raise ValueError("time shares must lie in [0, 1]")
        if abs(eta.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"time shares sum to {eta.sum()!r}, not 1")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    def __len__(self):
        return self.eta.size

    def active(self, threshold: float = 1e-3) -> np.ndarray:
        return np.flatnonzero(self.eta > threshold)


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-6
    max_iter: int = 10_000
    min_eta: float = 0.01
    active_threshold: float = 1e-3
    probe_samples: int = 4
    # Use the objective's polish/dual_bound hooks when it has them.
    accelerate: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class PolyblockResult:
    allocation: TimeAllocation
    value: float
    converged: bool = True
    iterations: int = 0
    upper_bounds: list = field(default_factory=list)
    lower_bounds: list = field(default_factory=list)

    @property
    def eta(self) -> np.ndarray:
        return self.allocation.eta


class CrlbObjective:
    """Max over targets of the pairwise-sum CRLB, as a function of slot shares.

    Each group describes one target: the slot index of each of its
    measurements, the equivalent SNR rate of that measurement and its
    azimuth. A single target with one slot per BS is the plain single-target
    CRLB. Calls accept a batch of share vectors along the leading axes.
    """

    def __init__(self, groups, c0: float, dim: int):
        self.c0 = float(c0)
        self.dim = int(dim)
        self.groups = []
        for slots, gamma, az in groups:
            slots = np.asarray(slots, dtype=int)
            gamma = np.asarray(gamma, dtype=float)
            az = np.asarray(az, dtype=float)
            s2 = np.sin(az[:, None] - az[None, :]) ** 2
            self.groups.append((slots, gamma, s2))

    @classmethod
    def single(cls, gamma_tildes, azimuths, c0: float) -> CrlbObjective:
        m = len(gamma_tildes)
        return cls([(np.arange(m), gamma_tildes, azimuths)], c0, m)

    def per_group(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        vals = []
        for slots, g, s2 in self.groups:
            x = eta[..., slots] * g
            tot = x.sum(axis=-1)
            den = 0.5 * np.einsum("...i,ij,...j->...", x, s2, x)
            ok = den > DEGENERACY_TOL * tot * tot
            with np.errstate(divide="ignore", invalid="ignore"):
                vals.append(np.where(ok, self.c0 * tot / np.where(ok, den, 1.0), np.inf))
        return np.stack(vals, axis=-1)

    def __call__(self, eta):
        out = self.per_group(eta).max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def lower_corner(self, v: np.ndarray, target: float) -> np.ndarray:
        """Per coordinate, the smallest value keeping every group at or below ``target``.

        Each group's CRLB is a ratio of a linear and a quadratic form, so the
        threshold in one coordinate (others held at ``v``) solves a linear
        equation. Assumes the objective at ``v`` itself is <= target.
        """
        a = np.zeros(self.dim)
        for slots, g, s2 in self.groups:
            x = v[slots] * g
            tot = x.sum()
            e = s2 @ x
            den = 0.5 * x @ e
            need = self.c0 * (tot - x) - target * (den - x * e)
            coef = g * (target * e - self.c0)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(need <= 0, 0.0, need / np.where(coef > 0, coef, np.nan))
            t = np.where(np.isnan(t), v[slots], t)
            t = np.clip(t * (1 - 1e-12), 0.0, v[slots])
            a[slots] = np.maximum(a[slots], t)
        return a


    def _terms(self, eta):
        """Per group: measurement values x, pairwise sums e = s2 @ x, S and D."""
        out = []
        for slots, g, s2 in self.groups:
            x = eta[slots] * g
            e = s2 @ x
            out.append((x, e, x.sum(), 0.5 * x @ e))
        return out

    def polish(self, eta, ub: float) -> np.ndarray:
        """Local maximization of ``min_k 1/CRLB_k``, started at ``eta``.

        ``1/CRLB_k = D_k / (c0 S_k)`` is concave in the shares, so a converged
        local solution is global; the caller still compares the result with
        the incumbent.
        """
        if not math.isfinite(ub) or ub <= 0:
            return eta
        n, c0 = self.dim, self.c0

        def cons(y):
            eta, t = y[:-1], y[-1]
            return np.array([
                ub * D / (c0 * S) - t if S > 0 else -t
                for _, _, S, D in self._terms(eta)
            ])

        def cons_jac(y):
            eta = y[:-1]
            jac = np.zeros((len(self.groups), n + 1))
            jac[:, -1] = -1.0
            for k, ((slots, g, _), (x, e, S, D)) in enumerate(zip(self.groups, self._terms(eta))):
                if S > 0:
                    np.add.at(jac[k], slots, ub * g * (e * S - D) / (c0 * S * S))
            return jac

        y0 = np.append(eta, ub / max(float(self(eta)), 1e-300))
        eq = np.append(np.ones(n), 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = minimize(
                lambda y: -y[-1], y0,
                jac=lambda y: -np.eye(n + 1)[-1],
                method="SLSQP",
                bounds=[(0.0, 1.0)] * n + [(0.0, None)],
                constraints=[
                    {"type": "ineq", "fun": cons, "jac": cons_jac},
                    {"type": "eq", "fun": lambda y: y[:-1].sum() - 1.0, "jac": lambda y: eq},
                ],
                options={"ftol": 1e-12, "maxiter": 200},
            )
        x = np.clip(out.x[:-1], 0.0, None)
        if not x.sum() > 0:
            return eta
        x = x / x.sum()
        best, best_f = x, self(x) * (1 + 1e-13)
        # SLSQP leaves small residue on slots that belong off the support;
        # try a few cut-offs for what counts as zero.
        for cut in (1e-9, 1e-6, 1e-4, 1e-2):
            sharp = self._kkt_newton(x, cut)
            if sharp is not None:
                f = self(sharp)
                if f <= best_f:
                    best, best_f = sharp, f
        return best

    def _grads(self, eta, k):
        """psi = D / (c0 S) of group k with its gradient and Hessian over all slots."""
        slots, g, s2 = self.groups[k]
        G = np.zeros((self.dim, slots.size))
        G[slots, np.arange(slots.size)] = g
        x = eta[slots] * g
        e = s2 @ x
        S, D = x.sum(), 0.5 * x @ e
        dS, dD = G.sum(axis=1), G @ e
        d2D = G @ s2 @ G.T
        c0 = self.c0
        psi = D / (c0 * S)
        grad = (dD * S - D * dS) / (c0 * S * S)
        hess = (
            (d2D * S + np.outer(dD, dS) - np.outer(dS, dD)) / (c0 * S * S)
            - 2 * np.outer(dD * S - D * dS, dS) / (c0 * S**3)
        )
        return psi, grad, hess

    def _kkt_newton(self, eta, cut: float = 1e-9, iters: int = 20):
        """Newton's method on the KKT system of ``max_eta min_k psi_k``.

        The support and the binding groups are read off ``eta``, which must
        already be close to optimal. Returns None when the iteration fails.
        """
        support = np.flatnonzero(eta > cut * eta.max())
        eta = np.where(eta > cut * eta.max(), eta, 0.0)
        eta /= eta.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.array([self._grads(eta, k)[0] for k in range(len(self.groups))])
        if not np.all(np.isfinite(vals)) or vals.min() <= 0:
            return None
        bind = np.flatnonzero(vals <= vals.min() * (1 + 1e-5))
        p, b = support.size, bind.size
        t = vals.min()
        # Multipliers from stationarity at the starting point.
        grads = np.array([self._grads(eta, k)[1][support] for k in bind])
        A = np.vstack([grads.T, np.ones(b)])
        mu = np.linalg.lstsq(A, np.append(np.full(p, t), 1.0), rcond=None)[0]
        lam = t
        for _ in range(iters):
            parts = [self._grads(eta, k) for k in bind]
            psi = np.array([q[0] for q in parts])
            gP = np.array([q[1][support] for q in parts])
            H = sum(m * q[2][np.ix_(support, support)] for m, q in zip(mu, parts))
            F = np.concatenate([mu @ gP - lam, psi - t, [mu.sum() - 1.0], [eta[support].sum() - 1.0]])
            n = p + b + 2
            J = np.zeros((n, n))
            J[:p, :p] = H
            J[:p, p:p + b] = gP.T
            J[:p, -1] = -1.0
            J[p:p + b, :p] = gP
            J[p:p + b, p + b] = -1.0
            J[p + b, p:p + b] = 1.0
            J[p + b + 1, :p] = 1.0
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
            eta[support] += step[:p]
            mu += step[p:p + b]
            t += step[p + b]
            lam += step[-1]
            if np.any(eta[support] <= 0):
                return None
            if np.max(np.abs(step[:p]) / eta[support]) < 1e-13:
                break
        if np.any(mu < -1e-9):
            return None
        eta = np.clip(eta, 0.0, None)
        return eta / eta.sum()

    def dual_bound(self, eta, ub: float) -> float:
        """Certified lower bound on the global minimum, tight when ``eta`` is optimal.

        Cone multipliers aligned with the constraints at ``eta`` are valid for
        any non-negative group weights; the weights are picked by a small LP
        and the bound is re-evaluated exactly from the normalized weights.
        """
        if not math.isfinite(ub) or ub <= 0:
            return 0.0
        c0 = self.c0
        s = 1.0 / ub
        t2 = (2 * c0 * s) ** 2
        coef = np.zeros((len(self.groups), self.dim))
        psi = []
        for k, ((slots, g, _), (x, e, S, D)) in enumerate(zip(self.groups, self._terms(eta))):
            psi.append(D / (c0 * S) if S > 0 else 0.0)
            nrm = math.sqrt(max(S * S - 4 * D, 0.0) + t2)
            gap = (t2 - 4 * D) / (nrm + S)  # nrm - S without cancellation
            kappa = 1 + 2 * c0 * s / nrm
            np.add.at(coef[k], slots, g * (gap + 2 * e) / nrm / (2 * c0 * kappa))
        K = coef.shape[0]
        if K == 1:
            nu = np.ones(1)
        else:
            scale = np.max(np.abs(coef))
            c = np.zeros(K + 1)
            c[-1] = 1.0
            A_ub = np.column_stack([coef.T / scale, -np.ones(self.dim)])
            A_eq = np.append(np.ones(K), 0.0)[None, :]
            lp = linprog(c, A_ub=A_ub, b_ub=np.zeros(self.dim), A_eq=A_eq, b_eq=[1.0],
                         bounds=[(0, None)] * K + [(None, None)], method="highs")
            if lp.status != 0:
                return 0.0
            nu = np.clip(lp.x[:K], 0.0, None)
            nu = nu / nu.sum()
            # The LP solver's tolerances swamp tiny weights; re-solve its
            # complementarity equalities exactly and keep whichever is better.
            sharp = self._sharpen_weights(coef, np.array(psi) <= min(psi) * (1 + 1e-9), eta)
            if sharp is not None and np.max(sharp @ coef) < np.max(nu @ coef):
                nu = sharp
        bound = float(np.max(nu @ coef))
        return math.inf if bound <= 0 else 1.0 / bound

    @staticmethod
    def _sharpen_weights(coef, binding, eta):
        on = np.flatnonzero(binding)
        support = np.flatnonzero(eta > 0)
        A = np.vstack([
            np.column_stack([coef[on][:, support].T, -np.ones(support.size)]),
            np.append(np.ones(on.size), 0.0),
        ])
        rhs = np.append(np.zeros(support.size), 1.0)
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0][:-1]
        if np.any(sol < 0) or not np.all(np.isfinite(sol)):
            return None
        out = np.zeros(coef.shape[0])
        out[on] = sol / sol.sum()
        return out


def _bisect_corner(objective, v, target, iters=60):
    a = np.zeros_like(v)
    for i in range(v.size):
        u = v.copy()
        u[i] = 0.0
        if objective(u) <= target:
            continue
        lo, hi = 0.0, v[i]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            u[i] = mid
            if objective(u) <= target:
                hi = mid
            else:
                lo = mid
        a[i] = lo
    return a


def _probe_monotone(objective, dim, samples, rng_seed=20240611):
    rng = np.random.default_rng(rng_seed)
    step = 1e-6
    for _ in range(samples):
        x = rng.dirichlet(np.ones(dim))
        fx = objective(x)
        if not math.isfinite(fx):
            continue
        for i in range(dim):
            y = x.copy()
            y[i] += step
            fy = objective(y)
            if fy > fx * (1 + 1e-9):
                raise NonMonotoneObjective(
                    f"objective increased along coordinate {i}: {fx!r} -> {fy!r}"
                )


def polyblock_minimize(
    objective: Callable,
    dim: int,
    config: SolverConfig | None = None,
    initial: Sequence[Sequence[float]] = (),
) -> PolyblockResult:
    """Global minimum, within (1 + epsilon), of a decreasing objective on the simplex."""
    config = config or SolverConfig()
    eps = config.epsilon
    if dim == 1:
        one = np.ones(1)
        return PolyblockResult(TimeAllocation(one), float(objective(one)))
    if config.probe_samples:
        _probe_monotone(objective, dim, config.probe_samples)
    corner = getattr(objective, "lower_corner", None)
    if corner is None:
        def corner(v, target):
            return _bisect_corner(objective, v, target)

    polish = getattr(objective, "polish", None) if config.accelerate else None
    certify = getattr(objective, "dual_bound", None) if config.accelerate else None

    best_x = np.full(dim, 1.0 / dim)
    best_f = float(objective(best_x))
    for x0 in initial:
        x0 = np.asarray(x0, dtype=float)
        x0 = x0 / x0.sum()
        f0 = float(objective(x0))
        if f0 < best_f:
            best_x, best_f = x0, f0

    cert = 0.0
    start = np.ones(dim)
    heap = [(float(objective(start)), tuple(start), 0, start)]
    pushed = 1
    upper, lower = [], []
    it = 0
    converged = True
    while heap:
        fv = max(heap[0][0], cert)
        if fv * (1 + eps) >= best_f:
            break
        if it >= config.max_iter:
            converged = False
            break
        *_, v = heapq.heappop(heap)
        it += 1
        upper.append(best_f)
        lower.append(fv)

        target = best_f / (1 + eps)
        a = corner(v, target)
        slack = 1.0 - a.sum()
        if slack < 0:
            continue
        reduced = np.minimum(v, a + slack)
        if np.any(reduced < v):
            v = reduced
            if float(objective(v)) > target:
                continue
        s = v.sum()
        if s <= 0:
            continue
        z = v / s
        fz = float(objective(z))
        if fz < best_f:
            best_x, best_f = z, fz
        if fz <= best_f or it == 1:
            # A few polish rounds: the certificate is valid at any point, and
            # each round usually sharpens the primal point it is built from.
            x = z
            for _ in range(POLISH_ROUNDS if polish is not None else 1):
                if polish is not None:
                    x = polish(x, best_f)
                    fx = float(objective(x))
                    if fx < best_f:
                        best_x, best_f = x, fx
                if certify is not None:
                    cert = max(cert, min(certify(x, best_f), best_f))
                if cert * (1 + eps) >= best_f:
                    break
        if s <= 1.0 + 1e-15:
            continue
        kids = np.repeat(v[None, :], dim, axis=0)
        idx = np.flatnonzero(v > z)
        kids = kids[idx]
        kids[np.arange(idx.size), idx] = z[idx]
        fk = np.atleast_1d(objective(kids))
        cut = best_f / (1 + eps)
        for f_u, u in zip(fk, kids):
            if f_u < cut:
                heapq.heappush(heap, (float(f_u), tuple(u), pushed, u))
                pushed += 1

    if not converged:
        warnings.warn(
            f"polyblock stopped after {it} iterations with gap "
            f"{best_f / max(heap[0][0], cert) - 1 if heap else 0:.3g}",
            MaxIterExceeded,
            stacklevel=2,
        )
    best_x = best_x / best_x.sum()
    return PolyblockResult(TimeAllocation(best_x), best_f, converged, it, upper, lower)


def solve_single(objective: Callable, M: int, config: SolverConfig | None = None) -> PolyblockResult:
    """Optimal single-target time allocation over ``M`` BSs."""
    return polyblock_minimize(objective, M, config)


def solve_single_min_three(objective: Callable, M: int, config: SolverConfig | None = None) -> PolyblockResult:
    """Like :func:`solve_single`, but at least three BSs receive time.

    A two-BS optimum is kept in proportion and scaled by ``1 - min_eta``;
    the freed ``min_eta`` goes to whichever remaining BS gives the lowest
    resulting CRLB (lowest index on ties).
    """
    config = config or SolverConfig()
    if M < 3:
        raise ValueError("at least three BSs are needed")
    if not config.min_eta > 0:
        raise ValueError("min_eta must be > 0")
    res = solve_single(objective, M, config)
    active = res.allocation.active(config.active_threshold)
    if active.size != 2:
        return res
    i, j = active
    pair = np.zeros(M)
    pair[[i, j]] = res.eta[[i, j]] / res.eta[[i, j]].sum()
    best = None
    for q in range(M):
        if q in (i, j):
            continue
        eta = (1 - config.min_eta) * pair
        eta[q] = config.min_eta
        val = float(objective(eta))
        if best is None or val < best[1]:
            best = (eta, val)
    return PolyblockResult(
        TimeAllocation(best[0]), best[1], res.converged, res.iterations,
        res.upper_bounds, res.lower_bounds,
    )


def minmax_objective(plan, table) -> tuple[CrlbObjective, np.ndarray]:
    """Max-over-targets CRLB as a function of the shares of the used slots.

    Returns the objective and the indices of the plan's slots it covers.
    """
    b = np.asarray(plan.b, dtype=bool)
    used = np.flatnonzero(b.any(axis=(0, 1)))
    col = {n: i for i, n in enumerate(used)}
    groups = []
    for k in range(b.shape[0]):
        ms, ns = np.nonzero(b[k])
        if ms.size < 2:
            raise InfeasiblePlan(f"target {k} has {ms.size} association(s); at least 2 are needed")
        groups.append((
            [col[n] for n in ns],
            table.gamma_tilde[k, ms],
            table.azimuth[k, ms],
        ))
    return CrlbObjective(groups, table.c0, used.size), used


def solve_minmax(plan, table, config: SolverConfig | None = None) -> PolyblockResult:
    """Slot shares minimizing the worst target's CRLB under a fixed association."""
    objective, used = minmax_objective(plan, table)
    res = polyblock_minimize(objective, used.size, config)
    eta = np.zeros(plan.b.shape[2])
    eta[used] = res.eta
    return PolyblockResult(
        TimeAllocation(eta), res.value, res.converged, res.iterations,
        res.upper_bounds, res.lower_bounds,
    )


def simplex_lattice(dim: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in multiples of 1/resolution.

    Rows are in lexicographic order.
    """
    if dim == 1:
        return np.array([[resolution]], dtype=np.int64)
    blocks = []
    for i in range(resolution + 1):
        sub = simplex_lattice(dim - 1, resolution - i)
        blocks.append(np.column_stack([np.full(len(sub), i, dtype=np.int64), sub]))
    return np.concatenate(blocks)


def grid_oracle(objective: Callable, dim: int, resolution: int = 200, max_points: int = 2_000_000):
    """Exhaustive minimum over the regular simplex lattice."""
    count = math.comb(resolution + dim - 1, dim - 1)
    if count > max_points:
        raise DimensionTooLarge(f"{count} lattice points exceed the limit of {max_points}")
    pts = simplex_lattice(dim, resolution) / resolution
    vals = np.concatenate([
        np.atleast_1d(objective(pts[i:i + 200_000])) for i in range(0, len(pts), 200_000)
    ])
    i = int(np.argmin(vals))
    return pts[i], float(vals[i])
