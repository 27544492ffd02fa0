"""BS-IRS association: interference graph, plan constraints and slot packing.

A plan is a binary tensor ``b[k, m, n]``: target ``k`` reflects towards BS
``m`` during slot ``n``. Within a slot each BS and each target appears at
most once, each (target, BS) link is used in at most one slot, and two
links of different targets may share a slot only if neither target's
flattened beam towards its BS covers the other link's BS.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import BudgetTable, budget_table
from .crlb import DEGENERACY_TOL, crlb_multitarget, two_bs_optimal
from .errors import NoFeasiblePair
from .geometry import Scenario, link_geometry
from .polyblock import (
    CrlbObjective,
    SolverConfig,
    TimeAllocation,
    solve_minmax,
    solve_single,
)

SCHEMES = ("proposed", "average", "closest", "time_division")

# Relative tolerance under which two pair CRLBs count as tied.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class InterferenceGraph:
    """``w[k, m, m2]`` is True when target k's beam towards BS m also reaches BS m2."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=bool).copy()
        if w.ndim != 3 or w.shape[1] != w.shape[2]:
            raise ValueError("w must have shape (K, M, M)")
        idx = np.arange(w.shape[1])
        w[:, idx, idx] = False
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def empty(cls, K: int, M: int) -> InterferenceGraph:
        return cls(np.zeros((K, M, M), dtype=bool))

    @classmethod
    def full(cls, K: int, M: int) -> InterferenceGraph:
        return cls(np.ones((K, M, M), dtype=bool))

    @property
    def n_targets(self) -> int:
        return self.w.shape[0]

    @property
    def n_bs(self) -> int:
        return self.w.shape[1]

    def clashes(self, k: int, m: int, k2: int, m2: int) -> bool:
        """Whether links (k, m) and (k2, m2) of different targets interfere in one slot."""
        return bool(self.w[k, m, m2] or self.w[k2, m2, m])


def _inside(value: float, span) -> bool:
    return span[0] <= value <= span[1]


def build_interference_graph(scenario: Scenario) -> InterferenceGraph:
    """Interference graph tested at each target's prior center.

    Link (k, m) interferes with BS m2 when m2's spatial frequency along x or
    along y falls inside the span that target k's beam towards m covers.
    """
    K, M = scenario.n_targets, scenario.n_bs
    geo = [[link_geometry(scenario, k, m) for m in range(M)] for k in range(K)]
    w = np.zeros((K, M, M), dtype=bool)
    for k in range(K):
        for m, m2 in itertools.permutations(range(M), 2):
            g, g2 = geo[k][m], geo[k][m2]
            w[k, m, m2] = _inside(g2.phi, g.phi_span) or _inside(g2.omega, g.omega_span)
    return InterferenceGraph(w)


@dataclass(frozen=True)
class AssociationPlan:
    """Binary association tensor with shape (K, M, N).

    ``links[k]`` lists the BSs target k is associated with, in the order
    they were chosen.
    """

    b: np.ndarray
    links: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        b = np.asarray(self.b)
        if b.ndim != 3:
            raise ValueError("b must have shape (K, M, N)")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "links", tuple(tuple(int(m) for m in ms) for ms in self.links))

    @property
    def N(self) -> int:
        return self.b.shape[2]

    @property
    def pair_choice(self) -> tuple[tuple[int, ...], ...]:
        return self.links

    @property
    def n_measurements(self) -> int:
        return int(self.b.sum())

    @classmethod
    def from_slots(cls, K: int, M: int, slots: Sequence[Sequence[tuple[int, int]]], links) -> AssociationPlan:
        b = np.zeros((K, M, len(slots)), dtype=np.int8)
        for n, slot in enumerate(slots):
            for k, m in slot:
                b[k, m, n] = 1
        return cls(b, links)

    def slots(self) -> list[list[tuple[int, int]]]:
        return [
            [(int(k), int(m)) for k, m in zip(*np.nonzero(self.b[:, :, n]))]
            for n in range(self.N)
        ]


def check_plan(plan: AssociationPlan, graph: InterferenceGraph) -> list[str]:
    """All constraint violations of ``plan``; empty when it is feasible."""
    b = np.asarray(plan.b)
    out = []
    bad = np.argwhere((b != 0) & (b != 1))
    out += [f"P1g: b[{k},{m},{n}] = {b[k, m, n]} is not binary" for k, m, n in bad]
    b = b != 0
    for m, n in np.argwhere(b.sum(axis=0) > 1):
        out.append(f"P1d: BS {m} serves targets {np.flatnonzero(b[:, m, n]).tolist()} in slot {n}")
    for k, n in np.argwhere(b.sum(axis=1) > 1):
        out.append(f"P1e: target {k} uses BSs {np.flatnonzero(b[k, :, n]).tolist()} in slot {n}")
    for k, m in np.argwhere(b.sum(axis=2) > 1):
        out.append(f"P1f: link ({k},{m}) appears in slots {np.flatnonzero(b[k, m]).tolist()}")
    w = graph.w
    if w.shape[:2] != b.shape[:2]:
        out.append(f"graph shape {w.shape} does not match plan shape {b.shape}")
        return out
    for n in range(b.shape[2]):
        live = np.argwhere(b[:, :, n])
        for (k, m), (k2, m2) in itertools.permutations(live.tolist(), 2):
            if k != k2 and w[k, m, m2]:
                out.append(f"interference: link ({k},{m}) reaches BS {m2} used by target {k2} in slot {n}")
    return out


@dataclass(frozen=True)
class PairChoice:
    """Best two-BS association of one target under the two-BS closed form."""

    bs: tuple[int, int]
    eta: tuple[float, float]
    crlb: float

    @property
    def normalized(self) -> tuple[float, float]:
        return (self.crlb * self.eta[0], self.crlb * self.eta[1])


def _pair(table: BudgetTable, k: int, m1: int, m2: int) -> PairChoice:
    g = table.gamma_tilde[k]
    e1, e2, val = two_bs_optimal(g[m1], g[m2], table.azimuth[k, m2] - table.azimuth[k, m1], table.c0)
    return PairChoice((m1, m2), (e1, e2), val)


def choose_pairs(table: BudgetTable, candidates: Sequence[Sequence[int]] | None = None) -> list[PairChoice]:
    """Minimum-CRLB BS pair per target by exhaustive scan.

    ``candidates[k]`` optionally restricts target k to a subset of BSs.
    Ties within a relative 1e-12 go to the lexicographically smallest pair.
    """
    out = []
    for k in range(table.n_targets):
        pool = range(table.n_bs) if candidates is None else sorted(candidates[k])
        best = None
        for m1, m2 in itertools.combinations(pool, 2):
            s2 = math.sin(table.azimuth[k, m2] - table.azimuth[k, m1]) ** 2
            if s2 <= DEGENERACY_TOL:
                continue
            cand = _pair(table, k, m1, m2)
            if best is None or cand.crlb < best.crlb * (1 - _TIE_RTOL):
                best = cand
        if best is None:
            raise NoFeasiblePair(f"every BS pair is collinear with target {k}")
        out.append(best)
    return out


def closest_pairs(scenario: Scenario, table: BudgetTable) -> list[PairChoice]:
    """The two nearest BSs of each target, with their two-BS optimal split."""
    out = []
    for k in range(table.n_targets):
        order = np.argsort(table.distance[k], kind="stable")
        m1, m2 = sorted(int(i) for i in order[:2])
        out.append(_pair(table, k, m1, m2))
    return out


class _Slots:
    """Mutable slot assignment used while packing."""

    def __init__(self, graph: InterferenceGraph):
        self.graph = graph
        self.by_bs: list[dict[int, int]] = []  # slot -> {bs: target}
        self.by_target: list[dict[int, int]] = []  # slot -> {target: bs}

    def __len__(self):
        return len(self.by_bs)

    def open(self) -> int:
        self.by_bs.append({})
        self.by_target.append({})
        return len(self.by_bs) - 1

    def fits(self, n: int, k: int, m: int) -> bool:
        if m in self.by_bs[n] or k in self.by_target[n]:
            return False
        return not any(self.graph.clashes(k, m, k2, m2) for m2, k2 in self.by_bs[n].items())

    def valid(self, n: int) -> bool:
        links = list(self.by_bs[n].items())
        return not any(
            self.graph.clashes(k, m, k2, m2)
            for (m, k), (m2, k2) in itertools.combinations(links, 2)
        )

    def put(self, n: int, k: int, m: int) -> None:
        self.by_bs[n][m] = k
        self.by_target[n][k] = m

    def take(self, n: int, k: int, m: int) -> None:
        del self.by_bs[n][m]
        del self.by_target[n][k]

    def _chain(self, m: int, a: int, c: int) -> list[tuple[int, int, int]]:
        """Alternating a/c path starting at BS m through its slot-a link."""
        path = []
        node, is_bs, col = m, True, a
        while True:
            table = self.by_bs[col] if is_bs else self.by_target[col]
            if node not in table:
                return path
            other = table[node]
            k, b = (other, node) if is_bs else (node, other)
            path.append((col, k, b))
            node, is_bs, col = other, not is_bs, (c if col == a else a)

    def kempe_insert(self, k: int, m: int) -> bool:
        """Place (k, m) by swapping slots along an alternating chain.

        Chooses slot ``a`` free at target k and slot ``c`` free at BS m,
        recolors the a/c chain from m so that m becomes free in ``a``, and
        keeps the change only if both slots stay interference-free.
        """
        free_k = [n for n in range(len(self)) if k not in self.by_target[n]]
        free_m = [n for n in range(len(self)) if m not in self.by_bs[n]]
        for a in free_k:
            for c in free_m:
                if a == c:
                    continue
                path = self._chain(m, a, c)
                for col, kk, bb in path:
                    self.take(col, kk, bb)
                for col, kk, bb in path:
                    self.put(c if col == a else a, kk, bb)
                if m not in self.by_bs[a] and k not in self.by_target[a]:
                    self.put(a, k, m)
                    if self.valid(a) and self.valid(c):
                        return True
                    self.take(a, k, m)
                for col, kk, bb in path:
                    self.take(c if col == a else a, kk, bb)
                for col, kk, bb in path:
                    self.put(col, kk, bb)
        return False


def pack_slots(
    pairs: Sequence[PairChoice] | Sequence[Sequence[int]],
    graph: InterferenceGraph,
    order: Sequence[float] | None = None,
) -> AssociationPlan:
    """Greedy first-fit packing of associations into time slots.

    ``pairs`` holds either :class:`PairChoice` objects or plain BS tuples per
    target. Links are placed in ascending normalized time ratio (``order``
    overrides it, one key per link in target-major order; ties by target then
    BS index). A link that fits no open slot is first tried with a Kempe-chain
    swap of two slots before a new slot is opened.
    """
    links, keys = [], []
    for k, p in enumerate(pairs):
        bs = p.bs if isinstance(p, PairChoice) else tuple(p)
        ratios = p.normalized if isinstance(p, PairChoice) else (0.0,) * len(bs)
        links.append(bs)
        keys += [(r, k, m) for m, r in zip(bs, ratios)]
    if order is not None:
        keys = [(o, k, m) for o, (_, k, m) in zip(order, keys)]
    keys.sort()

    slots = _Slots(graph)
    for _, k, m in keys:
        for n in range(len(slots)):
            if slots.fits(n, k, m):
                slots.put(n, k, m)
                break
        else:
            if not slots.kempe_insert(k, m):
                slots.put(slots.open(), k, m)

    K, M = graph.n_targets, graph.n_bs
    content = [[(k, m) for m, k in s.items()] for s in slots.by_bs]
    return AssociationPlan.from_slots(K, M, content, links)


@dataclass(frozen=True)
class CountingBounds:
    n_min: int
    k_max: int


def min_slots(K: int, M: int, interference: str = "none") -> int:
    if K < 1 or M < 2:
        raise ValueError("need K >= 1 and M >= 2")
    if interference == "none":
        return max(math.ceil(2 * K / M), 2)
    if interference == "full":
        return 2 * K
    raise ValueError(f"interference must be 'none' or 'full', got {interference!r}")


def max_targets(M: int, N: int, interference: str = "none") -> int:
    if M < 2 or N < 1:
        raise ValueError("need M >= 2 and N >= 1")
    if interference == "none":
        return (M * N) // 2
    if interference == "full":
        return N // 2
    raise ValueError(f"interference must be 'none' or 'full', got {interference!r}")


def counting_bounds(K: int, M: int, interference: str = "none") -> CountingBounds:
    """Fewest slots for K targets and, at that slot count, the most targets servable."""
    n = min_slots(K, M, interference)
    return CountingBounds(n, max_targets(M, n, interference))


@dataclass(frozen=True)
class SchemeResult:
    scheme: str
    plan: AssociationPlan
    allocation: TimeAllocation
    max_crlb: float
    crlbs: tuple[float, ...]

    @property
    def n_slots(self) -> int:
        return self.plan.N


def _finish(scheme, plan, eta, table) -> SchemeResult:
    reports = crlb_multitarget(plan, eta, table)
    vals = tuple(r.value for r in reports)
    return SchemeResult(scheme, plan, TimeAllocation(eta), max(vals), vals)


def _single_target(scheme, table, config) -> SchemeResult:
    """K = 1: one slot per BS, shares from the single-target solver."""
    M = table.n_bs
    objective = CrlbObjective.single(table.gamma_tilde[0], table.azimuth[0], table.c0)
    eta = solve_single(objective, M, config).eta
    b = np.zeros((1, M, M), dtype=np.int8)
    b[0, np.arange(M), np.arange(M)] = 1
    plan = AssociationPlan(b, [tuple(range(M))])
    return _finish(scheme, plan, np.array(eta), table)


def _average(table, graph) -> SchemeResult:
    M = table.n_bs
    plan = pack_slots([tuple(range(M))] * table.n_targets, graph)
    return _finish("average", plan, np.full(plan.N, 1.0 / plan.N), table)


def _time_division(table, config) -> SchemeResult:
    K, M = table.n_targets, table.n_bs
    config = config or SolverConfig()
    shares, values = [], []
    for k in range(K):
        objective = CrlbObjective.single(table.gamma_tilde[k], table.azimuth[k], table.c0)
        res = solve_single(objective, M, config)
        eta = np.where(res.eta > config.active_threshold, res.eta, 0.0)
        eta /= eta.sum()
        shares.append(eta)
        values.append(float(objective(eta)))
    # A target given a fraction tau of the window has CRLB value/tau; equal
    # CRLBs need tau proportional to value.
    tau = np.array(values) / sum(values)
    slots, etas, links = [], [], []
    for k, eta in enumerate(shares):
        active = np.flatnonzero(eta > 0)
        links.append(tuple(int(m) for m in active))
        for m in active:
            slots.append([(k, int(m))])
            etas.append(tau[k] * eta[m])
    plan = AssociationPlan.from_slots(K, M, slots, links)
    etas = np.array(etas)
    return _finish("time_division", plan, etas / etas.sum(), table)


def _paired(scheme, pairs, table, graph, config) -> SchemeResult:
    plan = pack_slots(pairs, graph)
    res = solve_minmax(plan, table, config)
    return _finish(scheme, plan, np.array(res.eta), table)


def embed_plan(plan: AssociationPlan, targets: Sequence[int] | None = None, n_bs: int | None = None) -> AssociationPlan:
    """Restrict a plan to ``targets`` and/or widen it to ``n_bs`` BSs (new BSs unused)."""
    b = np.asarray(plan.b)
    links = plan.links
    if targets is not None:
        b = b[list(targets)]
        links = [links[k] for k in targets]
    if n_bs is not None and n_bs > b.shape[1]:
        pad = np.zeros((b.shape[0], n_bs - b.shape[1], b.shape[2]), dtype=b.dtype)
        b = np.concatenate([b, pad], axis=1)
    keep = b.any(axis=(0, 1))
    return AssociationPlan(b[:, :, keep], links)


def run_scheme(
    scenario: Scenario,
    scheme: str,
    table: BudgetTable | None = None,
    graph: InterferenceGraph | None = None,
    config: SolverConfig | None = None,
    incumbent: AssociationPlan | None = None,
) -> SchemeResult:
    """Association plan, slot shares and per-target CRLBs of one scheme.

    For ``proposed`` with an ``incumbent`` plan that is feasible here, the
    better of the incumbent (re-optimized) and the fresh plan is returned.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    table = table or budget_table(scenario)
    graph = graph or build_interference_graph(scenario)
    if scheme == "time_division":
        return _time_division(table, config)
    if scheme == "average":
        return _average(table, graph)
    if table.n_targets == 1:
        if scheme == "proposed":
            return _single_target(scheme, table, config)
        return _paired(scheme, closest_pairs(scenario, table), table, graph, config)
    if scheme == "closest":
        return _paired(scheme, closest_pairs(scenario, table), table, graph, config)

    fresh = _paired(scheme, choose_pairs(table), table, graph, config)
    if incumbent is None or check_plan(incumbent, graph):
        return fresh
    res = solve_minmax(incumbent, table, config)
    kept = _finish(scheme, incumbent, np.array(res.eta), table)
    return kept if kept.max_crlb < fresh.max_crlb else fresh


def benchmark_plans(scenario: Scenario, table: BudgetTable, scheme: str, config: SolverConfig | None = None):
    """Plan and shares of a benchmark scheme (``average``, ``closest`` or ``time_division``)."""
    if scheme == "proposed":
        raise ValueError("benchmark_plans covers the benchmarks; use run_scheme for 'proposed'")
    res = run_scheme(scenario, scheme, table, config=config)
    return res.plan, res.allocation
