"""Optimal fused-block partitioning by dynamic programming, with an exhaustive oracle.

Block costs are floats but the search sums them exactly as rationals, so the
DP and the brute force agree bit for bit and a plan's reported total (an
``fsum`` of its blocks) is exactly the optimum found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .cost import (BlockTiming, ClusterSpec, TimingReport, plan_time, spatial_block_timing)
from .model import NetworkModel
from .partition import (FusedPlan, InsufficientNeighborError, assign_slices, block_slices,
                        check_ratios, output_rows)

CostFn = Callable[[int, int], float]
MAX_BRUTE_FORCE = 16


class InfeasiblePlanError(RuntimeError):
    """No partition avoids non-neighbour transfers."""


def _key(total: Fraction, ends: tuple[int, ...]):
    # ties: fewer blocks first, then blocks that end later (front-loaded)
    return total, len(ends), tuple(-e for e in ends)


@dataclass
class DpTable:
    """``best[(i, j)] = (t*, ends)`` over every interval; ``cost`` caches t(i, j)."""

    cost: dict[tuple[int, int], float] = field(default_factory=dict)
    best: dict[tuple[int, int], tuple[Fraction, tuple[int, ...]]] = field(default_factory=dict)

    def t_star(self, i: int, j: int) -> float:
        return float(self.best[(i, j)][0])

    def cut(self, i: int, j: int) -> int:
        """End of the first block in the optimum for ``[i, j]``."""
        return self.best[(i, j)][1][0]


class _CachedCost:
    def __init__(self, fn: CostFn, table: DpTable):
        self.fn, self.table = fn, table

    def __call__(self, i: int, j: int) -> Fraction | None:
        if (i, j) not in self.table.cost:
            self.table.cost[(i, j)] = self.fn(i, j)
        t = self.table.cost[(i, j)]
        return None if math.isinf(t) else Fraction(t)


def optimal_partition(n: int, cost: CostFn) -> tuple[float, FusedPlan, DpTable]:
    """Minimise the summed block cost over all contiguous partitions of ``1..n``.

    ``t*(i, j) = min(t(i, j), min_c t(i, c) + t*(c+1, j))``. The undivided
    interval is a candidate in its own right, so a multi-layer block can win.
    ``cost`` may return ``inf`` for an infeasible block.
    """
    if n < 1:
        raise ValueError("need at least one layer")
    table = DpTable()
    t = _CachedCost(cost, table)
    for length in range(1, n + 1):
        for i in range(1, n - length + 2):
            j = i + length - 1
            best = None
            whole = t(i, j)
            if whole is not None:
                best = (whole, (j,))
            for c in range(i, j):
                head, tail = t(i, c), table.best.get((c + 1, j))
                if head is None or tail is None:
                    continue
                cand = (head + tail[0], (c,) + tail[1])
                if best is None or _key(*cand) < _key(*best):
                    best = cand
            if best is not None:
                table.best[(i, j)] = best
    if (1, n) not in table.best:
        raise InfeasiblePlanError("every partition needs a non-neighbour transfer")
    total, ends = table.best[(1, n)]
    return float(total), FusedPlan.from_ends(ends), table


def exhaustive_partition(n: int, cost: CostFn) -> tuple[float, FusedPlan]:
    """Enumerate all 2**(n-1) partitions; same objective and tie rule as the DP."""
    if n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to N <= {MAX_BRUTE_FORCE}, got {n}")
    cache: dict = {}

    def t(i, j):
        if (i, j) not in cache:
            cache[(i, j)] = cost(i, j)
        return cache[(i, j)]

    best = None
    for mask in range(2 ** (n - 1)):
        ends = tuple(c for c in range(1, n) if mask >> (c - 1) & 1) + (n,)
        total, start = Fraction(0), 1
        for e in ends:
            ti = t(start, e)
            if math.isinf(ti):
                break
            total += Fraction(ti)
            start = e + 1
        else:
            if best is None or _key(total, ends) < _key(*best):
                best = (total, ends)
    if best is None:
        raise InfeasiblePlanError("every partition needs a non-neighbour transfer")
    return float(best[0]), FusedPlan.from_ends(best[1])


def speedup_ratio(t_inf: float, t_pre: float) -> float:
    if not t_pre > 0:
        raise ValueError("reference time must be positive")
    return 1 - t_inf / t_pre


@dataclass
class OptResult:
    plan: FusedPlan
    spatial_time: float
    terminal: BlockTiming
    total: float
    report: TimingReport
    num_es: int
    table: DpTable | None = None
    rho: float = 0.0


class BlockCost:
    """Cached ``t(i, j)``: compute plus the exchange needed to start block ``i..j``.

    Infeasible blocks (a needed row beyond the immediate neighbour) cost ``inf``.
    """

    def __init__(self, model: NetworkModel, cluster: ClusterSpec,
                 ratios: Sequence[Fraction] | None = None, *, strict: bool = False,
                 concurrent: bool = False):
        self.model, self.cluster = model, cluster
        self.ratios = tuple(Fraction(r) for r in ratios) if ratios is not None else cluster.ratios()
        if len(self.ratios) != len(cluster):
            raise ValueError("one ratio per ES required")
        check_ratios(self.ratios)
        self.strict, self.concurrent = strict, concurrent
        self._cache: dict[tuple[int, int], float] = {}

    def timing(self, i: int, j: int) -> BlockTiming:
        slices = block_slices(self.model, i, j, self.ratios)
        held = None if i == 1 else output_rows(self.model.out_size(i - 1), self.ratios)
        return spatial_block_timing(self.model, i, j, self.cluster, slices, held,
                                    strict=self.strict, concurrent=self.concurrent)

    def __call__(self, i: int, j: int) -> float:
        if not 1 <= i <= j <= self.model.num_spatial:
            raise ValueError(f"invalid block [{i}, {j}]")
        if (i, j) not in self._cache:
            try:
                self._cache[(i, j)] = self.timing(i, j).t_inf
            except InsufficientNeighborError:
                self._cache[(i, j)] = math.inf
        return self._cache[(i, j)]


def block_cost(model: NetworkModel, i: int, j: int, cluster: ClusterSpec,
               ratios: Sequence[Fraction] | None = None, **kw) -> float:
    """t(i, j) for a single block; raises ``InsufficientNeighborError`` if infeasible."""
    return BlockCost(model, cluster, ratios, **kw).timing(i, j).t_inf


def _result(model, cluster, ratios, plan, spatial_time, table, kw) -> OptResult:
    slices = assign_slices(model, plan, ratios)
    report = plan_time(model, plan, cluster, slices, **kw)
    return OptResult(plan, spatial_time, report.blocks[-1], report.t_inf, report, len(cluster),
                     table)


def dpfp(model: NetworkModel, cluster: ClusterSpec, ratios: Sequence[Fraction] | None = None,
         **kw) -> OptResult:
    """Optimal fused-block plan for every ES in ``cluster``."""
    cost = BlockCost(model, cluster, ratios, **kw)
    spatial_time, plan, table = optimal_partition(model.num_spatial, cost)
    return _result(model, cluster, cost.ratios, plan, spatial_time, table, kw)


def brute_force_partition(model: NetworkModel, cluster: ClusterSpec,
                          ratios: Sequence[Fraction] | None = None, **kw) -> OptResult:
    cost = BlockCost(model, cluster, ratios, **kw)
    spatial_time, plan = exhaustive_partition(model.num_spatial, cost)
    return _result(model, cluster, cost.ratios, plan, spatial_time, None, kw)


def evaluate_plan(model: NetworkModel, cluster: ClusterSpec, plan: FusedPlan,
                  ratios: Sequence[Fraction] | None = None, **kw) -> OptResult:
    """Cost a given plan; raises ``InsufficientNeighborError`` if a block is infeasible."""
    plan.check(model)
    cost = BlockCost(model, cluster, ratios, **kw)
    spatial = sum((Fraction(cost.timing(a, b).t_inf) for a, b in plan), Fraction(0))
    return _result(model, cluster, cost.ratios, plan, float(spatial), None, kw)


@dataclass
class Sweep:
    results: list[OptResult]
    best_k: int
    t_pre: float


def sweep_cluster_size(model: NetworkModel, cluster: ClusterSpec, k_max: int,
                       **kw) -> Sweep:
    """Run DPFP on the first 1..k_max ESs; speedups are relative to K=1."""
    if not 1 <= k_max <= len(cluster):
        raise ValueError(f"cluster has only {len(cluster)} ESs")
    results = [dpfp(model, cluster.take(k), **kw) for k in range(1, k_max + 1)]
    t_pre = results[0].total
    for r in results:
        r.rho = speedup_ratio(r.total, t_pre)
    best = min(results, key=lambda r: (r.total, r.num_es))
    return Sweep(results, best.num_es, t_pre)

