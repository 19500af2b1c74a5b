"""Computation/communication timing of fused-block plans and the per-layer baseline.

Units: seconds, bytes, bits per second. ``link_rate`` is in bits/s, so a
transfer of ``n`` bytes costs ``8 * n / link_rate``. Gbps and MBytes are
decimal (1e9 bits, 1e6 bytes).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .model import NetworkModel, layer_flops, rf_forward
from .partition import (BlockExchange, EsSlice, FusedPlan, SliceAssignment, allocate_ratios,
                        assign_slices, count, distribution_exchange,
                        gather_exchange, halo_exchange, input_rows, output_rows)

DEFAULT_EFFICIENCY = 0.35
DENSE_KEY = "dense"


@dataclass(frozen=True, eq=False)
class EsProfile:
    """One edge server.

    ``measured`` overrides the synthetic FLOPs model. Keys are
    ``(layer, rows)`` for one layer producing ``rows`` output rows,
    ``(start, end, rows)`` for a whole block whose last layer produces
    ``rows`` rows on this ES, or ``"dense"`` for the dense tail. Values are
    seconds.
    """

    name: str
    peak_ops: float
    efficiency: float = DEFAULT_EFFICIENCY
    measured: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.peak_ops > 0:
            raise ValueError(f"{self.name}: peak throughput must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"{self.name}: efficiency must be in (0, 1]")

    @property
    def throughput(self) -> float:
        return self.peak_ops * self.efficiency

    @classmethod
    def from_tflops(cls, name: str, tflops: float, efficiency: float = DEFAULT_EFFICIENCY,
                    measured: Mapping | None = None) -> "EsProfile":
        return cls(name, tflops * 1e12, efficiency, dict(measured or {}))


RTX_2080TI = EsProfile.from_tflops("rtx2080ti", 13.45)
GTX_1080TI = EsProfile.from_tflops("gtx1080ti", 11.3)
AGX_XAVIER = EsProfile.from_tflops("agx-xavier", 1.41)


@dataclass(frozen=True, eq=False)
class ClusterSpec:
    """Ordered edge servers (index 0 is the primary) sharing one link rate in bits/s."""

    es: tuple[EsProfile, ...]
    link_rate: float

    def __post_init__(self):
        object.__setattr__(self, "es", tuple(self.es))
        if not self.es:
            raise ValueError("cluster needs at least one ES")
        if not self.link_rate > 0:
            raise ValueError("link rate must be positive")

    def __len__(self):
        return len(self.es)

    def take(self, k: int) -> "ClusterSpec":
        if not 1 <= k <= len(self.es):
            raise ValueError(f"cluster has only {len(self.es)} ESs")
        return ClusterSpec(self.es[:k], self.link_rate)

    def with_rate(self, link_rate: float) -> "ClusterSpec":
        return replace(self, link_rate=link_rate)

    def ratios(self) -> tuple[Fraction, ...]:
        return allocate_ratios([e.throughput for e in self.es])

    @classmethod
    def homogeneous(cls, k: int, profile: EsProfile = RTX_2080TI,
                    link_rate: float = 100e9) -> "ClusterSpec":
        return cls(tuple(replace(profile, name=f"{profile.name}-{i}") for i in range(1, k + 1)),
                   link_rate)

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterSpec":
        shared = _parse_measured(doc.get("measured_times", {}))
        es = []
        for i, entry in enumerate(doc["es"], 1):
            measured = dict(shared)
            measured.update(_parse_measured(entry.get("measured_times", {})))
            es.append(EsProfile.from_tflops(entry.get("name", f"es{i}"), float(entry["tflops"]),
                                            float(entry.get("efficiency", DEFAULT_EFFICIENCY)),
                                            measured))
        return cls(tuple(es), float(doc["link_rate_gbps"]) * 1e9)


def _parse_measured(table: dict) -> dict:
    """``{"3": {"112": s}, "1-4": {"32": s}, "dense": s}`` to profile keys."""
    out = {}
    for key, value in table.items():
        if key == DENSE_KEY:
            out[DENSE_KEY] = float(value)
            continue
        for rows, seconds in value.items():
            if "-" in key:
                a, b = (int(x) for x in key.split("-"))
                out[(a, b, int(rows))] = float(seconds)
            else:
                out[(int(key), int(rows))] = float(seconds)
    return out


def load_cluster(path: str | Path) -> ClusterSpec:
    with open(path) as fh:
        return ClusterSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class BlockTiming:
    """``layers`` is ``None`` for the dense tail computed on the primary."""

    layers: tuple[int, int] | None
    t_cmp: float
    t_com: float
    t_inf: float
    bytes: int
    per_es: tuple[float, ...]
    pairs: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class TimingReport:
    blocks: tuple[BlockTiming, ...]
    num_es: int
    link_rate: float
    method: str = "dpfp"
    gathered_bytes: int = 0
    note: str = ""

    @property
    def t_cmp(self) -> float:
        return math.fsum(b.t_cmp for b in self.blocks)

    @property
    def t_com(self) -> float:
        return math.fsum(b.t_com for b in self.blocks)

    @property
    def t_inf(self) -> float:
        return math.fsum(b.t_inf for b in self.blocks)

    @property
    def bytes(self) -> int:
        return sum(b.bytes for b in self.blocks)

    @property
    def spatial(self) -> tuple[BlockTiming, ...]:
        return tuple(b for b in self.blocks if b.layers is not None)

    @property
    def plan(self) -> FusedPlan:
        return FusedPlan(tuple(b.layers for b in self.spatial))


def block_comm_time(nbytes: float, link_rate: float) -> float:
    if not link_rate > 0:
        raise ValueError("link rate must be positive")
    return 8 * nbytes / link_rate


def exchange_time(exchange: BlockExchange, link_rate: float, concurrent: bool = False) -> float:
    """Time for one block's exchange.

    The default charges the whole volume serially. ``concurrent`` charges only
    the largest directed transfer, as if every pair ran in parallel.
    """
    if concurrent:
        return block_comm_time(max(exchange.pairs.values(), default=0), link_rate)
    return block_comm_time(exchange.bytes, link_rate)


def block_compute_time(model: NetworkModel, block: tuple[int, int], es_slice: EsSlice,
                       es: EsProfile) -> float:
    """Seconds ES needs to compute its slice of ``block`` including halo rows."""
    if es_slice.empty:
        return 0.0
    a, b = block
    key = (a, b, count(es_slice.out_rows))
    if key in es.measured:
        return es.measured[key]
    flops, measured = 0, 0.0
    for i in range(a, b + 1):
        rows = count(es_slice.layer_rows[i])
        if (i, rows) in es.measured:
            measured += es.measured[(i, rows)]
        else:
            flops += layer_flops(model.layer(i), rows, model.out_size(i))
    return measured + flops / es.throughput


def dense_compute_time(model: NetworkModel, es: EsProfile) -> float:
    if DENSE_KEY in es.measured:
        return es.measured[DENSE_KEY]
    return sum(layer_flops(d, 1, 1) for d in model.dense_layers) / es.throughput


def spatial_block_timing(model: NetworkModel, a: int, b: int, cluster: ClusterSpec,
                         slices: Sequence[EsSlice], held: Sequence | None, *,
                         strict: bool = False, concurrent: bool = False) -> BlockTiming:
    """Timing of block ``a..b``.

    ``held`` is the previous block's output rows, ``None`` for the first block.
    """
    if a == 1:
        exchange = distribution_exchange(model, a, slices)
    else:
        exchange = halo_exchange(model, a, slices, held, strict)
    t_com = exchange_time(exchange, cluster.link_rate, concurrent)
    per_es = tuple(block_compute_time(model, (a, b), sl, es) for sl, es in zip(slices, cluster.es))
    t_cmp = max(per_es)
    return BlockTiming((a, b), t_cmp, t_com, t_cmp + t_com, exchange.bytes, per_es,
                       exchange.pairs)


def terminal_timing(model: NetworkModel, cluster: ClusterSpec, last_rows: Sequence,
                    concurrent: bool = False) -> BlockTiming:
    exchange = gather_exchange(model, last_rows)
    t_com = exchange_time(exchange, cluster.link_rate, concurrent)
    t_cmp = dense_compute_time(model, cluster.es[0])
    return BlockTiming(None, t_cmp, t_com, t_cmp + t_com, exchange.bytes, (t_cmp,),
                       exchange.pairs)


def plan_time(model: NetworkModel, plan: FusedPlan, cluster: ClusterSpec,
              slices: SliceAssignment | None = None, *, strict: bool = False,
              concurrent: bool = False) -> TimingReport:
    """Per-block and total inference time of ``plan`` on every ES of ``cluster``."""
    plan.check(model)
    if slices is None:
        slices = assign_slices(model, plan, cluster.ratios())
    if slices.num_es != len(cluster):
        raise ValueError(f"slices are for {slices.num_es} ESs, cluster has {len(cluster)}")
    blocks, held = [], None
    for (a, b), block in zip(plan, slices.blocks):
        blocks.append(spatial_block_timing(model, a, b, cluster, block, held,
                                           strict=strict, concurrent=concurrent))
        held = [sl.out_rows for sl in block]
    blocks.append(terminal_timing(model, cluster, held, concurrent))
    return TimingReport(tuple(blocks), len(cluster), cluster.link_rate)


def modnn_baseline_time(model: NetworkModel, cluster: ClusterSpec,
                        ratios: Sequence[Fraction] | None = None, *,
                        redistribute: bool = False) -> TimingReport:
    """Per-layer partitioning that merges every layer's output on the primary.

    Each block's communication is what must happen before it starts: the
    initial sub-input distribution for layer 1, then the gather of the previous
    layer's sub-outputs (plus, with ``redistribute``, the primary sending the
    next sub-inputs back out). The dense tail is charged the final gather.
    """
    ratios = tuple(ratios) if ratios is not None else cluster.ratios()
    eb, n = model.element_bytes, model.num_spatial
    blocks, gathered, prev_rows = [], 0, None
    for i in range(1, n + 1):
        layer, of, in_size = model.layer(i), model.out_size(i), model.out_size(i - 1)
        rows = output_rows(of, ratios)
        trace = rf_forward(model, i, i)
        sub_inputs = [count(input_rows(trace, r, in_size)) for r in rows]
        in_row_bytes = eb * in_size * model.out_channels(i - 1)
        pairs = {}
        if i == 1 or redistribute:
            for k in range(2, len(rows) + 1):
                pairs[(1, k)] = in_row_bytes * sub_inputs[k - 1]
        if prev_rows is not None:
            for k in range(2, len(rows) + 1):
                pairs[(k, 1)] = in_row_bytes * count(prev_rows[k - 1])
                gathered += pairs[(k, 1)]
        exchange = BlockExchange(sum(pairs.values()), {p: v for p, v in pairs.items() if v})
        per_es = []
        for r, es in zip(rows, cluster.es):
            if (i, count(r)) in es.measured:
                per_es.append(es.measured[(i, count(r))])
            else:
                per_es.append(layer_flops(layer, count(r), of) / es.throughput)
        t_com = exchange_time(exchange, cluster.link_rate)
        t_cmp = max(per_es)
        blocks.append(BlockTiming((i, i), t_cmp, t_com, t_cmp + t_com, exchange.bytes,
                                  tuple(per_es), exchange.pairs))
        prev_rows = rows
    tail = terminal_timing(model, cluster, prev_rows)
    gathered += tail.bytes
    note = "gather+redistribute" if redistribute else "gather-only"
    return TimingReport(tuple(blocks) + (tail,), len(cluster), cluster.link_rate,
                        "modnn", gathered, note)
