"""Receptive-field-based row partitioning of fused blocks across edge servers.

Rows are 1-based inclusive ``(start, end)`` pairs. An empty range has
``end == start - 1``; empty input ranges are always ``EMPTY``.
ES indices in exchange breakdowns are 1-based with ES 1 the primary.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .model import NetworkModel, RfTrace, rf_forward

log = logging.getLogger(__name__)

Rows = tuple[int, int]
EMPTY: Rows = (1, 0)


class InsufficientNeighborError(RuntimeError):
    """A needed input row is held by an ES that is not an immediate neighbour."""


def count(rows: Rows) -> int:
    return max(0, rows[1] - rows[0] + 1)


def intersect(a: Rows, b: Rows) -> Rows:
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (lo, hi) if lo <= hi else EMPTY


def _clamp(lo: int, hi: int, size: int) -> Rows:
    lo, hi = max(lo, 1), min(hi, size)
    return (lo, hi) if lo <= hi else EMPTY


@dataclass(frozen=True)
class FusedPlan:
    """Contiguous blocks of spatial layers; the dense tail is an implicit last block."""

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        blocks = tuple((int(a), int(b)) for a, b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise ValueError("plan has no blocks")
        expected = 1
        for a, b in blocks:
            if a != expected or b < a:
                raise ValueError(f"blocks must tile 1..N contiguously, got {blocks}")
            expected = b + 1

    @property
    def num_layers(self) -> int:
        return self.blocks[-1][1]

    @property
    def ends(self) -> tuple[int, ...]:
        return tuple(b for _, b in self.blocks)

    @classmethod
    def from_ends(cls, ends: Sequence[int]) -> "FusedPlan":
        starts = [1] + [e + 1 for e in ends[:-1]]
        return cls(tuple(zip(starts, ends)))

    @classmethod
    def single(cls, n: int) -> "FusedPlan":
        return cls(((1, n),))

    @classmethod
    def per_layer(cls, n: int) -> "FusedPlan":
        return cls(tuple((i, i) for i in range(1, n + 1)))

    def check(self, model: NetworkModel):
        if self.num_layers != model.num_spatial:
            raise ValueError(f"plan covers {self.num_layers} layers, model has "
                             f"{model.num_spatial} spatial layers")

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __str__(self):
        return " ".join(f"[{a},{b}]" if a != b else f"[{a}]" for a, b in self.blocks)


def allocate_ratios(throughputs: Sequence[float]) -> tuple[Fraction, ...]:
    """Split ratios proportional to each ES's effective throughput."""
    if not throughputs:
        raise ValueError("empty cluster")
    weights = [Fraction(t) for t in throughputs]
    if any(w <= 0 for w in weights):
        raise ValueError("throughputs must be positive")
    total = sum(weights)
    return tuple(w / total for w in weights)


def check_ratios(ratios: Sequence[Fraction]):
    if not ratios:
        raise ValueError("no ratios")
    if any(r < 0 or r > 1 for r in ratios):
        raise ValueError(f"ratios must lie in [0, 1]: {ratios}")
    if sum(Fraction(r) for r in ratios) != 1:
        raise ValueError(f"ratios must sum to 1: {ratios}")


def output_rows(size: int, ratios: Sequence[Fraction]) -> list[Rows]:
    """Per-ES output row ranges from cumulative ratios, rounded half-up.

    Rounding the running sum (not each share) keeps the ranges contiguous
    and exhaustive.
    """
    check_ratios(ratios)
    rows, cum, prev = [], Fraction(0), 0
    for eta in ratios:
        cum += Fraction(eta)
        end = math.floor(cum * size + Fraction(1, 2))
        rows.append((prev + 1, end))
        prev = end
    starved = idle_es(rows, ratios)
    if starved:
        log.debug("output size %d leaves ES %s with no rows", size, starved)
    return rows


def idle_es(rows: Sequence[Rows], ratios: Sequence[Fraction]) -> list[int]:
    """ESs with a positive ratio that still received no rows."""
    return [k for k, (eta, r) in enumerate(zip(ratios, rows), 1) if eta > 0 and count(r) == 0]


def input_rows(trace: RfTrace, rows: Rows, in_size: int) -> Rows:
    """Clamped input rows whose receptive fields cover output ``rows``."""
    if count(rows) == 0:
        return EMPTY
    half = (trace.field - 1) // 2
    lo0 = math.floor(trace.center) - half
    hi0 = math.ceil(trace.center) + half
    # skip edge rows whose whole field lies in the padding
    first = max(rows[0], 1 + -(-(1 - hi0) // trace.jump))
    last = min(rows[1], 1 + (in_size - lo0) // trace.jump)
    if first > last:
        return EMPTY
    return _clamp(lo0 + (first - 1) * trace.jump, hi0 + (last - 1) * trace.jump, in_size)


def backprop_rows_within_block(model: NetworkModel, block: tuple[int, int],
                               rows: Rows) -> dict[int, Rows]:
    """Output rows each layer of ``block`` must compute to produce ``rows``.

    Walks backwards from the block's last layer through the sliding windows,
    clamping to each layer's output size. Rows beyond the ES's own share are
    the halo that fusing forces it to recompute.
    """
    a, b = block
    out = {b: rows if count(rows) else EMPTY}
    cur = out[b]
    for i in range(b, a, -1):
        if count(cur):
            layer = model.layer(i)
            cur = _clamp(layer.window(cur[0])[0], layer.window(cur[1])[1], model.out_size(i - 1))
        out[i - 1] = cur
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class EsSlice:
    out_rows: Rows
    in_rows: Rows
    layer_rows: dict[int, Rows] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return count(self.out_rows) == 0


@dataclass(frozen=True)
class SliceAssignment:
    plan: FusedPlan
    ratios: tuple[Fraction, ...]
    blocks: tuple[tuple[EsSlice, ...], ...]

    @property
    def num_es(self) -> int:
        return len(self.ratios)


def block_slices(model: NetworkModel, a: int, b: int,
                 ratios: Sequence[Fraction]) -> tuple[EsSlice, ...]:
    trace = rf_forward(model, a, b)
    in_size = model.out_size(a - 1)
    slices = []
    for rows in output_rows(model.out_size(b), ratios):
        slices.append(EsSlice(rows, input_rows(trace, rows, in_size),
                              backprop_rows_within_block(model, (a, b), rows)))
    return tuple(slices)


def assign_slices(model: NetworkModel, plan: FusedPlan,
                  ratios: Sequence[Fraction]) -> SliceAssignment:
    plan.check(model)
    ratios = tuple(Fraction(r) for r in ratios)
    return SliceAssignment(plan, ratios,
                           tuple(block_slices(model, a, b, ratios) for a, b in plan))


@dataclass(frozen=True)
class BlockExchange:
    """Bytes moved before a block starts; ``pairs`` maps (src, dst) ES to bytes."""

    bytes: int
    pairs: dict[tuple[int, int], int]


@dataclass(frozen=True)
class Exchange:
    """Per-block exchanges; the last entry is the gather before the dense block."""

    blocks: tuple[BlockExchange, ...]

    @property
    def total(self) -> int:
        return sum(b.bytes for b in self.blocks)


def _finish(pairs: dict) -> BlockExchange:
    pairs = {key: v for key, v in sorted(pairs.items()) if v}
    return BlockExchange(sum(pairs.values()), pairs)


def distribution_exchange(model: NetworkModel, a: int,
                          slices: Sequence[EsSlice]) -> BlockExchange:
    """Primary ships each secondary its sub-input (used for the first block)."""
    row_bytes = model.element_bytes * model.out_size(a - 1) * model.out_channels(a - 1)
    return _finish({(1, k): row_bytes * count(sl.in_rows)
                    for k, sl in enumerate(slices, 1) if k > 1})


def _holders_adjacent(held: Sequence[Rows], k: int, q: int) -> bool:
    lo, hi = sorted((k, q))
    return all(count(held[i]) == 0 for i in range(lo + 1, hi))


def halo_exchange(model: NetworkModel, a: int, slices: Sequence[EsSlice],
                  held: Sequence[Rows], strict: bool = False) -> BlockExchange:
    """Rows each ES fetches from its neighbours to start block ``a..``.

    ``held`` is each ES's output range from the previous block. By default a
    transfer is the intersection of the needed rows with the neighbour's
    holding. ``strict`` charges the literal ``max(OE - IS, 0) + 1`` rows per
    neighbour instead, which bills one row even when nothing overlaps.
    """
    row_bytes = model.element_bytes * model.out_size(a - 1) * model.out_channels(a - 1)
    held = [None] + list(held)  # 1-based
    pairs = defaultdict(int)
    for k, sl in enumerate(slices, 1):
        if count(sl.in_rows) == 0:
            continue
        for q in range(1, len(held)):
            if q == k:
                continue
            overlap = count(intersect(sl.in_rows, held[q]))
            if not overlap:
                continue
            if not _holders_adjacent(held, k, q):
                raise InsufficientNeighborError(
                    f"block starting at layer {a}: ES {k} needs rows {sl.in_rows} but ES {q} "
                    f"holding {held[q]} is not an immediate neighbour")
            pairs[(q, k)] += row_bytes * overlap
    if not strict:
        return _finish(pairs)

    literal = {}
    last = len(slices)
    for k, sl in enumerate(slices, 1):
        if count(sl.in_rows) == 0:
            continue
        if k > 1:
            literal[(k - 1, k)] = row_bytes * (max(held[k - 1][1] - sl.in_rows[0], 0) + 1)
        if k < last:
            literal[(k + 1, k)] = row_bytes * (max(sl.in_rows[1] - held[k + 1][0], 0) + 1)
    return _finish(literal)


def gather_exchange(model: NetworkModel, last_rows: Sequence[Rows]) -> BlockExchange:
    """Secondaries return their final spatial output to the primary."""
    n = model.num_spatial
    row_bytes = model.element_bytes * model.out_size(n) * model.out_channels(n)
    return _finish({(k, 1): row_bytes * count(rows)
                    for k, rows in enumerate(last_rows, 1) if k > 1})


def exchange_sizes(model: NetworkModel, plan: FusedPlan, slices: SliceAssignment,
                   strict: bool = False) -> Exchange:
    blocks = []
    for m, (a, _) in enumerate(plan):
        if m == 0:
            blocks.append(distribution_exchange(model, a, slices.blocks[0]))
        else:
            held = [sl.out_rows for sl in slices.blocks[m - 1]]
            blocks.append(halo_exchange(model, a, slices.blocks[m], held, strict))
    blocks.append(gather_exchange(model, [sl.out_rows for sl in slices.blocks[-1]]))
    return Exchange(tuple(blocks))


@dataclass(frozen=True)
class Coverage:
    ok: bool
    block: int | None = None
    es: int | None = None
    pixel: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def _oracle_clamped(model: NetworkModel, a: int, b: int, pixel: int, in_size: int) -> Rows:
    lo, hi = pixel, pixel
    for i in range(b, a - 1, -1):
        layer = model.layer(i)
        lo, hi = layer.window(lo)[0], layer.window(hi)[1]
    return _clamp(lo, hi, in_size)


def verify_coverage(model: NetworkModel, plan: FusedPlan, slices: SliceAssignment) -> Coverage:
    """Check every assigned output row against its brute-force receptive field.

    A slice passes only if the output rows tile the block output, the declared
    input rows are exactly the clamped union of the fields it needs, and every
    needed row is reachable (sent by the primary for the first block, held
    locally or by an immediate neighbour afterwards).
    """
    for m, (a, b) in enumerate(plan, 1):
        in_size, out_size = model.out_size(a - 1), model.out_size(b)
        block = slices.blocks[m - 1]
        nxt = 1
        for k, sl in enumerate(block, 1):
            os_, oe = sl.out_rows
            if os_ != nxt or oe < os_ - 1 or oe > out_size:
                return Coverage(False, m, k, min(max(nxt, 1), out_size),
                                "output rows do not tile the block output")
            nxt = oe + 1
        if nxt != out_size + 1:
            return Coverage(False, m, len(block), min(nxt, out_size),
                            "output rows do not cover the block output")

        held = [None] + [sl.out_rows for sl in slices.blocks[m - 2]] if m > 1 else None
        for k, sl in enumerate(block, 1):
            if sl.empty:
                if sl.in_rows != EMPTY:
                    return Coverage(False, m, k, None, "input rows on an idle ES")
                continue
            in_lo, in_hi = sl.in_rows
            if count(sl.in_rows) and (in_lo < 1 or in_hi > in_size):
                return Coverage(False, m, k, sl.out_rows[0], "input rows outside the tensor")
            avail = sl.in_rows
            if held is not None:
                near = [q for q in range(1, len(held))
                        if count(held[q]) and (q == k or _holders_adjacent(held, k, q))]
                reach = (held[near[0]][0], held[near[-1]][1]) if near else EMPTY
                avail = intersect(avail, reach)
            env_lo = env_hi = None
            for pixel in range(sl.out_rows[0], sl.out_rows[1] + 1):
                need = _oracle_clamped(model, a, b, pixel, in_size)
                if not count(need):
                    continue
                if not count(avail) or need[0] < avail[0] or need[1] > avail[1]:
                    return Coverage(False, m, k, pixel, f"input rows {need} not available")
                env_lo = need[0] if env_lo is None else min(env_lo, need[0])
                env_hi = need[1] if env_hi is None else max(env_hi, need[1])
            expected = EMPTY if env_lo is None else (env_lo, env_hi)
            if sl.in_rows != expected:
                pixel = sl.out_rows[0] if sl.in_rows[0] != expected[0] else sl.out_rows[1]
                return Coverage(False, m, k, pixel,
                                f"input rows {sl.in_rows} exceed needed {expected}")
    return Coverage(True)
