import random
from dataclasses import replace
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from conftest import conv_stack, models, random_model, random_ratios
from rfsplit import (EMPTY, FusedPlan, InsufficientNeighborError, RfTrace, allocate_ratios,
                     assign_slices, backprop_rows_within_block, exchange_sizes, input_rows,
                     output_rows, rf_forward, rf_oracle, verify_coverage)
from rfsplit.partition import count, idle_es, intersect


def random_plan(rng, n):
    ends = sorted(rng.sample(range(1, n), rng.randint(0, n - 1))) + [n]
    return FusedPlan.from_ends(ends)


# ratios

@pytest.mark.parametrize("throughputs,expected", [
    ((1, 1), (F(1, 2), F(1, 2))),
    ((2, 1, 1), (F(1, 2), F(1, 4), F(1, 4))),
    ((3.5,), (F(1),)),
])
def test_allocate_ratios(throughputs, expected):
    assert allocate_ratios(throughputs) == expected


def test_allocate_ratios_rejects_empty_and_nonpositive():
    with pytest.raises(ValueError):
        allocate_ratios([])
    with pytest.raises(ValueError):
        allocate_ratios([1, 0])


# output rows

@pytest.mark.parametrize("size,ratios,expected", [
    (10, (F(1, 2), F(1, 2)), [(1, 5), (6, 10)]),
    (10, (F(3, 10), F(7, 10)), [(1, 3), (4, 10)]),
    (7, (F(1, 2), F(1, 2)), [(1, 4), (5, 7)]),
])
def test_output_rows(size, ratios, expected):
    assert output_rows(size, ratios) == expected


def test_output_rows_reports_starved_es():
    rows = output_rows(2, (F(1, 3),) * 3)
    assert rows == [(1, 1), (2, 1), (2, 2)] and idle_es(rows, (F(1, 3),) * 3) == [2]
    assert sum(count(r) for r in rows) == 2


def test_output_rows_zero_ratio_is_empty():
    rows = output_rows(10, (F(1, 2), F(0), F(1, 2)))
    assert count(rows[1]) == 0 and idle_es(rows, (F(1, 2), F(0), F(1, 2))) == []


@pytest.mark.parametrize("ratios", [(F(1, 2), F(1, 3)), (F(3, 2), F(-1, 2))])
def test_output_rows_rejects_bad_ratios(ratios):
    with pytest.raises(ValueError):
        output_rows(10, ratios)


@settings(max_examples=200)
@given(st.integers(1, 500), st.integers(0, 2**32 - 1))
def test_output_rows_partition(size, seed):
    rng = random.Random(seed)
    rows = output_rows(size, random_ratios(rng, rng.randint(1, 10)))
    nxt = 1
    for lo, hi in rows:
        assert lo == nxt and hi >= lo - 1
        nxt = hi + 1
    assert nxt == size + 1


# input rows

@pytest.mark.parametrize("trace,rows,expected", [
    (RfTrace(10, 1, 5, F(1)), (1, 5), (1, 7)),
    (RfTrace(10, 1, 5, F(1)), (6, 10), (4, 10)),
    (RfTrace(10, 1, 1, F(1)), (3, 6), (3, 6)),
])
def test_input_rows(trace, rows, expected):
    assert input_rows(trace, rows, 10) == expected


def test_input_rows_empty_slice():
    assert input_rows(RfTrace(10, 1, 5, F(1)), (6, 5), 10) == EMPTY


def _oracle_union(model, a, b, rows, in_size):
    lo = hi = None
    for pixel in range(rows[0], rows[1] + 1):
        x, y = rf_oracle(model, a, b, pixel)
        x, y = max(x, 1), min(y, in_size)
        if x <= y:
            lo = x if lo is None else min(lo, x)
            hi = y if hi is None else max(hi, y)
    return EMPTY if lo is None else (lo, hi)


@settings(max_examples=60, deadline=None)
@given(models(max_layers=6), st.integers(0, 2**32 - 1))
def test_input_rows_equal_oracle_union(model, seed):
    rng = random.Random(seed)
    n = model.num_spatial
    a = rng.randint(1, n)
    b = rng.randint(a, n)
    in_size = model.out_size(a - 1)
    trace = rf_forward(model, a, b)
    for rows in output_rows(model.out_size(b), random_ratios(rng, rng.randint(1, 6))):
        assert input_rows(trace, rows, in_size) == _oracle_union(model, a, b, rows, in_size)


# backprop

def test_backprop_two_convs():
    m = conv_stack(10, 1, [(3, 1, 1, 1), (3, 1, 1, 1)])
    assert backprop_rows_within_block(m, (1, 2), (1, 5)) == {1: (1, 6), 2: (1, 5)}


def test_backprop_single_layer():
    m = conv_stack(10, 1, [(3, 1, 1, 1)])
    assert backprop_rows_within_block(m, (1, 1), (3, 7)) == {1: (3, 7)}


def test_backprop_full_rows_cover_every_layer(vgg):
    rows = backprop_rows_within_block(vgg, (1, 18), (1, vgg.out_size(18)))
    assert all(rows[i] == (1, vgg.out_size(i)) for i in range(1, 19))


def _stride_one_model(rng, max_layers=6):
    size, layers = rng.randint(8, 40), []
    cur = size
    for _ in range(rng.randint(2, max_layers)):
        k = rng.randint(1, 7)
        p = rng.randint(0, (k - 1) // 2)
        if cur + 2 * p - k + 1 < 1:
            break
        cur += 2 * p - k + 1
        layers.append((k, 1, p, rng.randint(1, 4)))
    if len(layers) < 2:
        layers = [(3, 1, 1, 2), (3, 1, 1, 2)]
    return conv_stack(size, rng.randint(1, 4), layers)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merging_blocks_never_shrinks_computed_rows(seed):
    # holds for stride-1 layers with at most "same" padding and for ESs that
    # keep output rows; strided layers or a starved ES can re-quantize the
    # split so that an ES computes fewer rows after merging
    rng = random.Random(seed)
    model = _stride_one_model(rng)
    n = model.num_spatial
    a = rng.randint(1, n - 1)
    b = rng.randint(a + 1, n)
    c = rng.randint(a, b - 1)
    outer = ([a - 1] if a > 1 else []), ([n] if b < n else [])
    ratios = random_ratios(rng, rng.randint(1, 5))
    split = assign_slices(model, FusedPlan.from_ends(outer[0] + [c, b] + outer[1]), ratios)
    merged = assign_slices(model, FusedPlan.from_ends(outer[0] + [b] + outer[1]), ratios)
    m = len(outer[0])
    for k, sl in enumerate(merged.blocks[m]):
        if sl.empty:
            continue
        for layer, rows in sl.layer_rows.items():
            own = split.blocks[m + (layer > c)][k].layer_rows[layer]
            assert intersect(rows, own) == own
    try:
        before = exchange_sizes(model, split.plan, split)
        after = exchange_sizes(model, merged.plan, merged)
    except InsufficientNeighborError:
        return
    # the merged boundary disappears; the gather and later exchanges are untouched
    assert len(after.blocks) == len(before.blocks) - 1
    assert after.blocks[m + 1:] == before.blocks[m + 2:]


# exchange

def test_first_block_distribution():
    m = conv_stack(224, 3, [(3, 1, 1, 8)] * 3)
    slices = assign_slices(m, FusedPlan.single(3), (F(1, 2), F(1, 2)))
    assert slices.blocks[0][1].in_rows == (110, 224)
    ex = exchange_sizes(m, slices.plan, slices)
    assert ex.blocks[0].bytes == 4 * 115 * 224 * 3 == 309_120
    assert ex.blocks[0].pairs == {(1, 2): 309_120}


def _interior_model():
    return conv_stack(10, 16, [(1, 1, 0, 16), (3, 1, 1, 16), (3, 1, 1, 16)])


def test_interior_halo_exchange():
    m = _interior_model()
    plan = FusedPlan(((1, 1), (2, 3)))
    slices = assign_slices(m, plan, (F(1, 2), F(1, 2)))
    assert [s.in_rows for s in slices.blocks[1]] == [(1, 7), (4, 10)]
    ex = exchange_sizes(m, plan, slices)
    assert ex.blocks[1].pairs == {(1, 2): 1280, (2, 1): 1280}
    assert ex.blocks[1].bytes == 2560


def test_strict_mode_bills_a_row_without_overlap():
    m = conv_stack(10, 16, [(1, 1, 0, 16), (1, 1, 0, 16)])
    plan = FusedPlan.per_layer(2)
    slices = assign_slices(m, plan, (F(1, 2), F(1, 2)))
    assert exchange_sizes(m, plan, slices).blocks[1].bytes == 0
    strict = exchange_sizes(m, plan, slices, strict=True).blocks[1]
    assert strict.pairs == {(1, 2): 640, (2, 1): 640}


def test_single_es_exchanges_nothing(vgg):
    plan = FusedPlan.per_layer(18)
    slices = assign_slices(vgg, plan, (F(1),))
    assert exchange_sizes(vgg, plan, slices).total == 0
    assert exchange_sizes(vgg, plan, slices, strict=True).total == 0


def test_terminal_gather(vgg):
    plan = FusedPlan.single(18)
    slices = assign_slices(vgg, plan, (F(1, 2), F(1, 2)))
    gather = exchange_sizes(vgg, plan, slices).blocks[-1]
    assert gather.pairs == {(2, 1): 4 * 3 * 7 * 512}


def test_insufficient_neighbor():
    m = conv_stack(6, 1, [(1, 1, 0, 1)] + [(3, 1, 1, 1)] * 3)
    plan = FusedPlan(((1, 1), (2, 4)))
    slices = assign_slices(m, plan, (F(1, 3),) * 3)
    with pytest.raises(InsufficientNeighborError):
        exchange_sizes(m, plan, slices)
    assert not verify_coverage(m, plan, slices)


def test_idle_holder_between_neighbours_is_skipped():
    m = conv_stack(10, 1, [(1, 1, 0, 1), (3, 1, 1, 1)])
    plan = FusedPlan.per_layer(2)
    slices = assign_slices(m, plan, (F(1, 2), F(0), F(1, 2)))
    ex = exchange_sizes(m, plan, slices)
    assert ex.blocks[1].pairs == {(1, 3): 40, (3, 1): 40}
    assert verify_coverage(m, plan, slices)


def _halo_oracle(model, plan, slices):
    """Per-pair bytes recomputed from scratch: rows needed that another ES holds."""
    out = []
    for m in range(1, len(plan.blocks)):
        a = plan.blocks[m][0]
        row_bytes = model.element_bytes * model.out_size(a - 1) * model.out_channels(a - 1)
        pairs = {}
        for k, sl in enumerate(slices.blocks[m], 1):
            for q, prev in enumerate(slices.blocks[m - 1], 1):
                n = count(intersect(sl.in_rows, prev.out_rows))
                if q != k and n:
                    pairs[(q, k)] = row_bytes * n
        out.append(pairs)
    return out


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feasible_iff_coverage(seed):
    rng = random.Random(seed)
    model = random_model(rng, max_layers=8)
    plan = random_plan(rng, model.num_spatial)
    slices = assign_slices(model, plan, random_ratios(rng, rng.randint(1, 6)))
    try:
        ex = exchange_sizes(model, plan, slices)
    except InsufficientNeighborError:
        assert not verify_coverage(model, plan, slices)
        return
    assert verify_coverage(model, plan, slices)
    # zero overlap means zero traffic; otherwise exactly the overlap is moved
    assert [b.pairs for b in ex.blocks[1:-1]] == _halo_oracle(model, plan, slices)


# coverage

@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_coverage_on_vgg(vgg, k):
    ratios = (F(1, k),) * k
    for plan in (FusedPlan.single(18), FusedPlan.per_layer(18),
                 FusedPlan.from_ends([2, 4, 7, 10, 14, 18])):
        slices = assign_slices(vgg, plan, ratios)
        try:
            exchange_sizes(vgg, plan, slices)
        except InsufficientNeighborError:
            assert not verify_coverage(vgg, plan, slices)
            continue
        assert verify_coverage(vgg, plan, slices), (k, str(plan))


def _mutate(slices, m, k, field_name, which, delta):
    block = list(slices.blocks[m])
    sl = block[k]
    rows = list(getattr(sl, field_name))
    rows[which] += delta
    block[k] = replace(sl, **{field_name: tuple(rows)})
    blocks = list(slices.blocks)
    blocks[m] = tuple(block)
    return replace(slices, blocks=tuple(blocks))


def test_decremented_input_end_fails_at_boundary(vgg):
    plan = FusedPlan.single(18)
    slices = assign_slices(vgg, plan, (F(1, 2), F(1, 2)))
    result = verify_coverage(vgg, plan, _mutate(slices, 0, 0, "in_rows", 1, -1))
    assert not result
    assert result.es == 1 and result.pixel == slices.blocks[0][0].out_rows[1]


def all_single_row_mutations(slices):
    for m, block in enumerate(slices.blocks):
        for k in range(len(block)):
            for name in ("in_rows", "out_rows"):
                for which in (0, 1):
                    for delta in (-1, 1):
                        yield _mutate(slices, m, k, name, which, delta)


def test_every_single_row_mutation_is_detected(vgg):
    plan = FusedPlan.from_ends([2, 4, 7, 10, 14, 18])
    slices = assign_slices(vgg, plan, (F(1, 4),) * 4)
    assert verify_coverage(vgg, plan, slices)
    for mutated in all_single_row_mutations(slices):
        assert not verify_coverage(vgg, plan, mutated)
