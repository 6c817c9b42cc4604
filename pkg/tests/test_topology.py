import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simdprop.machine import MachineConfig
from simdprop.topology import (Layer, Topology, TopologyError, backward_ordering,
                               capacity_check, format_topology, layered, nettalk,
                               parse_topology, partition_bundles)


def brute_force_weights(t):
    """Count connections one pair at a time, without looking at compiled blocks."""
    n = 0
    for src, dst in t.blocks:
        for _s, _d in itertools.product(t.layer_units(src), t.layer_units(dst)):
            n += 1
    if t.has_true_unit:
        n += sum(t.layers[d].size for d in t.computed_layers)
    return n


def test_nettalk_counts():
    t = nettalk()
    assert t.num_weights == 13826
    assert t.num_units == 290
    assert t.num_input_weights == 12240
    assert t.true_unit == 203


def test_single_weight_net():
    t = Topology((Layer("a", 1), Layer("b", 1)), ((0, 1),), has_true_unit=False)
    assert (t.num_weights, t.num_input_weights, t.num_units) == (1, 1, 2)


def test_432_counting_rule(net432):
    assert net432.num_weights == 4 * 3 + 1 * 3 + 3 * 2 + 1 * 2


def test_true_unit_is_last_source_of_input_block(net432):
    blk = net432.weight_blocks[0]
    assert blk.is_input and blk.src_stop - 1 == net432.true_unit


def test_bias_block_for_layer_without_input_feed():
    t = layered(3, 4, 2)
    kinds = [(b.src_layer, b.dst_layer, b.is_input) for b in t.weight_blocks]
    # the true unit feeds the output through its own non-input block
    assert (0, 2, False) in kinds
    assert t.num_input_weights == (3 + 1) * 4


@pytest.mark.parametrize("text, line", [
    ("layer a 2\nlayer b x\n", 2),
    ("layer a 2\nconnect a zz\n", 2),
    ("layer a 0\n", 1),
    ("layer a 2\nlayer a 3\n", 2),
    ("layer a 2\nfrobnicate\n", 2),
    ("layer a 2\nlayer b 2\ncopy a[0] b\n", 3),
    ("layer a 2\ntrue_unit maybe\n", 2),
])
def test_syntax_errors_report_position(text, line):
    with pytest.raises(TopologyError) as exc:
        parse_topology(text)
    assert exc.value.line == line
    assert exc.value.column is not None


def test_cycle_rejected():
    with pytest.raises(TopologyError, match="cycle"):
        parse_topology("layer a 2\nlayer b 2\nlayer c 2\n"
                       "connect a b\nconnect b c\nconnect c b\n")


def test_copy_must_go_to_earlier_layer():
    text = ("layer in 2\nlayer ctx 2\nlayer hid 2\nlayer out 1\n"
            "connect in hid\nconnect ctx hid\nconnect hid out\n")
    parse_topology(text + "copy hid[0] ctx[0]\n")
    with pytest.raises(TopologyError):
        parse_topology(text + "copy ctx[0] hid[0]\n")


def test_elman_layers(elman):
    assert elman.context_layers == (1,)
    assert len(elman.copy_pairs) == 4


@given(sizes=st.lists(st.integers(1, 9), min_size=2, max_size=5), tu=st.booleans())
@settings(max_examples=60, deadline=None)
def test_weight_count_matches_enumeration(sizes, tu):
    t = layered(*sizes, true_unit=tu)
    assert t.num_weights == brute_force_weights(t)
    assert len(t.connections()) == t.num_weights


@given(sizes=st.lists(st.integers(1, 9), min_size=2, max_size=5), tu=st.booleans())
@settings(max_examples=60, deadline=None)
def test_format_parse_round_trip(sizes, tu):
    t = layered(*sizes, true_unit=tu)
    assert parse_topology(format_topology(t)) == t


def test_round_trip_with_copies(elman):
    assert parse_topology(format_topology(elman)) == elman


def test_nettalk_input_block_bundles():
    t = nettalk()
    bundles = [b for b in partition_bundles(t, 1024) if b.block == 0]
    assert len(bundles) == 12
    assert all(b.size <= 1024 for b in bundles)
    assert sum(b.size for b in bundles) == 12240


def test_one_bundle_per_block_when_b_large(net432):
    assert len(partition_bundles(net432, net432.num_weights)) == len(net432.weight_blocks)


def test_432_b6_splits_input_block(net432):
    b = [x for x in partition_bundles(net432, 6) if x.block == 0]
    # 5 source rows of 3 (4 inputs + true unit): 2 + 2 + 1 rows
    assert [x.size for x in b] == [6, 6, 3]
    assert sum(x.size for x in b[:2]) == 12


def test_bundle_too_small(net432):
    with pytest.raises(TopologyError):
        partition_bundles(net432, 2)


@given(sizes=st.lists(st.integers(1, 8), min_size=2, max_size=4),
       extra=st.integers(0, 40))
@settings(max_examples=80, deadline=None)
def test_bundles_partition_weights(sizes, extra):
    t = layered(*sizes)
    b = t.max_dst_size + extra
    bundles = partition_bundles(t, b)
    covered = [i for x in bundles for i in range(x.start, x.stop)]
    assert covered == list(range(t.num_weights))
    assert all(x.size <= b for x in bundles)
    for x in bundles:
        blk = t.weight_blocks[x.block]
        assert blk.offset <= x.start and x.stop <= blk.offset + blk.size


def test_backward_ordering_2x2():
    t = Topology((Layer("a", 2), Layer("b", 2)), ((0, 1),), has_true_unit=False)
    (b,) = partition_bundles(t, 4)
    # source-major storage: (s0,d0)=0 (s0,d1)=1 (s1,d0)=2 (s1,d1)=3
    assert backward_ordering(b) == [0, 2, 1, 3]


def test_backward_ordering_single_row_is_identity():
    t = Topology((Layer("a", 1), Layer("b", 7)), ((0, 1),), has_true_unit=False)
    (b,) = partition_bundles(t, 7)
    assert backward_ordering(b) == list(range(7))


@given(m=st.integers(1, 12), n=st.integers(1, 12))
def test_backward_ordering_gap(m, n):
    t = Topology((Layer("a", m), Layer("b", n)), ((0, 1),), has_true_unit=False)
    (b,) = partition_bundles(t, m * n)
    order = backward_ordering(b)
    assert sorted(order) == list(range(b.start, b.stop))
    src = [(i - b.start) // n for i in order]
    dst = [(i - b.start) % n for i in order]
    assert dst == sorted(dst)
    # every source unit comes back exactly once per destination, m accesses later
    gaps = {}
    for pos, s in enumerate(src):
        gaps.setdefault(s, []).append(pos)
    assert all(q - p == m for pos in gaps.values() for p, q in zip(pos, pos[1:]))


def test_capacity_nettalk_unit_limit():
    rep = capacity_check(nettalk(), MachineConfig(), 1024, 34)
    assert rep["units"].limit == 6656
    assert rep.ok


def test_capacity_dram_boundary():
    cfg = MachineConfig(dram_words=3 * 23)
    assert capacity_check(layered(4, 3, 2), cfg, 64, 0)["dram"].margin == 0
    assert capacity_check(layered(4, 3, 2), cfg, 64, 0).ok


def test_capacity_too_many_units():
    t = layered(6990, 9)
    rep = capacity_check(t, MachineConfig(), 1024, 0)
    assert t.num_units == 7000
    assert not rep["units"].ok and not rep.ok
