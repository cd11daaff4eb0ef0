import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvddp.lattice import (
    LatticeOverflowError,
    WeightedNodeSet,
    counts_of,
    enumerate_below,
    extend_support,
    lattice_size,
    node_leq,
)

small_tops = st.lists(st.integers(min_value=0, max_value=4), min_size=1, max_size=4)


def test_counts_of_basic():
    assert counts_of(("a", "b", "a"), ("a", "b")) == (2, 1)
    assert counts_of((), ("a", "b")) == (0, 0)


def test_counts_of_two_times_gives_top_node():
    # two identical two-value batches stack up to (2, 2)
    data = ["y1", "y2", "y1", "y2"]
    assert counts_of(data, ("y1", "y2")) == (2, 2)


def test_counts_of_rejects_unknown_value():
    with pytest.raises(ValueError, match="'c'"):
        counts_of(("a", "c"), ("a", "b"))


def test_enumerate_below_two_two_is_the_nine_node_graph():
    nodes = enumerate_below((2, 2))
    assert len(nodes) == 9
    assert nodes == {(i, j) for i in range(3) for j in range(3)}


def test_enumerate_below_origin():
    assert enumerate_below((0, 0)) == {(0, 0)}


def test_enumerate_below_121():
    nodes = enumerate_below((1, 2, 1))
    assert len(nodes) == 12  # (1+1)(2+1)(1+1)


def test_lattice_size_examples():
    assert lattice_size((2, 2)) == 9
    assert lattice_size((0,)) == 1
    assert lattice_size((4, 4, 4)) == 125
    assert lattice_size((4, 4, 4)) == len(enumerate_below((4, 4, 4)))


def test_lattice_size_overflow_rejected():
    with pytest.raises(LatticeOverflowError):
        lattice_size((2**16,) * 4)


@given(small_tops)
@settings(max_examples=60)
def test_enumeration_matches_product_formula(top):
    assert len(enumerate_below(top)) == lattice_size(top)


@given(small_tops)
@settings(max_examples=60)
def test_partial_order_characterizes_membership(top):
    nodes = enumerate_below(top)
    for n in nodes:
        assert node_leq(n, top)
    # a node one step above the top in any coordinate is not below
    bumped = tuple(c + 1 for c in top)
    assert bumped not in nodes


def test_weighted_node_set_validation():
    with pytest.raises(ValueError):
        WeightedNodeSet({})
    with pytest.raises(ValueError, match="negative"):
        WeightedNodeSet({(1,): -0.5, (0,): 1.5})
    with pytest.raises(ValueError, match="dimension"):
        WeightedNodeSet({(1,): 0.5, (1, 0): 0.5})
    with pytest.raises(ValueError, match="sum to 1"):
        WeightedNodeSet({(1,): 0.7})


@given(
    st.dictionaries(
        st.tuples(st.integers(0, 5), st.integers(0, 5)),
        st.floats(min_value=1e-6, max_value=10.0),
        min_size=1,
        max_size=6,
    )
)
@settings(max_examples=60)
def test_normalization_idempotent_and_ratio_preserving(entries):
    ws = WeightedNodeSet(entries, normalize=True)
    assert abs(ws.total() - 1.0) < 1e-12
    again = ws.normalized()
    for node, w in ws.items():
        assert math.isclose(again.weight(node), w, rel_tol=1e-12)
    nodes = sorted(entries)
    if len(nodes) >= 2:
        a, b = nodes[0], nodes[1]
        assert math.isclose(
            ws.weight(a) / ws.weight(b), entries[a] / entries[b], rel_tol=1e-9
        )


def test_prune_drops_and_renormalizes():
    ws = WeightedNodeSet({(0,): 0.5 - 1e-13, (1,): 0.5 - 1e-13, (2,): 2e-13})
    pruned = ws.pruned(1e-10)
    assert (2,) not in pruned
    assert abs(pruned.total() - 1.0) < 1e-12
    assert abs(pruned.weight((0,)) - 0.5) < 1e-9


def test_extend_support_pads_and_keeps_weights():
    ws = WeightedNodeSet({(1, 1): 1.0})
    assert extend_support(ws, 3).as_dict() == {(1, 1, 0): 1.0}
    assert extend_support(ws, 2) is ws
    two = WeightedNodeSet({(1, 0): 0.25, (0, 2): 0.75})
    padded = extend_support(two, 4)
    assert abs(padded.total() - 1.0) < 1e-12
    assert padded.weight((1, 0, 0, 0)) == 0.25
    with pytest.raises(ValueError, match="shrink"):
        extend_support(two, 1)


def test_top_node():
    ws = WeightedNodeSet({(1, 2): 0.5, (2, 0): 0.5})
    assert ws.top() == (2, 2)
