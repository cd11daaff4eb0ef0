"""Sparse lattice of multiplicity vectors.

Every posterior object in this package is a finite mixture indexed by
integer vectors ``n = (n_1, ..., n_K)`` that record how many copies of each
distinct observed value are retained.  The lattice below a top vector ``m``
is the componentwise box ``{n : 0 <= n <= m}``; its size explodes
multiplicatively, so node sets are always stored sparsely as hashable
tuples mapped to weights.
"""

from __future__ import annotations

from itertools import product as _cartesian
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

#: A multiplicity vector: one nonnegative count per distinct observed value.
Node = tuple[int, ...]

#: Weights below this threshold are dropped (and the set renormalized)
#: after any normalization; keeps the active set small, since propagation
#: leaves most lattice nodes with negligible mass.
PRUNE_EPS = 1e-10

#: Largest lattice cardinality representable without risking downstream
#: integer trouble in foreign-format exports.
_MAX_LATTICE_SIZE = 2**63 - 1


class LatticeOverflowError(OverflowError):
    """Lattice cardinality exceeds the supported integer range."""


def make_node(counts: Iterable[int]) -> Node:
    """Validate and freeze a multiplicity vector."""
    node = tuple(int(c) for c in counts)
    if any(c < 0 for c in node):
        raise ValueError(f"multiplicities must be nonnegative, got {node}")
    return node


def node_total(node: Sequence[int]) -> int:
    """|n|, the total retained multiplicity."""
    return int(sum(node))


def node_leq(a: Sequence[int], b: Sequence[int]) -> bool:
    """Componentwise partial order a <= b."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return all(x <= y for x, y in zip(a, b))


def counts_of(values: Sequence, distinct: Sequence) -> Node:
    """Multiplicities of `distinct` in `values`.

    Every observation must occur in `distinct`; an unknown value is
    rejected with the offending value reported.
    """
    index = {y: i for i, y in enumerate(distinct)}
    out = [0] * len(distinct)
    for y in values:
        if y not in index:
            raise ValueError(f"value {y!r} does not occur among the distinct values")
        out[index[y]] += 1
    return tuple(out)


def lattice_size(top: Sequence[int]) -> int:
    """prod_j (1 + top_j), the cardinality of the box below `top`."""
    size = 1
    for c in top:
        if c < 0:
            raise ValueError(f"multiplicities must be nonnegative, got {tuple(top)}")
        size *= 1 + int(c)
        if size > _MAX_LATTICE_SIZE:
            raise LatticeOverflowError(
                f"lattice below {tuple(top)} exceeds {_MAX_LATTICE_SIZE} nodes"
            )
    return size


def enumerate_below(top: Sequence[int]) -> set[Node]:
    """All nodes n with 0 <= n <= top componentwise.

    Materializes lattice_size(top) tuples; check the size first when the
    top node is large.
    """
    top = make_node(top)
    if len(top) == 0:
        return {()}
    return set(_cartesian(*(range(c + 1) for c in top)))


def iter_below(top: Sequence[int]) -> Iterator[Node]:
    """Lazy variant of enumerate_below."""
    top = make_node(top)
    if len(top) == 0:
        yield ()
        return
    yield from _cartesian(*(range(c + 1) for c in top))


class WeightedNodeSet:
    """A sparse probability table over multiplicity vectors.

    Immutable after construction: all operations return new sets, so
    instances are safe to share read-only across parallel workers.
    """

    __slots__ = ("_entries", "_dim")

    def __init__(self, entries: Mapping[Node, float], *, normalize: bool = False):
        if not entries:
            raise ValueError("a weighted node set needs at least one node")
        items = {}
        dim = None
        for node, w in entries.items():
            node = make_node(node)
            if dim is None:
                dim = len(node)
            elif len(node) != dim:
                raise ValueError(
                    f"all nodes must share one dimension, got {dim} and {len(node)}"
                )
            w = float(w)
            if w < 0.0:
                raise ValueError(f"negative weight {w} at node {node}")
            items[node] = items.get(node, 0.0) + w
        total = sum(items.values())
        if normalize:
            if total <= 0.0:
                raise ValueError("cannot normalize: total weight is zero")
            items = {n: w / total for n, w in items.items()}
        elif abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {total}); pass normalize=True")
        self._entries = items
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def weight(self, node: Sequence[int]) -> float:
        return self._entries.get(tuple(node), 0.0)

    def items(self):
        return self._entries.items()

    def nodes(self):
        return self._entries.keys()

    def as_dict(self) -> dict[Node, float]:
        return dict(self._entries)

    def top(self) -> Node:
        """Componentwise maximum over the support."""
        return tuple(max(col) for col in zip(*self._entries)) if self._dim else ()

    def total(self) -> float:
        return sum(self._entries.values())

    def normalized(self) -> "WeightedNodeSet":
        return WeightedNodeSet(self._entries, normalize=True)

    def pruned(self, eps: float = PRUNE_EPS) -> "WeightedNodeSet":
        """Drop nodes below `eps` and renormalize."""
        kept = {n: w for n, w in self._entries.items() if w >= eps}
        if not kept:
            # everything was negligible; keep the heaviest node
            best = max(self._entries, key=self._entries.get)
            kept = {best: 1.0}
        return WeightedNodeSet(kept, normalize=True)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(nodes, weights) in canonical lexicographic node order."""
        order = sorted(self._entries)
        nodes = np.array(order, dtype=np.int64).reshape(len(order), self._dim)
        weights = np.array([self._entries[n] for n in order], dtype=np.float64)
        return nodes, weights

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, node) -> bool:
        return tuple(node) in self._entries

    def __eq__(self, other) -> bool:
        return isinstance(other, WeightedNodeSet) and self._entries == other._entries

    def __repr__(self) -> str:
        body = ", ".join(f"{n}: {w:.4g}" for n, w in sorted(self._entries.items()))
        return f"WeightedNodeSet({{{body}}})"


def extend_support(nodes: WeightedNodeSet, new_distinct_count: int) -> WeightedNodeSet:
    """Zero-pad every node to a larger dimension; weights are untouched."""
    if new_distinct_count < nodes.dim:
        raise ValueError(
            f"cannot shrink support from {nodes.dim} to {new_distinct_count}"
        )
    if new_distinct_count == nodes.dim:
        return nodes
    pad = (0,) * (new_distinct_count - nodes.dim)
    return WeightedNodeSet({n + pad: w for n, w in nodes.items()})
