"""Random partitions induced by draws at a future time.

Ties among predictive draws induce an exchangeable random partition.  Its
sampling scheme is a Chinese restaurant with a conveyor belt: a customer
either sits at an occupied table, picks a dish from the belt (a
time-varying selection of past values governed by the node weights), or
orders a fresh dish from the menu; after every customer the kitchen
readjusts the belt by reweighting the nodes with the chosen value's urn
density.

Partition semantics use the diffuse-baseline idealization: a menu draw
always opens a new dish, and the baseline density of previously seen
values is treated as zero in the weight updates.  This matches the law the
partition probability formula integrates over; with an atomic baseline the
value-level process can produce extra ties with probability of the order
of the baseline's atom masses.  Reported block values are labelled by
rejection sampling from the baseline so labels stay distinct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .death_process import LatticeBudgetError
from .predictive import PredictiveState

__all__ = [
    "PartitionSample",
    "dp_eppf",
    "sample_partition",
    "conveyor_simulate",
    "lemma2_oracle",
    "set_partition_count",
]


@dataclass(frozen=True)
class PartitionSample:
    """Blocks in creation order as (value, size) pairs."""

    blocks: tuple[tuple[object, int], ...]

    def __post_init__(self):
        if any(size < 1 for _, size in self.blocks):
            raise ValueError("block sizes must be at least 1")
        values = [v for v, _ in self.blocks]
        if len(set(values)) != len(values):
            raise ValueError("block values must be distinct")

    @property
    def n(self) -> int:
        return sum(size for _, size in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(size for _, size in self.blocks)

    @property
    def sorted_sizes(self) -> tuple[int, ...]:
        return tuple(sorted(self.sizes, reverse=True))

    def to_json_dict(self) -> dict:
        return {"blocks": [{"value": v, "size": s} for v, s in self.blocks]}


def dp_eppf(sizes: Sequence[int], theta: float) -> float:
    """Exchangeable partition probability of one specific set partition
    with the given block sizes under a plain Dirichlet process:

        theta^q prod_i (n_i - 1)! / (theta (theta+1) ... (theta+n-1)).
    """
    if not sizes:
        raise ValueError("need at least one block")
    if any(s < 1 for s in sizes):
        raise ValueError(f"block sizes must be >= 1, got {tuple(sizes)}")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    n = sum(sizes)
    log_p = len(sizes) * math.log(theta)
    log_p += sum(math.lgamma(s) for s in sizes)
    log_p -= sum(math.log(theta + i) for i in range(n))
    return math.exp(log_p)


def set_partition_count(sizes: Sequence[int]) -> int:
    """How many set partitions of {1..n} share this block-size multiset."""
    n = sum(sizes)
    count = math.factorial(n)
    for s in sizes:
        count //= math.factorial(s)
    mult: dict[int, int] = {}
    for s in sizes:
        mult[s] = mult.get(s, 0) + 1
    for m in mult.values():
        count //= math.factorial(m)
    return count


class _Urn:
    """Node-weight bookkeeping for partition sampling under the
    diffuse-baseline idealization."""

    __slots__ = ("node_arr", "totals", "log_w", "theta", "k")

    def __init__(self, state: PredictiveState):
        if state.k != 0:
            raise ValueError("partition sampling starts from a draw-free state")
        self.node_arr = state.node_arr
        self.totals = state.node_arr.sum(axis=1).astype(np.float64)
        self.log_w = state.log_w.copy()
        self.theta = state.theta
        self.k = 0

    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def coefficients(self) -> tuple[float, np.ndarray, float]:
        w = self.weights()
        denom = self.theta + self.totals + self.k
        a = float(w @ (self.theta / denom))
        c = (w / denom) @ self.node_arr
        b = float(w @ (self.k / denom))
        return a, np.asarray(c, dtype=np.float64), b

    def _apply(self, numer) -> None:
        denom = self.theta + self.totals + self.k
        with np.errstate(divide="ignore"):
            self.log_w = self.log_w + np.log(numer) - np.log(denom)
        self.log_w -= logsumexp(self.log_w)
        self.k += 1

    def update_past(self, i: int, pre_count: int) -> None:
        """Customer received past dish i; pre_count copies were already out."""
        self._apply(self.node_arr[:, i].astype(np.float64) + pre_count)

    def update_fresh(self, pre_count: int) -> None:
        """Customer received a menu dish that already has pre_count copies
        (zero when the dish is newly opened)."""
        self._apply(self.theta if pre_count == 0 else float(pre_count))


def _fresh_label(p0, used: set, rng: np.random.Generator):
    for _ in range(1000):
        value = p0.sample(rng)
        if value not in used:
            return value
    raise ValueError(
        "base measure support is too small to label distinct fresh blocks; "
        "the partition law itself does not depend on the labels"
    )


def sample_partition(
    state: PredictiveState, n: int, rng: np.random.Generator
) -> PartitionSample:
    """Sample the partition of n future draws, block by block.

    Works with the aggregated urn coefficients: a customer opens a new
    block with probability A + sum of the copy masses of still-unused past
    values, and grows an existing block with the Lemma-style factor
    (copy mass of its dish, if any) + B * size / k.
    """
    if n < 1:
        raise ValueError(f"partition size must be >= 1, got {n}")
    urn = _Urn(state)
    available = set(range(len(state.distinct)))
    blocks: list[list] = []  # [dish_index | None, value, size]
    used_labels = set(state.distinct)

    for _ in range(n):
        a, c, b = urn.coefficients()
        masses = [a + sum(c[i] for i in available)]
        for dish, _value, size in blocks:
            grow = b * size / urn.k if urn.k else 0.0
            if dish is not None:
                grow += c[dish]
            masses.append(grow)
        pick = int(
            np.searchsorted(np.cumsum(masses), rng.random() * math.fsum(masses))
        )
        pick = min(pick, len(masses) - 1)

        if pick == 0:
            # open a new block; choose the dish among menu and unused belt values
            head = [a] + [c[i] for i in sorted(available)]
            j = int(np.searchsorted(np.cumsum(head), rng.random() * math.fsum(head)))
            if j == 0:
                value = _fresh_label(state.p0, used_labels, rng)
                used_labels.add(value)
                blocks.append([None, value, 1])
                urn.update_fresh(0)
            else:
                i = sorted(available)[j - 1]
                available.discard(i)
                blocks.append([i, state.distinct[i], 1])
                urn.update_past(i, 0)
        else:
            block = blocks[pick - 1]
            if block[0] is not None:
                urn.update_past(block[0], block[2])
            else:
                urn.update_fresh(block[2])
            block[2] += 1

    return PartitionSample(tuple((v, s) for _, v, s in blocks))


def conveyor_simulate(
    state: PredictiveState, n: int, rng: np.random.Generator
) -> PartitionSample:
    """Customer-by-customer conveyor-belt simulation of the same law.

    Each customer first samples a belt configuration (a node), then sits at
    an occupied table with probability proportional to its occupancy, picks
    a dish from the belt with probability proportional to the node total,
    or orders from the menu; the kitchen reweights the nodes after every
    choice.  Serves as an independent factorization used to cross-check
    sample_partition.
    """
    if n < 1:
        raise ValueError(f"partition size must be >= 1, got {n}")
    urn = _Urn(state)
    blocks: list[list] = []  # [dish_index | None, value, size]
    by_dish: dict[int, int] = {}  # past dish index -> block position
    used_labels = set(state.distinct)

    for _ in range(n):
        w = urn.weights()
        idx = int(np.searchsorted(np.cumsum(w), rng.random(), side="right"))
        idx = min(idx, len(w) - 1)
        node = urn.node_arr[idx]
        node_total = int(node.sum())
        u = rng.random() * (urn.theta + node_total + urn.k)

        if u < urn.k:
            # occupied table, proportional to occupancy
            sizes = np.array([blk[2] for blk in blocks], dtype=np.float64)
            j = int(np.searchsorted(np.cumsum(sizes), rng.random() * urn.k))
            j = min(j, len(blocks) - 1)
            block = blocks[j]
            if block[0] is not None:
                urn.update_past(block[0], block[2])
            else:
                urn.update_fresh(block[2])
            block[2] += 1
        elif u < urn.k + node_total:
            # belt: a retained past value, proportional to its multiplicity
            cum = np.cumsum(node)
            i = int(np.searchsorted(cum, rng.random() * node_total, side="right"))
            i = min(i, len(node) - 1)
            if i in by_dish:
                block = blocks[by_dish[i]]
                urn.update_past(i, block[2])
                block[2] += 1
            else:
                by_dish[i] = len(blocks)
                blocks.append([i, state.distinct[i], 1])
                urn.update_past(i, 0)
        else:
            value = _fresh_label(state.p0, used_labels, rng)
            used_labels.add(value)
            blocks.append([None, value, 1])
            urn.update_fresh(0)

    return PartitionSample(tuple((v, s) for _, v, s in blocks))


def lemma2_oracle(state: PredictiveState, sizes: Sequence[int]) -> float:
    """Exact probability of one specific set partition with the given block
    sizes, by exhaustive recursion over dish assignments.

    Blocks are taken contiguous in customer order (any specific set
    partition with these sizes has the same probability, by
    exchangeability).  Every assignment of block heads to the menu or to
    distinct unused past values is walked customer by customer with the
    exact weight updates.  Limited to sum(sizes) <= 5 and moderately sized
    node sets.
    """
    sizes = tuple(int(s) for s in sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"invalid block sizes {sizes}")
    if sum(sizes) > 5:
        raise LatticeBudgetError(
            f"exhaustive partition recursion is limited to 5 draws, got {sum(sizes)}"
        )
    if len(state.node_list) > 20_000:
        raise LatticeBudgetError(
            f"node set too large for the exhaustive oracle ({len(state.node_list)})"
        )

    K = len(state.distinct)

    def walk(block_idx: int, urn: _Urn, available: frozenset) -> float:
        if block_idx == len(sizes):
            return 1.0
        size = sizes[block_idx]
        total = 0.0

        def grow_and_descend(urn2: _Urn, dish: int | None) -> float:
            prob = 1.0
            for h in range(1, size):
                a, c, b = urn2.coefficients()
                if dish is None:
                    prob *= b * h / urn2.k
                    urn2.update_fresh(h)
                else:
                    prob *= c[dish] + b * h / urn2.k
                    urn2.update_past(dish, h)
                if prob == 0.0:
                    return 0.0
            rest = available if dish is None else available - {dish}
            return prob * walk(block_idx + 1, urn2, rest)

        # fresh head
        a, c, _ = urn.coefficients()
        if a > 0.0:
            branch = _copy_urn(urn)
            branch.update_fresh(0)
            total += a * grow_and_descend(branch, None)
        # past-value heads
        for i in sorted(available):
            if c[i] <= 0.0:
                continue
            branch = _copy_urn(urn)
            branch.update_past(i, 0)
            total += c[i] * grow_and_descend(branch, i)
        return total

    return walk(0, _Urn(state), frozenset(range(K)))


def _copy_urn(urn: _Urn) -> _Urn:
    clone = object.__new__(_Urn)
    clone.node_arr = urn.node_arr
    clone.totals = urn.totals
    clone.log_w = urn.log_w.copy()
    clone.theta = urn.theta
    clone.k = urn.k
    return clone
