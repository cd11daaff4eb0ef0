"""The time-dependent mixture-of-Polya-urns predictive distribution.

Propagating a filtered state by a lag spreads its weights over the lattice
below the top node; conditional on landing at node n, the next draw follows
a Polya urn seeded with the subset of past data encoded by n.  Developing
the mixture gives a single generalized urn

    A_k P0  +  sum_i C_{i,k} delta_{y*_i}  +  B_k P_k,

where P_k is the empirical law of the draws already made at the prediction
time.  After every draw the node weights are reweighted by the urn density
of the drawn value, so the mixture sharpens as the within-time sample
grows.

Node weights are kept in log space during sequential updates and
renormalized with max subtraction, since long predictive chains underflow
linear weights.  Categorical node draws use cumulative sums over the
canonical (lexicographic) node order for seed-for-seed reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import death_process
from .filtering import FilterState, ModelMisspecificationError
from .lattice import PRUNE_EPS, Node, WeightedNodeSet, lattice_size

__all__ = [
    "PredictiveState",
    "UrnCoefficients",
    "from_filter",
    "exact_predict",
    "approx_predict",
    "coefficients",
    "predictive_pmf",
    "pmf_table",
    "observe_draw",
    "sample_next",
    "sample_sequence",
    "correlation",
    "limit_pmf",
]


@dataclass
class PredictiveState:
    """A propagated filter state plus the within-time sample so far.

    Treat instances as immutable: every operation returns a new state.
    """

    distinct: tuple
    node_list: tuple[Node, ...]
    node_arr: np.ndarray  # (N, K) multiplicities, canonical order
    log_w: np.ndarray  # (N,) log weights, normalized to logsumexp 0
    theta: float
    p0: object
    draws: tuple = ()
    counts: dict | None = None  # value -> multiplicity among draws

    def __post_init__(self):
        if self.counts is None:
            object.__setattr__(self, "counts", {})

    @property
    def k(self) -> int:
        return len(self.draws)

    @property
    def totals(self) -> np.ndarray:
        return self.node_arr.sum(axis=1)

    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def nodes(self) -> WeightedNodeSet:
        return WeightedNodeSet(
            dict(zip(self.node_list, self.weights())), normalize=True
        )


@dataclass(frozen=True)
class UrnCoefficients:
    """Split of the next-draw law: fresh baseline mass, per-past-value copy
    masses, and current-sample resampling mass.  a + sum(c) + b = 1."""

    a: float
    c: np.ndarray
    b: float

    @property
    def total(self) -> float:
        return self.a + float(self.c.sum()) + self.b


def _wrap_nodes(filter_state: FilterState, nodes: WeightedNodeSet) -> PredictiveState:
    node_arr, weights = nodes.as_arrays()
    node_list = tuple(tuple(int(c) for c in row) for row in node_arr)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_w -= logsumexp(log_w)
    return PredictiveState(
        distinct=filter_state.distinct,
        node_list=node_list,
        node_arr=node_arr,
        log_w=log_w,
        theta=filter_state.theta,
        p0=filter_state.base.p0,
    )


def exact_predict(
    filter_state: FilterState,
    lag: float,
    *,
    budget: int = 100_000,
    prune_eps: float = PRUNE_EPS,
) -> PredictiveState:
    """Exact predictive state at sigma * lag ahead of the last data time.

    Sweeps the full lattice below the top node; raises LatticeBudgetError
    (pointing at approx_predict) past the node budget.
    """
    if lag <= 0:
        raise ValueError(f"lag must be positive, got {lag}")
    eff = filter_state.sigma * lag
    top = filter_state.nodes.top()
    if sum(top) == 0:
        nodes = filter_state.nodes
    else:
        nodes = death_process.propagate_weights_exact(
            filter_state.nodes, eff, filter_state.theta,
            budget=budget, prune_eps=prune_eps,
        )
    return _wrap_nodes(filter_state, nodes)


def approx_predict(
    filter_state: FilterState,
    lag: float,
    particles: int,
    rng: np.random.Generator,
) -> PredictiveState:
    """Monte Carlo predictive state: empirical landing frequencies of
    `particles` death-process trajectories replace the exact sweep."""
    if lag <= 0:
        raise ValueError(f"lag must be positive, got {lag}")
    eff = filter_state.sigma * lag
    top = filter_state.nodes.top()
    if sum(top) == 0:
        nodes = filter_state.nodes
    else:
        nodes = death_process.propagate_weights_mc(
            filter_state.nodes, eff, filter_state.theta, particles, rng
        )
    return _wrap_nodes(filter_state, nodes)


def from_filter(
    filter_state: FilterState,
    lag: float,
    *,
    mode: str = "auto",
    budget: int = 100_000,
    particles: int = 100_000,
    prune_eps: float = PRUNE_EPS,
    rng: np.random.Generator | None = None,
) -> PredictiveState:
    """Build a predictive state, choosing exact or Monte Carlo propagation."""
    if mode not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    top = filter_state.nodes.top()
    use_exact = mode == "exact" or (
        mode == "auto" and lattice_size(top) <= budget
    )
    if use_exact:
        return exact_predict(filter_state, lag, budget=budget, prune_eps=prune_eps)
    if rng is None:
        raise ValueError("Monte Carlo propagation needs an explicit rng")
    return approx_predict(filter_state, lag, particles, rng)


def coefficients(state: PredictiveState) -> UrnCoefficients:
    """Aggregate the node mixture into the compact urn coefficients."""
    w = state.weights()
    denom = state.theta + state.totals + state.k
    a = float(w @ (state.theta / denom))
    c = (w / denom) @ state.node_arr
    b = float(w @ (state.k / denom))
    return UrnCoefficients(a=a, c=np.asarray(c, dtype=np.float64), b=b)


def predictive_pmf(state: PredictiveState, y) -> float:
    """Probability that the next draw equals y."""
    coef = coefficients(state)
    value = coef.a * state.p0.pmf(y)
    try:
        i = state.distinct.index(y)
        value += float(coef.c[i])
    except ValueError:
        pass
    if state.k:
        value += coef.b * state.counts.get(y, 0) / state.k
    return value


def pmf_table(state: PredictiveState, values: Sequence) -> np.ndarray:
    """Vectorized predictive pmf over a list of candidate values."""
    coef = coefficients(state)
    index = {v: i for i, v in enumerate(state.distinct)}
    out = np.empty(len(values))
    for j, y in enumerate(values):
        p = coef.a * state.p0.pmf(y)
        if y in index:
            p += float(coef.c[index[y]])
        if state.k:
            p += coef.b * state.counts.get(y, 0) / state.k
        out[j] = p
    return out


def observe_draw(state: PredictiveState, y) -> PredictiveState:
    """Condition the node weights on a drawn value and append it.

    Each log weight grows by the log urn density of y under its node; the
    vector is then renormalized by max-subtracted logsumexp.
    """
    theta, k = state.theta, state.k
    p0y = state.p0.pmf(y)
    try:
        i = state.distinct.index(y)
        past = state.node_arr[:, i].astype(np.float64)
    except ValueError:
        past = 0.0
    numer = theta * p0y + past + state.counts.get(y, 0)
    denom = theta + state.totals + k
    with np.errstate(divide="ignore"):
        log_w = state.log_w + np.log(numer) - np.log(denom)
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise ModelMisspecificationError(
            f"draw {y!r} has zero density under every active node"
        )
    counts = dict(state.counts)
    counts[y] = counts.get(y, 0) + 1
    return PredictiveState(
        distinct=state.distinct,
        node_list=state.node_list,
        node_arr=state.node_arr,
        log_w=log_w - norm,
        theta=theta,
        p0=state.p0,
        draws=state.draws + (y,),
        counts=counts,
    )


def sample_next(state: PredictiveState, rng: np.random.Generator):
    """One exact draw from the predictive, with the conditioned new state.

    Samples a node by its current weight, then branches to the baseline,
    the node's retained past values, or the current empirical sample with
    probabilities proportional to (theta, |n|, k).
    """
    w = state.weights()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(w), u, side="right"))
    idx = min(idx, len(w) - 1)
    node = state.node_arr[idx]
    n_total = int(node.sum())
    theta, k = state.theta, state.k

    pick = rng.random() * (theta + n_total + k)
    if pick < theta:
        y = state.p0.sample(rng)
    elif pick < theta + n_total:
        cum = np.cumsum(node)
        j = int(np.searchsorted(cum, rng.random() * n_total, side="right"))
        y = state.distinct[min(j, len(state.distinct) - 1)]
    else:
        y = state.draws[int(rng.integers(k))]
    return y, observe_draw(state, y)


def sample_sequence(
    state: PredictiveState,
    k: int,
    rng: np.random.Generator,
    *,
    return_state: bool = False,
):
    """Draw an exchangeable sequence of k values from the predictive."""
    if k < 0:
        raise ValueError(f"sample size must be nonnegative, got {k}")
    values = []
    for _ in range(k):
        y, state = sample_next(state, rng)
        values.append(y)
    if return_state:
        return values, state
    return values


def correlation(theta: float, s: float) -> float:
    """Correlation between single observations lag s apart: e^{-theta s / 2} / (theta + 1)."""
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if s < 0:
        raise ValueError(f"lag must be nonnegative, got {s}")
    return math.exp(-theta * s / 2.0) / (theta + 1.0)


def limit_pmf(state: PredictiveState):
    """The infinite-lag limit: the prior urn theta/(theta+k) P0 + k/(theta+k) P_k,
    ignoring all past data.  Returns a pmf callable."""
    theta, k = state.theta, state.k
    counts = dict(state.counts)
    p0 = state.p0

    def pmf(y) -> float:
        base = theta / (theta + k) * p0.pmf(y)
        if k:
            base += k / (theta + k) * counts.get(y, 0) / k
        return base

    return pmf
