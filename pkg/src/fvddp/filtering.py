"""Posterior filtering of the latent random measure across collection times.

The conditional law of the signal given all data up to time T is a finite
mixture of posterior Dirichlet processes indexed by multiplicity vectors.
Between collection times the mixture weights are pushed down the lattice by
the death process; within a collection time each observation reweights the
nodes by its urn density and shifts them one step up.  The normalizing
constant of every update is the one-step predictive density of the
observation, so the accumulated log marginal likelihood comes for free and
feeds the hyperparameter posterior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import death_process
from .lattice import PRUNE_EPS, WeightedNodeSet, extend_support, lattice_size
from .measures import BaseMeasure, distribution_from_config

__all__ = [
    "FilterState",
    "init_state",
    "update_one",
    "update_batch",
    "advance_time",
    "log_marginal_likelihood",
    "hyper_posterior",
    "run_filter",
    "state_to_dict",
    "state_from_dict",
    "state_to_json",
    "state_from_json",
    "ModelMisspecificationError",
]


class ModelMisspecificationError(ValueError):
    """An observation has zero predictive density under the current model."""


@dataclass(frozen=True)
class FilterState:
    """Posterior law of the signal: distinct values, node weights, and the
    accumulated log marginal likelihood.  Immutable; updates return new
    states."""

    distinct: tuple
    nodes: WeightedNodeSet
    base: BaseMeasure
    sigma: float
    log_ml: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.nodes.dim != len(self.distinct):
            raise ValueError(
                f"node dimension {self.nodes.dim} does not match "
                f"{len(self.distinct)} distinct values"
            )

    @property
    def theta(self) -> float:
        return self.base.theta


def init_state(base: BaseMeasure, sigma: float = 1.0) -> FilterState:
    """Fresh state: no data, all mass on the empty multiplicity vector."""
    return FilterState(
        distinct=(),
        nodes=WeightedNodeSet({(): 1.0}),
        base=base,
        sigma=sigma,
        log_ml=0.0,
    )


def update_batch(
    state: FilterState, batch: Sequence, *, prune_eps: float = PRUNE_EPS
) -> FilterState:
    """Absorb a batch observed at the current time.

    Each observation multiplies every node weight by its urn density
    (theta p0(y) + n_i(y)) / (theta + |n|) and shifts the node by e_i(y);
    the shift makes within-batch repeat counts part of n automatically, so
    folding observations one at a time is exact and, in law, order does not
    matter.  log_ml grows by the log predictive density of each value;
    pruning happens only after the whole batch so the likelihood is not
    biased by truncation.
    """
    if len(batch) == 0:
        return state

    distinct = list(state.distinct)
    index = {y: i for i, y in enumerate(distinct)}
    for y in batch:
        if y not in index:
            index[y] = len(distinct)
            distinct.append(y)

    nodes = extend_support(state.nodes, len(distinct))
    node_arr, weights = nodes.as_arrays()
    node_arr = node_arr.copy()
    totals = node_arr.sum(axis=1).astype(np.float64)
    theta = state.theta
    log_ml = state.log_ml

    for y in batch:
        i = index[y]
        numer = theta * state.base.p0.pmf(y) + node_arr[:, i]
        dens = numer / (theta + totals)
        norm = float(weights @ dens)
        if norm <= 0.0 or not math.isfinite(norm):
            raise ModelMisspecificationError(
                f"observation {y!r} has zero predictive density "
                "(p0 vanishes there and the value was never seen)"
            )
        log_ml += math.log(norm)
        weights = weights * dens / norm
        node_arr[:, i] += 1
        totals += 1.0

    updated = WeightedNodeSet(
        {tuple(int(c) for c in row): float(w) for row, w in zip(node_arr, weights)},
        normalize=True,
    )
    if prune_eps > 0:
        updated = updated.pruned(prune_eps)
    return replace(state, distinct=tuple(distinct), nodes=updated, log_ml=log_ml)


def update_one(state: FilterState, y, *, prune_eps: float = PRUNE_EPS) -> FilterState:
    """Absorb a single observation at the current time."""
    return update_batch(state, [y], prune_eps=prune_eps)


def advance_time(
    state: FilterState,
    lag: float,
    *,
    mode: str = "auto",
    budget: int = 100_000,
    particles: int = 100_000,
    prune_eps: float = PRUNE_EPS,
    rng: np.random.Generator | None = None,
) -> FilterState:
    """Propagate the node weights forward by `lag` data-time units.

    The speed parameter enters only here, as the rescaled lag sigma * lag.
    mode='auto' runs the exact lattice sweep when it fits in `budget` nodes
    and otherwise falls back to Monte Carlo with `particles` trajectories
    (which requires an rng).
    """
    if lag <= 0:
        raise ValueError(f"lag must be positive, got {lag}")
    eff = state.sigma * lag
    top = state.nodes.top()
    if sum(top) == 0:
        return state  # absorbing: nothing left to lose

    if mode not in ("auto", "exact", "mc"):
        raise ValueError(f"unknown propagation mode {mode!r}")
    use_exact = mode == "exact" or (mode == "auto" and lattice_size(top) <= budget)
    if use_exact:
        nodes = death_process.propagate_weights_exact(
            state.nodes, eff, state.theta, budget=budget, prune_eps=prune_eps
        )
    else:
        if rng is None:
            raise ValueError(
                "Monte Carlo propagation needs an explicit rng "
                f"(lattice size {lattice_size(top)} exceeds budget {budget})"
            )
        nodes = death_process.propagate_weights_mc(
            state.nodes, eff, state.theta, particles, rng
        )
    return replace(state, nodes=nodes)


def log_marginal_likelihood(state: FilterState) -> float:
    """Accumulated log of prod_i P(Y_i | Y_{0:i-1})."""
    return state.log_ml


def run_filter(
    base: BaseMeasure,
    sigma: float,
    batches: Iterable[tuple[float, Sequence]],
    *,
    mode: str = "auto",
    budget: int = 100_000,
    particles: int = 100_000,
    prune_eps: float = PRUNE_EPS,
    rng: np.random.Generator | None = None,
) -> FilterState:
    """Fold time-stamped batches through update/advance alternation."""
    state = init_state(base, sigma)
    prev_time = None
    for time, values in batches:
        if prev_time is not None:
            gap = time - prev_time
            if gap <= 0:
                raise ValueError(f"batch times must increase, got gap {gap}")
            state = advance_time(
                state,
                gap,
                mode=mode,
                budget=budget,
                particles=particles,
                prune_eps=prune_eps,
                rng=rng,
            )
        state = update_batch(state, values, prune_eps=prune_eps)
        prev_time = time
    return state


@dataclass(frozen=True)
class GridPointResult:
    theta: float
    sigma: float
    prior: float
    log_ml: float
    posterior: float
    state: FilterState


def hyper_posterior(
    grid: Sequence[tuple[float, float, float]],
    batches: Sequence[tuple[float, Sequence]],
    p0,
    *,
    mode: str = "auto",
    budget: int = 100_000,
    particles: int = 100_000,
    prune_eps: float = PRUNE_EPS,
    rng: np.random.Generator | None = None,
) -> list[GridPointResult]:
    """Posterior over a (theta, sigma) grid with prior weights.

    Runs one independent filter per grid point and normalizes
    exp(log prior + log marginal likelihood).
    """
    if not grid:
        raise ValueError("hyperparameter grid must be nonempty")
    priors = np.array([g[2] for g in grid], dtype=np.float64)
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("prior weights must be nonnegative and sum to 1")

    states = []
    log_scores = np.empty(len(grid))
    for j, (theta, sigma, prior) in enumerate(grid):
        final = run_filter(
            BaseMeasure(theta, p0),
            sigma,
            batches,
            mode=mode,
            budget=budget,
            particles=particles,
            prune_eps=prune_eps,
            rng=rng,
        )
        states.append(final)
        log_scores[j] = (math.log(prior) if prior > 0 else -np.inf) + final.log_ml

    norm = logsumexp(log_scores)
    if not np.isfinite(norm):
        raise ModelMisspecificationError(
            "all grid points have zero posterior mass for these data"
        )
    posterior = np.exp(log_scores - norm)
    return [
        GridPointResult(theta, sigma, prior, st.log_ml, float(post), st)
        for (theta, sigma, prior), st, post in zip(grid, states, posterior)
    ]


def state_to_dict(state: FilterState) -> dict:
    """JSON-ready checkpoint of a filter state."""
    return {
        "distinct": list(state.distinct),
        "nodes": [
            {"counts": list(node), "weight": w} for node, w in sorted(state.nodes.items())
        ],
        "theta": state.theta,
        "sigma": state.sigma,
        "log_ml": state.log_ml,
        "base": state.base.p0.to_config(),
    }


def state_from_dict(doc: dict) -> FilterState:
    base = BaseMeasure(float(doc["theta"]), distribution_from_config(doc["base"]))
    nodes = WeightedNodeSet(
        {tuple(e["counts"]): float(e["weight"]) for e in doc["nodes"]},
        normalize=True,
    )
    return FilterState(
        distinct=tuple(doc["distinct"]),
        nodes=nodes,
        base=base,
        sigma=float(doc["sigma"]),
        log_ml=float(doc["log_ml"]),
    )


def state_to_json(state: FilterState) -> str:
    return json.dumps(state_to_dict(state), sort_keys=True)


def state_from_json(text: str) -> FilterState:
    return state_from_dict(json.loads(text))
