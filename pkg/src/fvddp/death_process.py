"""Pure-death process kernels that drive all time propagation.

The latent multiplicity vector decays along the lattice: component i drops
by one at rate m_i (theta + |m| - 1) / 2, so the total |m| follows a
one-dimensional death chain with rate lam_m = m (theta + m - 1) / 2 and the
landing component within a level is multivariate hypergeometric.  This
module evaluates and simulates both pieces.

Numerical notes
---------------
The closed-form level transition is an alternating sum over distinct-rate
exponentials and is notoriously unstable for deep descents at small t.  The
evaluation strategy is: float64 in log magnitude with exact (fsum)
accumulation; if any entry of the row leaves [-1e-8, 1 + 1e-8] the whole
row is recomputed in extended precision; Monte Carlo estimation (1e6
trajectories, input-keyed seed) is kept as a last resort for degenerate
rate configurations.  Rows are memoized by (m, t, theta).
"""

from __future__ import annotations

import math
import struct
import threading
from functools import lru_cache
from typing import Sequence

import numpy as np

from .lattice import Node, WeightedNodeSet, lattice_size, node_leq, node_total

__all__ = [
    "rate",
    "level_transition",
    "transition_row",
    "node_transition",
    "reach_probability",
    "simulate_level",
    "simulate_levels",
    "sample_landing_node",
    "dm_probability",
    "propagate_weights_exact",
    "propagate_weights_mc",
    "NumericalInstabilityError",
    "SeriesDivergenceError",
    "LatticeBudgetError",
]

#: Validity band for probabilities produced by the alternating sum.
_VALIDITY_EPS = 1e-8

#: Two rates closer than this are treated as degenerate (the distinct-rate
#: denominators would blow up); triggers the Monte Carlo fallback.
_RATE_DEGENERACY = 1e-12

_MC_FALLBACK_TRAJECTORIES = 1_000_000


class NumericalInstabilityError(ArithmeticError):
    """The alternating-sum evaluation left the admissible probability range."""


class SeriesDivergenceError(ArithmeticError):
    """A series evaluation failed to converge within its term budget."""


class LatticeBudgetError(RuntimeError):
    """An exact lattice sweep would exceed the configured node budget."""


def rate(m: int, theta: float) -> float:
    """Death rate lam_m = m (theta + m - 1) / 2; lam_0 = 0."""
    if m < 0:
        raise ValueError(f"level must be nonnegative, got {m}")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    return m * (theta + m - 1) / 2.0


def _analytic_row(m: int, t: float, theta: float) -> list[float]:
    """Float64 fast path for {p_{m,n}(t)}_{n=0..m}.

    Entries n >= 1 come from the distinct-rate alternating sum; n = 0 is
    defined by complementation, which makes the row sum exactly one.
    Raises NumericalInstabilityError when cancellation visibly corrupts a
    value.
    """
    lam = [rate(j, theta) for j in range(m + 1)]
    if m >= 2 and min(lam[j + 1] - lam[j] for j in range(m)) < _RATE_DEGENERACY:
        raise NumericalInstabilityError("near-coincident death rates")
    log_lam = [0.0] + [math.log(lam[j]) for j in range(1, m + 1)]

    # suffix sums of log rates: logprod[n] = sum_{j=n+1}^{m} log lam_j
    logprod = [0.0] * (m + 2)
    for n in range(m - 1, -1, -1):
        logprod[n] = logprod[n + 1] + log_lam[n + 1]

    # for each k: cumulative sums over l of log |lam_l - lam_k|
    # so that sum_{l=n..m, l != k} = suffix[k][n] (minus the l = k term,
    # which is excluded during accumulation)
    row = [0.0] * (m + 1)
    suffix = np.zeros((m + 1, m + 2))
    for k in range(m + 1):
        acc = 0.0
        for l in range(m, -1, -1):
            if l != k:
                acc += math.log(abs(lam[l] - lam[k]))
            suffix[k, l] = acc

    for n in range(1, m + 1):
        terms = []
        for k in range(n, m + 1):
            logmag = logprod[n] - lam[k] * t - suffix[k, n]
            if logmag > 700.0:
                raise NumericalInstabilityError(
                    f"term overflow in p_{{{m},{n}}}({t}) at theta={theta}"
                )
            sign = -1.0 if (k - n) % 2 else 1.0
            terms.append(sign * math.exp(logmag))
        row[n] = math.fsum(terms)

    tail = math.fsum(row[1:])
    row[0] = 1.0 - tail
    if min(row) < -_VALIDITY_EPS or max(row) > 1.0 + _VALIDITY_EPS:
        raise NumericalInstabilityError(
            f"row p_{{{m},.}}({t}) at theta={theta} left [0, 1] "
            f"(min={min(row):.3e}, max={max(row):.3e})"
        )
    return row


def _extended_precision_row(m: int, t: float, theta: float) -> list[float]:
    """Recompute a flagged row exactly with 60 significant digits."""
    import mpmath as mp

    with mp.workdps(60):
        tt = mp.mpf(t)
        lam = [mp.mpf(j) * (mp.mpf(theta) + j - 1) / 2 for j in range(m + 1)]
        row = [mp.mpf(0)] * (m + 1)
        for n in range(1, m + 1):
            prod = mp.fprod(lam[n + 1 : m + 1])
            acc = mp.mpf(0)
            for k in range(n, m + 1):
                den = mp.fprod([lam[l] - lam[k] for l in range(n, m + 1) if l != k])
                acc += mp.e ** (-lam[k] * tt) / den
            row[n] = prod * acc
        row[0] = 1 - mp.fsum(row[1:])
        out = [float(x) for x in row]
    if min(out) < -_VALIDITY_EPS or max(out) > 1.0 + _VALIDITY_EPS:
        raise NumericalInstabilityError(
            f"extended-precision row p_{{{m},.}}({t}) still invalid at theta={theta}"
        )
    return out


def _mc_row(m: int, t: float, theta: float) -> list[float]:
    """Estimate a row by simulating 1e6 trajectories, deterministically seeded."""
    key = struct.pack("<qdd", m, t, theta)
    rng = np.random.default_rng(np.random.SeedSequence(list(key)))
    counts = simulate_levels(m, t, theta, _MC_FALLBACK_TRAJECTORIES, rng)
    hist = np.bincount(counts, minlength=m + 1)
    return list(hist / _MC_FALLBACK_TRAJECTORIES)


_row_lock = threading.Lock()


@lru_cache(maxsize=None)
def _cached_row(m: int, t: float, theta: float) -> tuple[float, ...]:
    try:
        row = _analytic_row(m, t, theta)
    except NumericalInstabilityError:
        try:
            row = _extended_precision_row(m, t, theta)
        except NumericalInstabilityError:
            row = _mc_row(m, t, theta)
    # clear rounding dust so downstream sums stay exact
    row = [min(max(p, 0.0), 1.0) for p in row]
    total = math.fsum(row)
    return tuple(p / total for p in row)


def transition_row(m: int, t: float, theta: float) -> tuple[float, ...]:
    """The full landing-level distribution {p_{m,n}(t)}_{n=0..m}."""
    if m < 0:
        raise ValueError(f"level must be nonnegative, got {m}")
    if t <= 0:
        raise ValueError(f"lag must be positive, got {t}")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if m == 0:
        return (1.0,)
    with _row_lock:
        return _cached_row(m, float(t), float(theta))


def level_transition(m: int, n: int, t: float, theta: float) -> float:
    """p_{m,n}(t): probability the level chain descends from m to n in lag t."""
    if not 0 <= n <= m:
        raise ValueError(f"need 0 <= n <= m, got n={n}, m={m}")
    return transition_row(m, t, theta)[n]


def _hypergeometric(removed: Sequence[int], source: Sequence[int]) -> float:
    """HG(removed; source, |removed|): mass of removing that composition."""
    total = node_total(source)
    drop = node_total(removed)
    num = 1
    for r, s in zip(removed, source):
        num *= math.comb(s, r)
    return num / math.comb(total, drop)


def node_transition(m: Node, n: Node, t: float, theta: float) -> float:
    """Transition m -> n of the lattice death process.

    Factorizes as the level transition p_{|m|,|n|}(t) times the multivariate
    hypergeometric mass of removing the composition m - n from m.
    """
    if not node_leq(n, m):
        raise ValueError(f"nodes are not comparable: {n} is not <= {m}")
    level = level_transition(node_total(m), node_total(n), t, theta)
    removed = tuple(a - b for a, b in zip(m, n))
    return level * _hypergeometric(removed, m)


def reach_probability(
    sources: WeightedNodeSet, n: Node, t: float, theta: float
) -> float:
    """p_t(M, n): probability the death process lands at n from the mixture M."""
    n = tuple(n)
    if not node_leq(n, sources.top()):
        raise ValueError(f"{n} lies above the top node {sources.top()}")
    acc = 0.0
    for m, w in sources.items():
        if node_leq(n, m):
            acc += w * node_transition(m, n, t, theta)
    return acc


def simulate_level(m: int, t: float, theta: float, rng: np.random.Generator) -> int:
    """One trajectory of the level chain: successive exponential waits."""
    if m < 0:
        raise ValueError(f"level must be nonnegative, got {m}")
    level = m
    elapsed = 0.0
    while level > 0:
        elapsed += rng.exponential(1.0 / rate(level, theta))
        if elapsed >= t:
            break
        level -= 1
    return level


def simulate_levels(
    m: int, t: float, theta: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized landing levels for `size` independent trajectories."""
    levels = np.full(size, m, dtype=np.int64)
    remaining = np.full(size, t, dtype=np.float64)
    for current in range(m, 0, -1):
        active = np.flatnonzero(levels == current)
        if active.size == 0:
            continue
        waits = rng.exponential(1.0 / rate(current, theta), size=active.size)
        remaining[active] -= waits
        levels[active[remaining[active] > 0.0]] -= 1
    return levels


def sample_landing_node(level: int, m: Node, rng: np.random.Generator) -> Node:
    """Draw the landing node at a given level: |m| - level removals without
    replacement from the composition m."""
    total = node_total(m)
    if not 0 <= level <= total:
        raise ValueError(f"level {level} outside [0, |m|] = [0, {total}]")
    if level == total:
        return tuple(m)
    if level == 0:
        return (0,) * len(m)
    kept = rng.multivariate_hypergeometric(list(m), level)
    return tuple(int(c) for c in kept)


def dm_probability(m: int, t: float, theta: float, tol: float = 1e-12) -> float:
    """Entrance law of the level chain started from infinity.

    d_m(t) = sum_{k>=m} e^{-lam_k t} (-1)^{k-m} (theta+2k-1) (theta+m)^{(k-1)}
             / (m! (k-m)!)

    with a^{(j)} the rising factorial.  The series is truncated once the
    index exceeds 2 (m + theta + 1/t) and the term magnitude falls below
    tol / 100, with a hard cap of 1e4 terms.
    """
    if m < 0:
        raise ValueError(f"level must be nonnegative, got {m}")
    if t <= 0:
        raise ValueError(f"lag must be positive, got {t}")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")

    lg_base = math.lgamma(theta + m)
    k_soft = 2.0 * (m + theta + 1.0 / t)
    terms: list[float] = []
    k = m
    while True:
        if k == 0 and m == 0:
            coef = 1.0  # limiting value of (theta+2k-1) / (theta+m+k-1)
            logmag = 0.0
        else:
            ratio = (theta + 2 * k - 1) / (theta + m + k - 1)
            logmag = (
                math.lgamma(theta + m + k)
                - lg_base
                - math.lgamma(m + 1)
                - math.lgamma(k - m + 1)
            )
            coef = ratio
        logmag -= rate(k, theta) * t
        if logmag > 700.0:
            raise SeriesDivergenceError(
                f"d_{m}({t}) series term overflow at k={k} (theta={theta}); "
                "the lag is too small for the series representation"
            )
        term = coef * math.exp(logmag)
        terms.append(term if (k - m) % 2 == 0 else -term)
        k += 1
        if k > k_soft and abs(term) < tol * 1e-2:
            break
        if k - m >= 10_000:
            raise SeriesDivergenceError(
                f"d_{m}({t}) did not converge within 10000 terms "
                f"(theta={theta}, last |term|={abs(term):.3e}, tol={tol})"
            )
    value = math.fsum(terms)
    if value < -math.sqrt(tol) or value > 1.0 + math.sqrt(tol):
        raise SeriesDivergenceError(
            f"d_{m}({t}) evaluated to {value}, outside [0, 1] (theta={theta})"
        )
    return min(max(value, 0.0), 1.0)


def propagate_weights_exact(
    sources: WeightedNodeSet,
    t: float,
    theta: float,
    *,
    budget: int = 100_000,
    prune_eps: float = 1e-10,
) -> WeightedNodeSet:
    """Full sweep {n -> p_t(M, n)} over the lattice below the top node.

    Refuses (LatticeBudgetError) when the sweep would touch more than
    `budget` nodes; use propagate_weights_mc in that regime.
    """
    from scipy.special import gammaln

    top = sources.top()
    size = lattice_size(top)
    if size > budget:
        raise LatticeBudgetError(
            f"exact propagation needs {size} nodes (> budget {budget}); "
            "use propagate_weights_mc"
        )
    if len(top) == 0:
        return WeightedNodeSet({(): 1.0})

    lat = np.array(list(_box_iter(top)), dtype=np.int64)
    lat_totals = lat.sum(axis=1)
    lgf = gammaln(np.arange(int(node_total(top)) + 2) + 1.0)  # lgf[i] = log(i!)
    acc = np.zeros(len(lat))
    for src, w in sources.items():
        src_arr = np.array(src, dtype=np.int64)
        stot = int(src_arr.sum())
        row = np.array(transition_row(stot, t, theta)) if stot else np.ones(1)
        mask = np.all(lat <= src_arr, axis=1)
        sub, subtot = lat[mask], lat_totals[mask]
        log_hg = (
            lgf[src_arr].sum()
            - lgf[sub].sum(axis=1)
            - lgf[src_arr - sub].sum(axis=1)
            - (lgf[stot] - lgf[subtot] - lgf[stot - subtot])
        )
        acc[mask] += w * row[subtot] * np.exp(log_hg)
    keep = np.flatnonzero(acc > 0.0)
    result = WeightedNodeSet(
        {tuple(int(c) for c in lat[i]): float(acc[i]) for i in keep}, normalize=True
    )
    return result.pruned(prune_eps) if prune_eps > 0 else result


def _box_iter(top: Node):
    if len(top) == 0:
        yield ()
        return
    from itertools import product

    yield from product(*(range(c + 1) for c in top))


def propagate_weights_mc(
    sources: WeightedNodeSet,
    t: float,
    theta: float,
    n_particles: int,
    rng: np.random.Generator,
) -> WeightedNodeSet:
    """Monte Carlo propagation: sample sources, descend levels, land by
    hypergeometric draws, and tally landing frequencies."""
    if n_particles < 1:
        raise ValueError(f"need at least one particle, got {n_particles}")
    nodes, weights = sources.as_arrays()
    counts = rng.multinomial(n_particles, weights)
    tally: dict[Node, int] = {}

    def add(node: Node, c: int) -> None:
        tally[node] = tally.get(node, 0) + c

    for src_idx in np.flatnonzero(counts):
        src = tuple(int(c) for c in nodes[src_idx])
        total = node_total(src)
        n_src = int(counts[src_idx])
        levels = simulate_levels(total, t, theta, n_src, rng)
        level_hist = np.bincount(levels, minlength=total + 1)
        for level in np.flatnonzero(level_hist):
            c = int(level_hist[level])
            if level == total:
                add(src, c)
            elif level == 0:
                add((0,) * len(src), c)
            else:
                landed = rng.multivariate_hypergeometric(list(src), int(level), size=c)
                uniq, reps = np.unique(landed, axis=0, return_counts=True)
                for row, r in zip(uniq, reps):
                    add(tuple(int(x) for x in row), int(r))
    return WeightedNodeSet(
        {n: c / n_particles for n, c in tally.items()}, normalize=True
    )
