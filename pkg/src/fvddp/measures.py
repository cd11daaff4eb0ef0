"""Discrete base measures.

The urn updates need a pointwise-evaluable pmf, so only discrete baselines
are supported: Poisson, negative binomial, binomial, uniform over a finite
set, and a user-supplied pmf table.  Each family knows how to sample, how
to enumerate a finite support covering all but a requested tail mass, and
how to serialize itself for run manifests and checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats


class DiscreteDistribution:
    """Interface: pmf evaluation, sampling, finite-support enumeration."""

    family = "abstract"

    def pmf(self, y) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None):
        raise NotImplementedError

    def support(self, tail: float = 1e-12) -> list:
        """A finite list of values carrying at least 1 - tail of the mass."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class _CountDistribution(DiscreteDistribution):
    """Shared plumbing for scipy-backed count distributions on Z_+."""

    def _frozen(self):
        raise NotImplementedError

    def pmf(self, y) -> float:
        if not isinstance(y, (int, np.integer)):
            return 0.0
        return float(self._frozen().pmf(int(y)))

    def sample(self, rng, size=None):
        draws = self._frozen().rvs(size=size if size else 1, random_state=rng)
        if size is None:
            return int(draws[0])
        return np.asarray(draws, dtype=np.int64)

    def support(self, tail: float = 1e-12) -> list:
        hi = int(self._frozen().ppf(1.0 - tail))
        return list(range(hi + 1))


@dataclass(frozen=True)
class PoissonP0(_CountDistribution):
    mu: float
    family = "poisson"

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"poisson mean must be positive, got {self.mu}")

    def _frozen(self):
        return stats.poisson(self.mu)

    def to_config(self) -> dict:
        return {"family": "poisson", "mu": self.mu}


@dataclass(frozen=True)
class NegativeBinomialP0(_CountDistribution):
    r: float
    p: float
    family = "negative_binomial"

    def __post_init__(self):
        if self.r <= 0 or not 0 < self.p <= 1:
            raise ValueError(f"invalid negative binomial parameters ({self.r}, {self.p})")

    def _frozen(self):
        return stats.nbinom(self.r, self.p)

    def to_config(self) -> dict:
        return {"family": "negative_binomial", "r": self.r, "p": self.p}


@dataclass(frozen=True)
class BinomialP0(_CountDistribution):
    n: int
    p: float
    family = "binomial"

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.p <= 1:
            raise ValueError(f"invalid binomial parameters ({self.n}, {self.p})")

    def _frozen(self):
        return stats.binom(self.n, self.p)

    def support(self, tail: float = 1e-12) -> list:
        return list(range(self.n + 1))

    def to_config(self) -> dict:
        return {"family": "binomial", "n": self.n, "p": self.p}


class FiniteUniformP0(DiscreteDistribution):
    """Uniform distribution over an explicit finite set of values."""

    family = "uniform"

    def __init__(self, values: Sequence):
        values = tuple(values)
        if not values:
            raise ValueError("uniform base measure needs at least one value")
        if len(set(values)) != len(values):
            raise ValueError("uniform base measure values must be distinct")
        self.values = values
        self._index = {v: i for i, v in enumerate(values)}

    def pmf(self, y) -> float:
        return 1.0 / len(self.values) if y in self._index else 0.0

    def sample(self, rng, size=None):
        idx = rng.integers(0, len(self.values), size=size if size else 1)
        if size is None:
            return self.values[int(idx[0])]
        return np.array([self.values[int(i)] for i in idx])

    def support(self, tail: float = 1e-12) -> list:
        return list(self.values)

    def to_config(self) -> dict:
        return {"family": "uniform", "values": list(self.values)}

    def __eq__(self, other):
        return isinstance(other, FiniteUniformP0) and self.values == other.values


class TablePmf(DiscreteDistribution):
    """User-supplied pmf over a finite set; must sum to one."""

    family = "table"

    def __init__(self, table: Mapping[Any, float]):
        if not table:
            raise ValueError("pmf table must be nonempty")
        probs = {k: float(v) for k, v in table.items()}
        if any(p < 0 for p in probs.values()):
            raise ValueError("pmf table entries must be nonnegative")
        total = math.fsum(probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pmf table must sum to 1, got {total}")
        self.table = probs
        self._values = list(probs)
        self._cum = np.cumsum([probs[v] for v in self._values])

    def pmf(self, y) -> float:
        return self.table.get(y, 0.0)

    def sample(self, rng, size=None):
        def one():
            u = rng.random()
            idx = int(np.searchsorted(self._cum, u, side="right"))
            return self._values[min(idx, len(self._values) - 1)]

        if size is None:
            return one()
        return np.array([one() for _ in range(size)])

    def support(self, tail: float = 1e-12) -> list:
        return list(self._values)

    def to_config(self) -> dict:
        return {"family": "table", "table": {str(k): v for k, v in self.table.items()}}


@dataclass(frozen=True)
class BaseMeasure:
    """The pair (theta, P0): total mass times a discrete baseline."""

    theta: float
    p0: DiscreteDistribution

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


def distribution_from_config(config: Mapping[str, Any]) -> DiscreteDistribution:
    family = config.get("family")
    if family == "poisson":
        return PoissonP0(float(config["mu"]))
    if family == "negative_binomial":
        return NegativeBinomialP0(float(config["r"]), float(config["p"]))
    if family == "binomial":
        return BinomialP0(int(config["n"]), float(config["p"]))
    if family == "uniform":
        return FiniteUniformP0(config["values"])
    if family == "table":
        return TablePmf({_maybe_number(k): v for k, v in config["table"].items()})
    raise ValueError(f"unknown base measure family {family!r}")


def _maybe_number(token: str):
    """Best-effort numeric coercion for JSON round trips of table keys."""
    if isinstance(token, (int, float)):
        return token
    try:
        return int(token)
    except (TypeError, ValueError):
        pass
    try:
        return float(token)
    except (TypeError, ValueError):
        return token
