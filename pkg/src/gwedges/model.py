"""Offspring laws and process parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

SUM_TOLERANCE = 1e-12
RENORMALIZE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class OffspringDistribution:
    """Finite-support offspring law ``(p_0, ..., p_K)``.

    ``weights[k]`` is the probability of ``k`` children.  Trailing zero
    weights are dropped so the last entry is always positive.
    """

    weights: tuple[float, ...]
    name: str | None = None

    def __post_init__(self):
        w = [float(p) for p in self.weights]
        if not w:
            raise ValueError("offspring law needs at least one weight")
        if any(not math.isfinite(p) or p < 0.0 for p in w):
            raise ValueError("offspring probabilities must be finite and nonnegative")
        total = math.fsum(w)
        if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
            raise ValueError(f"offspring probabilities sum to {total!r}, not 1")
        if abs(total - 1.0) > SUM_TOLERANCE:
            w = [p / total for p in w]
        while len(w) > 1 and w[-1] == 0.0:
            w.pop()
        object.__setattr__(self, "weights", tuple(w))

    @classmethod
    def from_mapping(cls, table: Mapping[int, float], name: str | None = None):
        if not table:
            raise ValueError("empty offspring table")
        if any(int(k) != k or k < 0 for k in table):
            raise ValueError("offspring counts must be nonnegative integers")
        size = max(int(k) for k in table) + 1
        w = [0.0] * size
        for k, p in table.items():
            w[int(k)] += float(p)
        return cls(tuple(w), name)

    @property
    def max_offspring(self) -> int:
        return len(self.weights) - 1

    def as_mapping(self) -> dict[int, float]:
        return {k: p for k, p in enumerate(self.weights) if p > 0.0}

    def mean(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.weights))

    def second_moment(self) -> float:
        return math.fsum(k * k * p for k, p in enumerate(self.weights))

    def truncate(self, K: int) -> OffspringDistribution:
        """Law of the process in which births of more than ``K`` children produce none."""
        if K < 1:
            raise ValueError("truncation level K must be >= 1")
        w = list(self.weights[: K + 1])
        w[0] = math.fsum([self.weights[0], *self.weights[K + 1 :]])
        label = f"{self.name}|K={K}" if self.name else None
        return OffspringDistribution(tuple(w), label)

    @cached_property
    def cdf(self) -> np.ndarray:
        """Cumulative weights for inverse-CDF sampling; last entry is exactly 1."""
        c = np.cumsum(np.asarray(self.weights, dtype=np.float64))
        c[-1] = 1.0
        return c


def mean(dist: OffspringDistribution) -> float:
    return dist.mean()


def second_moment(dist: OffspringDistribution) -> float:
    return dist.second_moment()


def truncate(dist: OffspringDistribution, K: int) -> OffspringDistribution:
    return dist.truncate(K)


def heavy_tail_zeta3(cutoff: int) -> OffspringDistribution:
    """``p_k`` proportional to ``k**-3`` on ``1..cutoff``.

    Satisfies ``E[xi log xi] < inf`` with mean tending to zeta(2)/zeta(3) while
    the second moment diverges logarithmically in the cutoff.
    """
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    k = np.arange(1, cutoff + 1, dtype=np.float64)
    raw = k**-3.0
    w = raw / math.fsum(raw)
    return OffspringDistribution((0.0, *w.tolist()), name=f"zeta3(cutoff={cutoff})")


@dataclass(frozen=True)
class ModelParams:
    beta: float
    offspring: OffspringDistribution

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0.0):
            raise ValueError("branching rate beta must be positive")

    @property
    def m(self) -> float:
        return self.offspring.mean()

    @property
    def v(self) -> float:
        return self.offspring.second_moment()

    @property
    def growth_rate(self) -> float:
        """Malthusian parameter ``beta (m - 1)``."""
        return self.beta * (self.m - 1.0)


@dataclass(frozen=True)
class BirthDeathParams:
    lam: float
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)):
            raise ValueError("rates must be finite")
        if self.mu < 0.0:
            raise ValueError("death rate mu must be nonnegative")
        if not self.lam > self.mu:
            raise ValueError("birth-death process must be supercritical (lambda > mu)")

    def to_model(self) -> ModelParams:
        return birth_death_model(self)


def birth_death_model(bd: BirthDeathParams) -> ModelParams:
    beta = bd.lam + bd.mu
    weights = (bd.mu / beta, 0.0, bd.lam / beta)
    return ModelParams(beta, OffspringDistribution(weights, f"birth_death({bd.lam:g},{bd.mu:g})"))


def as_model(model: ModelParams | BirthDeathParams) -> ModelParams:
    return model.to_model() if isinstance(model, BirthDeathParams) else model
