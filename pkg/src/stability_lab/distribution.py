"""Explicit probability vectors over finite, integer-indexed supports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from numbers import Rational
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

Number = Union[int, Fraction, float]

FLOAT_TOLERANCE = 1e-12


def _is_exact(x) -> bool:
    return isinstance(x, Rational) and not isinstance(x, bool)


def as_fraction(x) -> Fraction:
    """Exact rational value of ``x``; floats convert to their dyadic value."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True)
class FiniteDistribution:
    """Probability mass over an ordered tuple of integer ids.

    Probabilities are either all exact rationals (``int``/``Fraction``), in which
    case they must sum to exactly one, or floats summing to one within 1e-12.
    The support order is the domain order used for every tie-break.
    """

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(int(s) for s in self.support)
        probs = tuple(self.probs)
        if len(support) != len(probs):
            raise ValueError("support and probs differ in length")
        if not support:
            raise ValueError("empty distribution")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise ValueError("support ids must be unique and sorted")
        if any(p < 0 for p in probs):
            raise ValueError("negative probability")
        if all(_is_exact(p) for p in probs):
            probs = tuple(Fraction(p) for p in probs)
            if sum(probs) != 1:
                raise ValueError(f"probabilities sum to {sum(probs)}, not 1")
        else:
            probs = tuple(float(p) for p in probs)
            total = math.fsum(probs)
            if abs(total - 1.0) > FLOAT_TOLERANCE:
                raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    # constructors

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, Number]]) -> "FiniteDistribution":
        items = sorted((int(y), p) for y, p in pairs)
        return cls(tuple(y for y, _ in items), tuple(p for _, p in items))

    @classmethod
    def from_weights(cls, weights: Union[Mapping[int, Number], Sequence[Number]]) -> "FiniteDistribution":
        """Normalise nonnegative weights; integer/rational weights stay exact."""
        if isinstance(weights, Mapping):
            pairs = sorted((int(k), v) for k, v in weights.items())
        else:
            pairs = list(enumerate(weights))
        values = [v for _, v in pairs]
        if all(_is_exact(v) for v in values):
            total = sum(Fraction(v) for v in values)
            probs = [Fraction(v) / total for v in values]
        else:
            total = math.fsum(float(v) for v in values)
            probs = [float(v) / total for v in values]
            # absorb rounding so the float sum check passes
            probs[-1] = max(0.0, 1.0 - math.fsum(probs[:-1]))
        if total <= 0:
            raise ValueError("weights sum to zero")
        return cls(tuple(k for k, _ in pairs), tuple(probs))

    @classmethod
    def point(cls, y: int) -> "FiniteDistribution":
        return cls((int(y),), (Fraction(1),))

    @classmethod
    def uniform(cls, ids: Iterable[int]) -> "FiniteDistribution":
        ids = sorted(int(i) for i in ids)
        return cls(tuple(ids), tuple(Fraction(1, len(ids)) for _ in ids))

    @classmethod
    def from_json(cls, data) -> "FiniteDistribution":
        """Parse ``[[id, prob], ...]``; probabilities may be numbers or "a/b" strings."""
        pairs = []
        for entry in data:
            y, p = entry
            if isinstance(p, str):
                p = Fraction(p)
            pairs.append((y, p))
        return cls.from_pairs(pairs)

    def to_json(self) -> list:
        """Exact masses serialise as "a/b" strings so they round-trip."""
        if self.is_exact:
            return [[y, str(p)] for y, p in zip(self.support, self.probs)]
        return [[y, float(p)] for y, p in zip(self.support, self.probs)]

    # queries

    @property
    def is_exact(self) -> bool:
        return isinstance(self.probs[0], Fraction)

    def __len__(self):
        return len(self.support)

    def items(self):
        return zip(self.support, self.probs)

    def prob(self, y: int) -> Number:
        i = self._index.get(int(y))
        if i is None:
            return Fraction(0) if self.is_exact else 0.0
        return self.probs[i]

    @cached_property
    def _index(self) -> dict:
        return {y: i for i, y in enumerate(self.support)}

    def positive_support(self) -> tuple:
        return tuple(y for y, p in self.items() if p > 0)

    def as_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])

    def mode(self) -> int:
        """Most likely element; ties go to the smallest id."""
        best = max(self.probs)
        return next(y for y, p in self.items() if p == best)

    def tv(self, other: "FiniteDistribution") -> Number:
        """Total variation distance (exact when both sides are exact)."""
        keys = sorted(set(self.support) | set(other.support))
        if self.is_exact and other.is_exact:
            return sum(abs(self.prob(k) - other.prob(k)) for k in keys) / 2
        return math.fsum(abs(float(self.prob(k)) - float(other.prob(k))) for k in keys) / 2

    def collision_probability(self) -> Number:
        """Probability two independent draws agree, i.e. sum of squared masses."""
        return sum(p * p for p in self.probs)

    @cached_property
    def _positive(self):
        ids = np.array([y for y, p in self.items() if p > 0], dtype=np.int64)
        cdf = np.cumsum([float(p) for p in self.probs if p > 0])
        return ids, cdf

    def quantile(self, u):
        """Inverse-CDF lookup for ``u`` in [0, 1); vectorised over arrays."""
        ids, cdf = self._positive
        idx = np.searchsorted(cdf, u, side="right")
        idx = np.minimum(idx, len(ids) - 1)
        if np.ndim(idx) == 0:
            return int(ids[int(idx)])
        return ids[idx]

    def draw(self, rng: np.random.Generator, size=None):
        ids, _ = self._positive
        return self.quantile(rng.random(size)) if size is not None else int(self.quantile(rng.random()))

    def __repr__(self):
        body = ", ".join(f"{y}: {p}" for y, p in self.items())
        return f"FiniteDistribution({{{body}}})"


def empirical(values: Iterable[int]) -> FiniteDistribution:
    """Exact empirical law of a finite list of outputs."""
    counts: dict[int, int] = {}
    for v in values:
        counts[int(v)] = counts.get(int(v), 0) + 1
    return FiniteDistribution.from_weights(counts)


def hockey_stick(p: FiniteDistribution, q: FiniteDistribution, epsilon: float) -> float:
    """sum_y max(P(y) - e^eps Q(y), 0): the smallest delta with P <= e^eps Q + delta."""
    scale = math.exp(epsilon)
    total = 0.0
    for y, py in p.items():
        gap = float(py) - scale * float(q.prob(y))
        if gap > 0:
            total += gap
    return min(max(total, 0.0), 1.0)
