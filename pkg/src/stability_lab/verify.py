"""Measurement harness: replicability, stability, heavy hitters, confidence, DP audits."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    MeteredAlgorithm,
    Sample,
    StatisticalTask,
    hoeffding_halfwidth,
    is_correct,
    make_rng,
    simulate,
)
from .core import exact_law_over_tapes
from .distribution import FiniteDistribution, hockey_stick
from .errors import CapExceededError
from .tape import DEFAULT_MAX_ENUM_BITS

CHUNK = 50_000


@dataclass(frozen=True)
class ReplicabilityReport:
    estimate: float
    trials: int
    ci_halfwidth: float
    shared_tape: bool
    bits_used: int
    agreements: int

    @property
    def lower(self) -> float:
        return self.estimate - self.ci_halfwidth

    @property
    def upper(self) -> float:
        return self.estimate + self.ci_halfwidth


def _tape_draws(rng: np.random.Generator, bits: int, count: int) -> np.ndarray:
    if bits > 62:
        raise ValueError("Monte-Carlo tapes are limited to 62 bits")
    return rng.integers(0, 1 << bits, size=count, dtype=np.int64)


def paired_runs(alg: MeteredAlgorithm, dist: FiniteDistribution, trials: int, shared: bool, seed):
    """Yield chunks of (first, second) outputs on independent samples."""
    rng = make_rng(seed)
    done = 0
    while done < trials:
        k = min(CHUNK, trials - done)
        a = _tape_draws(rng, alg.bit_budget, k)
        b = a if shared else _tape_draws(rng, alg.bit_budget, k)
        outs = simulate(alg, dist, rng, np.stack([a, b], axis=1))
        yield outs[:, 0], outs[:, 1]
        done += k


def estimate_replicability(
    alg: MeteredAlgorithm, dist: FiniteDistribution, trials: int, shared: bool = True, seed=0
) -> ReplicabilityReport:
    """Fraction of trials where two runs on independent samples agree.

    With ``shared=True`` both runs read the same tape, otherwise independent ones.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    agree = 0
    for x, y in paired_runs(alg, dist, trials, shared, seed):
        agree += int(np.sum(x == y))
    return ReplicabilityReport(
        agree / trials, trials, hoeffding_halfwidth(trials), shared, alg.bit_budget, agree
    )


def estimate_global_stability(alg, dist, trials: int, seed=0) -> ReplicabilityReport:
    """Two-run collision probability with independent samples and independent tapes."""
    return estimate_replicability(alg, dist, trials, shared=False, seed=seed)


def draw_outputs(alg: MeteredAlgorithm, dist: FiniteDistribution, trials: int, seed) -> np.ndarray:
    rng = make_rng(seed)
    chunks = []
    done = 0
    while done < trials:
        k = min(CHUNK, trials - done)
        chunks.append(simulate(alg, dist, rng, _tape_draws(rng, alg.bit_budget, k)))
        done += k
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def heavy_hitter_trials(eta: float) -> int:
    """Runs needed for +-eta/4 weights at confidence 0.999: ceil(8 ln(2000) / eta^2)."""
    return math.ceil(8 * math.log(2 / 0.001) / eta**2)


def find_heavy_hitters(
    alg: MeteredAlgorithm, dist: FiniteDistribution, eta: float, trials: Optional[int] = None, seed=0
) -> list:
    """Outputs whose empirical frequency is at least 3 eta / 4, heaviest first."""
    needed = heavy_hitter_trials(eta)
    trials = needed if trials is None else trials
    if trials < needed:
        raise ValueError(f"need at least {needed} trials for threshold {eta}, got {trials}")
    outs = draw_outputs(alg, dist, trials, seed)
    ys, counts = np.unique(outs, return_counts=True)
    cutoff = 0.75 * eta
    hits = [(int(y), c / trials) for y, c in zip(ys, counts) if c / trials >= cutoff]
    hits.sort(key=lambda t: (-t[1], t[0]))
    assert len(hits) <= math.ceil(1 / cutoff)
    return hits


@dataclass(frozen=True)
class ConfidenceReport:
    failure_rate: float
    trials: int
    ci_halfwidth: float


def estimate_confidence(
    alg: MeteredAlgorithm, task: StatisticalTask, dist: FiniteDistribution, trials: int, seed=0
) -> ConfidenceReport:
    """Fraction of runs whose output is not accepted on ``dist``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    outs = draw_outputs(alg, dist, trials, seed)
    ys, counts = np.unique(outs, return_counts=True)
    bad = sum(int(c) for y, c in zip(ys, counts) if not is_correct(task, dist, int(y)))
    return ConfidenceReport(bad / trials, trials, hoeffding_halfwidth(trials))


# ---------------------------------------------------------------- privacy


@dataclass(frozen=True)
class PrivacyAudit:
    epsilon: float
    delta_max: float
    witness: Optional[tuple]
    user_level: bool
    pairs_audited: int

    def passes(self, delta: float) -> bool:
        return self.delta_max <= delta

    def witness_json(self) -> Optional[dict]:
        if self.witness is None:
            return None
        s, t = self.witness
        return {"S": list(s), "S_prime": list(t), "delta": self.delta_max}


class LawCache:
    """Exact per-dataset output laws, computed once by tape enumeration."""

    def __init__(self, alg: MeteredAlgorithm, max_bits: int = DEFAULT_MAX_ENUM_BITS):
        self.alg = alg
        self.max_bits = max_bits
        self._laws: dict = {}

    def __call__(self, dataset: Sequence[int]) -> FiniteDistribution:
        key = tuple(int(x) for x in dataset)
        law = self._laws.get(key)
        if law is None:
            law = exact_law_over_tapes(self.alg, Sample.from_points(key), self.max_bits)
            self._laws[key] = law
        return law


def audit_dp_exact(
    alg: MeteredAlgorithm,
    neighbor_pairs: Iterable[tuple],
    epsilon: float,
    user_level: bool = False,
    max_bits: int = DEFAULT_MAX_ENUM_BITS,
    laws: Optional[LawCache] = None,
) -> PrivacyAudit:
    """Worst hockey-stick divergence over the pairs, in both orientations."""
    laws = laws or LawCache(alg, max_bits)
    worst, witness, count = 0.0, None, 0
    for s, t in neighbor_pairs:
        p, q = laws(s), laws(t)
        for a, b, pa, pb in ((s, t, p, q), (t, s, q, p)):
            d = hockey_stick(pa, pb, epsilon)
            if d > worst or witness is None:
                worst, witness = max(d, worst), (tuple(a), tuple(b))
        count += 1
    if count == 0:
        raise ValueError("no neighbor pairs to audit")
    return PrivacyAudit(epsilon, worst, witness, user_level, count)


def neighbors(
    universe: Sequence[int],
    n: int,
    user_level: bool = False,
    users: Optional[int] = None,
    cap: int = 2_000_000,
) -> list:
    """All ordered pairs of size-``n`` datasets over ``universe`` that are neighbors.

    Item-level neighbors differ in exactly one position. User-level neighbors
    split the dataset into ``users`` equal consecutive blocks and differ in
    exactly one block.
    """
    universe = list(universe)
    if user_level:
        if not users or n % users:
            raise ValueError("user-level neighbors need a user count dividing n")
        block = n // users
    else:
        users, block = n, 1
    per_block = len(universe) ** block
    total = len(universe) ** n * users * (per_block - 1)
    if total > cap:
        raise CapExceededError(f"{total} neighbor pairs exceed the cap of {cap}")
    blocks = list(itertools.product(universe, repeat=block))
    pairs = []
    for s in itertools.product(universe, repeat=n):
        for u in range(users):
            lo, hi = u * block, (u + 1) * block
            current = s[lo:hi]
            for replacement in blocks:
                if replacement != current:
                    pairs.append((s, s[:lo] + replacement + s[hi:]))
    return pairs
