"""Statistical tasks, samples and the metered-algorithm abstraction.

A :class:`MeteredAlgorithm` is a deterministic map ``(sample, tape) -> output``
with a declared bit budget. Its ``fn`` is the ground truth. Algorithms may also
carry optional fast paths used by the Monte-Carlo harness:

``joint(dist)``
    exact joint law of the outputs across *all* tapes on one fresh sample:
    a small matrix of output profiles (one row per sample cell, one column
    per tape value) with a probability per row.
``simulator(dist, rng, tapes)``
    draws outputs for an integer array of tape values, every entry on its
    own fresh sample, with the same distribution as calling ``fn``.
``tally(dist, rng, count)``
    for ``count`` fresh samples, how many of the ``2**bit_budget`` tapes
    produce each output; returns ``(outputs, counts)`` with sorted outputs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .distribution import FiniteDistribution, as_fraction, empirical
from .errors import UnknownDistributionError
from .tape import DEFAULT_MAX_ENUM_BITS, BitTape, enumerate_tapes

# Output id used for an explicit "no answer"; it sorts after every real output.
BOTTOM = 2**62

HOEFFDING_CONFIDENCE = 0.999


def hoeffding_halfwidth(trials: int, confidence: float = HOEFFDING_CONFIDENCE) -> float:
    """Two-sided Hoeffding half-width; at 0.999 this is sqrt(ln(2000) / (2 trials))."""
    return math.sqrt(math.log(2 / (1 - confidence)) / (2 * trials))


def _flatten(seed):
    for s in seed:
        if isinstance(s, (tuple, list)):
            yield from _flatten(s)
        else:
            yield s


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng([int(s) % 2**64 for s in _flatten(seed)])
    return np.random.default_rng(int(seed) % 2**64)


# ---------------------------------------------------------------- samples


@dataclass(frozen=True, eq=False)
class Sample:
    """Data points plus a 64-bit tag per point.

    Tags are i.i.d. uniform for drawn samples and zero for explicit datasets.
    They give oracle algorithms enough entropy to realise any output law even
    on tiny data domains. ``source`` records the generating distribution.
    """

    points: np.ndarray
    tags: np.ndarray
    source: Optional[FiniteDistribution] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.int64).reshape(-1)
        tags = np.asarray(self.tags, dtype=np.uint64).reshape(-1)
        if points.shape != tags.shape:
            raise ValueError("points and tags differ in length")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "tags", tags)

    @classmethod
    def from_points(cls, points, source=None) -> "Sample":
        points = np.asarray(points, dtype=np.int64).reshape(-1)
        return cls(points, np.zeros(len(points), dtype=np.uint64), source)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return (int(x) for x in self.points)

    def block(self, j: int, size: int) -> "Sample":
        """The ``j``-th consecutive block of ``size`` points."""
        sl = slice(j * size, (j + 1) * size)
        return Sample(self.points[sl], self.tags[sl], self.source)

    def uniform(self) -> float:
        """A uniform variate in [0, 1) determined by the points and tags."""
        h = hashlib.blake2b(self.points.tobytes() + self.tags.tobytes(), digest_size=8)
        return int.from_bytes(h.digest(), "big") / 2.0**64

    def __repr__(self):
        return f"Sample({self.points.tolist()})"


def sample(dist: FiniteDistribution, n: int, seed) -> Sample:
    """``n`` i.i.d. draws from ``dist``, reproducible from ``seed``."""
    if n < 0:
        raise ValueError("sample size must be nonnegative")
    rng = make_rng(seed)
    points = dist.draw(rng, n) if n else np.zeros(0, dtype=np.int64)
    tags = rng.integers(0, 2**64, size=n, dtype=np.uint64)
    return Sample(points, tags, dist)


# ---------------------------------------------------------------- tasks


@dataclass(frozen=True)
class StatisticalTask:
    """Data domain X, ordered output domain Y and the accepted-solution predicate.

    Index order of ``output_domain`` is the tie-breaking order everywhere.
    """

    name: str
    data_domain: tuple
    output_domain: tuple
    accepted: Callable[[FiniteDistribution, int], bool] = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "data_domain", tuple(self.data_domain))
        dom = tuple(self.output_domain)
        if any(b <= a for a, b in zip(dom, dom[1:])):
            raise ValueError("output domain must be strictly increasing")
        object.__setattr__(self, "output_domain", dom)

    @property
    def dummy(self) -> int:
        """The order-minimal output."""
        return self.output_domain[0]


def is_correct(task: StatisticalTask, dist: FiniteDistribution, y: int) -> bool:
    if y == BOTTOM:
        return False
    return bool(task.accepted(dist, y))


@dataclass(frozen=True)
class TaskParameters:
    beta: Optional[float] = None
    rho: Optional[float] = None
    eta: Optional[float] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    users: Optional[int] = None

    def __post_init__(self):
        for name in ("beta", "rho", "eta", "alpha", "delta"):
            v = getattr(self, name)
            if v is not None and not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.users is not None and self.users < 1:
            raise ValueError("user count must be at least 1")


# ---------------------------------------------------------------- algorithms


@dataclass(frozen=True)
class Joint:
    """Joint output law across tapes on one fresh sample.

    ``profiles[k, r]`` is the output on tape ``r`` for sample cell ``k``,
    which has probability ``probs[k]``.
    """

    profiles: np.ndarray
    probs: tuple

    def __post_init__(self):
        profiles = np.asarray(self.profiles, dtype=np.int64)
        if profiles.ndim != 2 or profiles.shape[0] != len(self.probs):
            raise ValueError("profiles must be (cells, tapes) matching probs")
        object.__setattr__(self, "profiles", profiles)

    @property
    def n_tapes(self) -> int:
        return self.profiles.shape[1]

    @property
    def is_exact(self) -> bool:
        return all(isinstance(p, Fraction) for p in self.probs)

    def prob_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])

    def outputs(self) -> np.ndarray:
        return np.unique(self.profiles)

    def per_tape(self, r: int) -> FiniteDistribution:
        weights: dict = {}
        for k, p in enumerate(self.probs):
            y = int(self.profiles[k, r])
            weights[y] = weights.get(y, 0) + p
        return FiniteDistribution.from_pairs(weights.items())

    def marginal(self) -> FiniteDistribution:
        """Output law with a uniformly random tape."""
        weights: dict = {}
        n = self.n_tapes
        scale = Fraction(1, n) if self.is_exact else 1.0 / n
        for k, p in enumerate(self.probs):
            ys, counts = np.unique(self.profiles[k], return_counts=True)
            for y, c in zip(ys.tolist(), counts.tolist()):
                weights[y] = weights.get(y, 0) + p * c * scale
        return FiniteDistribution.from_pairs(weights.items())

    def columns(self, tapes: Sequence[int]) -> "Joint":
        """Joint law restricted to a list of tape values (in that order)."""
        return merge_profiles(self.profiles[:, list(tapes)], self.probs)

    @classmethod
    def from_law(cls, law: FiniteDistribution) -> "Joint":
        pairs = [(y, p) for y, p in law.items() if p > 0]
        return cls(np.array([[y] for y, _ in pairs]), tuple(p for _, p in pairs))


def merge_profiles(profiles: np.ndarray, probs) -> Joint:
    """Collapse identical profile rows, adding their probabilities."""
    merged: dict = {}
    order = []
    for row, p in zip(map(tuple, np.asarray(profiles).tolist()), probs):
        if row not in merged:
            merged[row] = 0
            order.append(row)
        merged[row] = merged[row] + p
    return Joint(np.array(order, dtype=np.int64), tuple(merged[r] for r in order))


@dataclass(frozen=True)
class MeteredAlgorithm:
    """Deterministic ``(sample, tape) -> output`` with a declared bit budget."""

    fn: Callable[[Sample, BitTape], int]
    sample_size: int
    bit_budget: int
    name: str = "algorithm"
    joint: Optional[Callable[[FiniteDistribution], Joint]] = None
    simulator: Optional[Callable] = None
    tally: Optional[Callable] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, sample: Sample, tape: Optional[BitTape] = None) -> int:
        if tape is None:
            if self.bit_budget:
                raise ValueError(f"{self.name} needs a {self.bit_budget}-bit tape")
            tape = BitTape.empty()
        if tape.budget != self.bit_budget:
            raise ValueError(
                f"{self.name} declares {self.bit_budget} bits, got a {tape.budget}-bit tape"
            )
        if len(sample) != self.sample_size:
            raise ValueError(
                f"{self.name} takes {self.sample_size} points, got {len(sample)}"
            )
        return int(self.fn(sample, tape))

    @property
    def is_deterministic(self) -> bool:
        return self.bit_budget == 0

    def joint_law(self, dist: FiniteDistribution) -> Optional[Joint]:
        """The joint fast path if available for ``dist``, else ``None``."""
        if self.joint is None:
            return None
        try:
            return self.joint(dist)
        except UnknownDistributionError:
            return None

    def law(self, dist: FiniteDistribution) -> Optional[FiniteDistribution]:
        """Marginal output law on ``dist`` (uniform tape) when known in closed form."""
        j = self.joint_law(dist)
        return None if j is None else j.marginal()

    def with_fast_paths(self, **changes) -> "MeteredAlgorithm":
        return replace(self, **changes)


def run_ground_truth(alg: MeteredAlgorithm, dist, rng, tapes: np.ndarray) -> np.ndarray:
    tapes = np.asarray(tapes)
    out = np.empty(tapes.shape, dtype=np.int64)
    flat = out.reshape(-1)
    for i, r in enumerate(tapes.reshape(-1).tolist()):
        s = sample(dist, alg.sample_size, rng)
        flat[i] = alg(s, BitTape.from_int(r, alg.bit_budget))
    return out


def simulate(alg: MeteredAlgorithm, dist: FiniteDistribution, rng, tapes) -> np.ndarray:
    """Outputs for an array of tape values, each entry on an independent fresh sample."""
    rng = make_rng(rng)
    tapes = np.asarray(tapes, dtype=np.int64)
    if alg.simulator is not None:
        return np.asarray(alg.simulator(dist, rng, tapes), dtype=np.int64)
    j = alg.joint_law(dist)
    if j is not None:
        cells = rng.choice(len(j.probs), size=tapes.shape, p=_normalised(j.prob_array()))
        return j.profiles[cells, tapes]
    return run_ground_truth(alg, dist, rng, tapes)


def sample_tallies(alg: MeteredAlgorithm, dist: FiniteDistribution, rng, count: int):
    """Per fresh sample, the number of tapes giving each output.

    Returns ``(outputs, counts)``: sorted output ids and a ``(count, len(outputs))``
    integer matrix whose rows sum to ``2**bit_budget``.
    """
    rng = make_rng(rng)
    if alg.tally is not None:
        return alg.tally(dist, rng, count)
    j = alg.joint_law(dist)
    if j is not None:
        outputs = j.outputs()
        per_cell = np.stack([(j.profiles == y).sum(axis=1) for y in outputs], axis=1)
        cells = rng.choice(len(j.probs), size=count, p=_normalised(j.prob_array()))
        return outputs, per_cell[cells]
    if alg.bit_budget == 0:
        outs = simulate(alg, dist, rng, np.zeros(count, dtype=np.int64))
        outputs, codes = np.unique(outs, return_inverse=True)
        counts = np.zeros((count, len(outputs)), dtype=np.int64)
        counts[np.arange(count), codes.reshape(-1)] = 1
        return outputs, counts
    rows = []
    for _ in range(count):
        s = sample(dist, alg.sample_size, rng)
        rows.append([alg(s, t) for t in enumerate_tapes(alg.bit_budget)])
    outs = np.array(rows, dtype=np.int64)
    outputs = np.unique(outs)
    counts = np.stack([(outs == y).sum(axis=1) for y in outputs], axis=1)
    return outputs, counts


def _normalised(p: np.ndarray) -> np.ndarray:
    return p / p.sum()


def plurality(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Most frequent value along ``axis``; ties go to the smallest value."""
    values = np.asarray(values)
    moved = np.moveaxis(values, axis, -1)
    rows = moved.reshape(-1, moved.shape[-1])
    uniq, codes = np.unique(rows, return_inverse=True)
    codes = codes.reshape(rows.shape)
    counts = np.zeros((rows.shape[0], len(uniq)), dtype=np.int64)
    np.add.at(counts, (np.arange(rows.shape[0])[:, None], codes), 1)
    return uniq[np.argmax(counts, axis=1)].reshape(moved.shape[:-1])


def plurality_of_counts(outputs: Sequence[int], counts: np.ndarray) -> np.ndarray:
    """Row-wise argmax of ``counts`` (columns aligned with sorted ``outputs``)."""
    outputs = np.asarray(outputs)
    if np.any(np.diff(outputs) <= 0):
        raise ValueError("outputs must be sorted")
    return outputs[np.argmax(counts, axis=-1)]


# ---------------------------------------------------------------- exact laws


def exact_law_over_tapes(
    alg: MeteredAlgorithm, fixed_sample: Sample, max_bits: int = DEFAULT_MAX_ENUM_BITS
) -> FiniteDistribution:
    """Exact output law on a fixed sample, enumerating every tape."""
    tapes = enumerate_tapes(alg.bit_budget, max_bits)
    counts: dict = {}
    for tape in tapes:
        y = alg(fixed_sample, tape)
        counts[y] = counts.get(y, 0) + 1
    assert len(counts) <= len(tapes)
    total = len(tapes)
    return FiniteDistribution.from_pairs((y, Fraction(c, total)) for y, c in counts.items())


@dataclass(frozen=True)
class OutputLaw:
    law: FiniteDistribution
    exact: bool
    runs: Optional[int] = None
    ci_halfwidth: Optional[float] = None


def output_law(
    alg: MeteredAlgorithm,
    dist: Optional[FiniteDistribution] = None,
    fixed_sample: Optional[Sample] = None,
    trials: int = 100_000,
    seed=0,
    max_bits: int = DEFAULT_MAX_ENUM_BITS,
) -> OutputLaw:
    """Output law on a fixed sample (tape enumeration) or on a distribution.

    On a distribution the closed-form joint is used when present; otherwise
    the law is estimated from ``trials`` runs with uniform random tapes.
    """
    if fixed_sample is not None:
        return OutputLaw(exact_law_over_tapes(alg, fixed_sample, max_bits), True)
    if dist is None:
        raise ValueError("need a distribution or a fixed sample")
    j = alg.joint_law(dist)
    if j is not None:
        return OutputLaw(j.marginal(), j.is_exact)
    rng = make_rng(seed)
    tapes = rng.integers(0, 1 << alg.bit_budget, size=trials, dtype=np.int64)
    outs = simulate(alg, dist, rng, tapes)
    ys, counts = np.unique(outs, return_counts=True)
    law = FiniteDistribution.from_pairs(zip(ys.tolist(), (counts / trials).tolist()))
    return OutputLaw(law, False, trials, hoeffding_halfwidth(trials))


def attach_laws(alg: MeteredAlgorithm, laws: Mapping[FiniteDistribution, FiniteDistribution]) -> MeteredAlgorithm:
    """Give a deterministic algorithm closed-form laws for some distributions.

    Used when the law was estimated separately (e.g. from pilot runs); the
    simulator then draws outputs from it instead of running ``fn``.
    """
    if alg.bit_budget:
        raise ValueError("only deterministic algorithms take attached laws")
    table = dict(laws)

    def joint(dist):
        if dist not in table:
            raise UnknownDistributionError(dist)
        return Joint.from_law(table[dist])

    return replace(alg, joint=joint, simulator=None)


# ---------------------------------------------------------------- oracles


def _lookup(table: Mapping, dist):
    if dist is None or dist not in table:
        raise UnknownDistributionError(
            "oracle has no law for this distribution" if dist is not None
            else "oracle needs a sample drawn from a known distribution"
        )
    return table[dist]


def make_oracle_algorithm(
    laws: Mapping[FiniteDistribution, FiniteDistribution],
    sample_size: int = 1,
    name: str = "oracle",
) -> MeteredAlgorithm:
    """Deterministic algorithm whose output law on each keyed distribution is given.

    The output is the law's quantile at a hash of the sample, so all the
    randomness comes from the sample and the bit budget is zero.
    """
    table = {d: law for d, law in laws.items()}

    def fn(s: Sample, tape: BitTape) -> int:
        return _lookup(table, s.source).quantile(s.uniform())

    def joint(dist):
        return Joint.from_law(_lookup(table, dist))

    return MeteredAlgorithm(fn, sample_size, 0, name, joint=joint)


def make_tape_oracle(
    laws: Mapping[FiniteDistribution, Sequence[FiniteDistribution]],
    bits: int,
    sample_size: int = 1,
    name: str = "tape-oracle",
) -> MeteredAlgorithm:
    """Algorithm with a prescribed output law for every (distribution, tape value).

    All tapes share the sample's uniform variate, so the joint across tapes is
    the comonotone coupling of the per-tape laws.
    """
    table = {}
    for d, per_tape in laws.items():
        per_tape = tuple(per_tape)
        if len(per_tape) != 1 << bits:
            raise ValueError(f"need {1 << bits} per-tape laws, got {len(per_tape)}")
        table[d] = per_tape

    def fn(s: Sample, tape: BitTape) -> int:
        per_tape = _lookup(table, s.source)
        return per_tape[tape.read_int(bits)].quantile(s.uniform())

    def joint(dist):
        return comonotone_joint(_lookup(table, dist))

    return MeteredAlgorithm(fn, sample_size, bits, name, joint=joint)


def comonotone_joint(per_tape: Sequence[FiniteDistribution]) -> Joint:
    """Joint law of quantile(U) across laws driven by one shared uniform U."""
    exact = all(law.is_exact for law in per_tape)
    conv = as_fraction if exact else float
    breaks = {conv(0), conv(1)}
    cdfs = []
    for law in per_tape:
        acc = conv(0)
        steps = []
        for y, p in law.items():
            if p > 0:
                acc = acc + conv(p)
                steps.append((acc, y))
                breaks.add(acc)
        cdfs.append(steps)
    points = sorted(b for b in breaks if b <= 1)
    rows, probs = [], []
    for lo, hi in zip(points, points[1:]):
        if hi <= lo:
            continue
        row = []
        for steps in cdfs:
            y = next((y for c, y in steps if c > lo), steps[-1][1])
            row.append(y)
        rows.append(row)
        probs.append(hi - lo)
    if not exact:
        total = sum(probs)
        probs = [p / total for p in probs]
    return merge_profiles(np.array(rows, dtype=np.int64), probs)


# ---------------------------------------------------------------- task zoo


def planted_task(laws: Mapping[FiniteDistribution, FiniteDistribution], output_domain=None, name="planted") -> StatisticalTask:
    """Task whose accepted outputs on each distribution are the law's positive support."""
    accepted_sets = {d: frozenset(law.positive_support()) for d, law in laws.items()}
    if output_domain is None:
        output_domain = sorted(set().union(*accepted_sets.values()))
    data_domain = sorted(set().union(*(d.support for d in laws)))

    def accepted(dist, y):
        return y in accepted_sets.get(dist, frozenset())

    return StatisticalTask(name, data_domain, output_domain, accepted)


@dataclass(frozen=True)
class CoinBiasGrid:
    """Estimating the biases of ``d`` coins to within ``alpha`` on a grid.

    A data point is an integer whose bit ``j`` is coin ``j``'s outcome; an output
    is the mixed-radix index of a grid vector.
    """

    d: int
    alpha: float
    step: float

    @property
    def levels(self) -> int:
        return int(math.floor(1 / self.step + 1e-9)) + 1

    def encode(self, values: Sequence[float]) -> int:
        idx = 0
        for v in values:
            idx = idx * self.levels + int(round(v / self.step))
        return idx

    def decode(self, y: int) -> tuple:
        out = []
        for _ in range(self.d):
            y, k = divmod(y, self.levels)
            out.append(k * self.step)
        return tuple(reversed(out))

    def biases(self, dist: FiniteDistribution) -> tuple:
        return tuple(
            sum(float(p) for x, p in dist.items() if (x >> j) & 1) for j in range(self.d)
        )

    def task(self) -> StatisticalTask:
        def accepted(dist, y):
            est = self.decode(y)
            return all(abs(e - b) <= self.alpha + 1e-12 for e, b in zip(est, self.biases(dist)))

        return StatisticalTask(
            f"coin-bias-d{self.d}", range(1 << self.d), range(self.levels**self.d), accepted
        )

    def rounding_algorithm(self, n: int) -> MeteredAlgorithm:
        """Empirical means rounded to the nearest grid point."""

        def fn(s: Sample, tape: BitTape) -> int:
            pts = s.points
            means = [float(((pts >> j) & 1).mean()) if len(pts) else 0.0 for j in range(self.d)]
            return self.encode([round(m / self.step) * self.step for m in means])

        return MeteredAlgorithm(fn, n, 0, f"coin-rounding-n{n}")

    def product(self, biases: Sequence[float]) -> FiniteDistribution:
        """Distribution of independent coins with the given biases."""
        weights = {}
        for x in range(1 << self.d):
            w = 1.0
            for j, b in enumerate(biases):
                w *= b if (x >> j) & 1 else 1 - b
            weights[x] = w
        return FiniteDistribution.from_weights(weights)


def coin_bias_task(d: int = 1, alpha: float = 0.1, step: Optional[float] = None) -> CoinBiasGrid:
    return CoinBiasGrid(d, alpha, alpha if step is None else step)


SIGN_NEGATIVE, SIGN_POSITIVE = -1, 1


def sign_task() -> StatisticalTask:
    """Report the sign of p - 1/2 for a single coin; both signs are fine at p = 1/2."""

    def accepted(dist, y):
        p = dist.prob(1)
        if p == Fraction(1, 2) or p == 0.5:
            return y in (SIGN_NEGATIVE, SIGN_POSITIVE)
        return y == (SIGN_POSITIVE if p > 0.5 else SIGN_NEGATIVE)

    return StatisticalTask("sign", (0, 1), (SIGN_NEGATIVE, SIGN_POSITIVE), accepted)


def majority_algorithm(n: int) -> MeteredAlgorithm:
    """Sign of the empirical bias; a tie reports the smaller output."""

    def fn(s: Sample, tape: BitTape) -> int:
        ones = int(np.sum(s.points == 1))
        return SIGN_POSITIVE if 2 * ones > len(s) else SIGN_NEGATIVE

    return MeteredAlgorithm(fn, n, 0, f"majority-n{n}")


__all__ = [
    "BOTTOM",
    "Sample",
    "sample",
    "StatisticalTask",
    "TaskParameters",
    "is_correct",
    "Joint",
    "MeteredAlgorithm",
    "simulate",
    "sample_tallies",
    "plurality",
    "exact_law_over_tapes",
    "OutputLaw",
    "output_law",
    "attach_laws",
    "make_oracle_algorithm",
    "make_tape_oracle",
    "comonotone_joint",
    "planted_task",
    "coin_bias_task",
    "sign_task",
    "majority_algorithm",
    "empirical",
    "hoeffding_halfwidth",
]
