"""Private selection, stability-to-privacy and privacy-to-stability pipelines."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    MeteredAlgorithm,
    Sample,
    StatisticalTask,
    exact_law_over_tapes,
    hoeffding_halfwidth,
    make_rng,
    plurality,
    sample,
    simulate,
)
from .distribution import FiniteDistribution, hockey_stick
from .errors import EnumerationTooLargeError, PreconditionError
from .rep import derandomize_hh
from .tape import DEFAULT_MAX_ENUM_BITS, BitTape, CompressedSampler, bits_for, compress_distribution
from .verify import draw_outputs, estimate_confidence

GAP_CONSTANT = 4


def _ceil_log2_inverse(x: float) -> int:
    """ceil(log2(1/x)) computed on the exact decimal value of ``x``."""
    inv = 1 / Fraction(str(x))
    k = 0
    while (1 << k) < inv:
        k += 1
    return k


def gap_bound(epsilon: float, delta: float, c: float = GAP_CONSTANT) -> int:
    """t = ceil(c ln(1/delta) / epsilon)."""
    return math.ceil(c * math.log(1 / delta) / epsilon)


def selection_bits(candidates: int, delta: float) -> int:
    """ceil(log2 |candidates|) + ceil(log2(2/delta))."""
    return bits_for(candidates) + _ceil_log2_inverse(delta / 2)


@dataclass(frozen=True)
class SelectionDataset:
    """A multiset of outputs stored as sorted ``(output, count)`` pairs."""

    counts: tuple
    epsilon: float
    delta: float
    c: float = GAP_CONSTANT

    def __post_init__(self):
        items = tuple(sorted((int(y), int(k)) for y, k in self.counts))
        if any(k < 0 for _, k in items):
            raise ValueError("counts must be nonnegative")
        if not any(k > 0 for _, k in items):
            raise ValueError("empty dataset")
        object.__setattr__(self, "counts", items)

    @classmethod
    def from_counts(cls, counts: Mapping[int, int], epsilon: float, delta: float, c: float = GAP_CONSTANT):
        return cls(tuple(counts.items()), epsilon, delta, c)

    @classmethod
    def from_items(cls, items: Sequence[int], epsilon: float, delta: float, c: float = GAP_CONSTANT):
        return cls.from_counts(Counter(int(y) for y in items), epsilon, delta, c)

    @property
    def total(self) -> int:
        return sum(k for _, k in self.counts)

    @property
    def gap(self) -> int:
        return gap_bound(self.epsilon, self.delta, self.c)

    @property
    def mode(self) -> int:
        top = max(k for _, k in self.counts)
        return next(y for y, k in self.counts if k == top)

    def count(self, y: int) -> int:
        return dict(self.counts).get(int(y), 0)

    def candidates(self, domain: Optional[Sequence[int]] = None) -> tuple:
        """Outputs within ``gap`` of the mode count.

        Without a domain only outputs present in the dataset qualify; with a
        domain every listed output does, including absent ones.
        """
        top = max(k for _, k in self.counts)
        pool = sorted({y for y, k in self.counts if k > 0} | set(domain or ()))
        return tuple(y for y in pool if self.count(y) >= top - self.gap)


def selection_law(data: SelectionDataset, domain: Optional[Sequence[int]] = None) -> FiniteDistribution:
    """Candidate ``y`` gets mass proportional to exp(epsilon * count(y) / 4)."""
    cands = data.candidates(domain)
    top = max(k for _, k in data.counts)
    weights = {y: math.exp(data.epsilon * (data.count(y) - top) / 4) for y in cands}
    return FiniteDistribution.from_weights(weights)


@lru_cache(maxsize=65536)
def _compressed(data: SelectionDataset, domain: Optional[tuple], bits: Optional[int]) -> CompressedSampler:
    law = selection_law(data, domain)
    k = bits if bits is not None else selection_bits(len(law), data.delta)
    return compress_distribution(law, k)


def selection_sampler(data: SelectionDataset, bits: Optional[int] = None, domain=None) -> CompressedSampler:
    return _compressed(data, None if domain is None else tuple(domain), bits)


def dp_select(data: SelectionDataset, tape: BitTape, bits: Optional[int] = None, domain=None) -> int:
    """Gap-truncated exponential mechanism sampled through a compressed table.

    Reads ``bits`` tape bits (default ``ceil(log2 |candidates|) + ceil(log2(2/delta))``).
    Every reachable output is within the gap of the mode by construction.
    """
    return selection_sampler(data, bits, domain).sample(tape)


def selection_mechanism(
    universe: Sequence[int], n: int, epsilon: float, delta: float, bits: Optional[int] = None, over_domain: bool = True
) -> MeteredAlgorithm:
    """dp_select as an algorithm on datasets of ``n`` outputs drawn from ``universe``.

    ``over_domain`` makes every universe element a candidate (absent ones too).
    """
    universe = tuple(sorted(int(y) for y in universe))
    k = bits if bits is not None else selection_bits(len(universe), delta)
    domain = universe if over_domain else None

    def fn(s: Sample, tape: BitTape) -> int:
        data = SelectionDataset.from_items(list(s), epsilon, delta)
        return dp_select(data, tape, k, domain)

    return MeteredAlgorithm(fn, n, k, "dp-select")


# ---------------------------------------------------------------- stability -> DP


@dataclass(frozen=True)
class DpPipelineParams:
    epsilon: float
    delta: float
    eta: float
    beta: float
    c_glob: Optional[int] = None
    users: Optional[int] = None
    c1: float = 8
    c: float = GAP_CONSTANT
    list_runs: Optional[int] = None
    dummy: Optional[int] = None

    def __post_init__(self):
        if self.epsilon <= 0 or not 0 < self.delta < 1 or not 0 < self.eta <= 1 or not 0 < self.beta < 1:
            raise ValueError("need epsilon > 0 and delta, beta in (0,1), eta in (0,1]")

    @property
    def C(self) -> int:
        return self.c_glob if self.c_glob is not None else _ceil_log2_inverse(self.eta)

    @property
    def T_users(self) -> int:
        if self.users is not None:
            return self.users
        return math.ceil(self.c1 * 2**self.C * math.log(1 / self.delta) / self.epsilon)

    @property
    def dummy_copies(self) -> int:
        return gap_bound(self.epsilon, self.delta, self.c)

    @property
    def runs(self) -> int:
        """Runs of the base algorithm inside the list step: ceil(2 ln(1/beta) / eta^2)."""
        if self.list_runs is not None:
            return self.list_runs
        return math.ceil(2 * math.log(1 / self.beta) / self.eta**2)

    @property
    def bits(self) -> int:
        return selection_bits(self.T_users + 1, self.delta)

    def budget_formula(self) -> float:
        """C + log2(1/eps) + log2(1/delta) + log2 log2(1/delta)."""
        l2d = math.log2(1 / self.delta)
        return self.C + math.log2(1 / self.epsilon) + l2d + math.log2(l2d)

    def beta_prime(self, beta: Optional[float] = None) -> float:
        """T (2 beta / eta)^(copies / 4): the union bound on a bad support."""
        b = self.beta if beta is None else beta
        return min(1.0, self.T_users * (2 * b / self.eta) ** (self.dummy_copies / 4))


def list_algorithm(alg: MeteredAlgorithm, runs: int) -> MeteredAlgorithm:
    """Plurality of a deterministic algorithm over ``runs`` blocks (ties to the smaller output)."""
    if alg.bit_budget:
        raise ValueError("list step needs a deterministic algorithm")
    n = alg.sample_size

    def fn(s: Sample, tape: BitTape) -> int:
        counts = Counter(alg(s.block(j, n)) for j in range(runs))
        top = max(counts.values())
        return min(y for y, c in counts.items() if c == top)

    def simulator(dist, rng, tapes):
        outs = simulate(alg, dist, rng, np.zeros(tapes.shape + (runs,), dtype=np.int64))
        return plurality(outs, axis=-1)

    return MeteredAlgorithm(fn, runs * n, 0, f"list({alg.name})", simulator=simulator)


def stab_to_dp(
    alg: MeteredAlgorithm,
    params: DpPipelineParams,
    task: Optional[StatisticalTask] = None,
    family: Sequence[FiniteDistribution] = (),
    check_trials: int = 20_000,
    seed=0,
) -> MeteredAlgorithm:
    """User-level private algorithm from a deterministic globally stable one.

    Each of ``T_users`` users contributes one sample block to the list step;
    the dataset of their outputs plus ``dummy_copies`` copies of the dummy is
    passed to :func:`dp_select` with a fixed ``params.bits``-bit budget.
    """
    if alg.bit_budget:
        raise ValueError("stab_to_dp needs a deterministic input")
    dummy = params.dummy
    if dummy is None:
        if task is None:
            raise ValueError("give params.dummy or a task")
        dummy = task.dummy
    if task is not None:
        for i, dist in enumerate(family):
            rep = estimate_confidence(alg, task, dist, check_trials, seed=(seed, 17, i))
            if rep.failure_rate > params.eta / 2:
                raise PreconditionError(
                    f"input failure rate {rep.failure_rate:.4f} exceeds eta/2", measured=rep.failure_rate
                )
    listed = list_algorithm(alg, params.runs)
    users, block, bits = params.T_users, listed.sample_size, params.bits
    eps, delta, c, copies = params.epsilon, params.delta, params.c, params.dummy_copies

    def dataset(outputs) -> SelectionDataset:
        counts = Counter(int(y) for y in outputs)
        counts[dummy] += copies
        return SelectionDataset.from_counts(counts, eps, delta, c)

    def user_outputs(s: Sample) -> list:
        return [listed(s.block(u, block)) for u in range(users)]

    def fn(s: Sample, tape: BitTape) -> int:
        return dp_select(dataset(user_outputs(s)), tape, bits)

    def law_on_sample(s: Sample) -> FiniteDistribution:
        return selection_sampler(dataset(user_outputs(s)), bits).law

    def simulator(dist, rng, tapes):
        flat = tapes.reshape(-1)
        outs = simulate(listed, dist, rng, np.zeros((len(flat), users), dtype=np.int64))
        result = np.empty(len(flat), dtype=np.int64)
        keys, inverse = np.unique(np.sort(outs, axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for g, key in enumerate(keys):
            rows = np.flatnonzero(inverse == g)
            table = selection_sampler(dataset(key), bits).lookup_array()
            result[rows] = table[flat[rows]]
        return result.reshape(tapes.shape)

    return MeteredAlgorithm(
        fn,
        users * block,
        bits,
        f"stab2dp({alg.name})",
        simulator=simulator,
        meta={"params": params, "list": listed, "dummy": dummy, "law_on_sample": law_on_sample},
    )


@dataclass(frozen=True)
class CorrectnessReport:
    bad_fraction: float
    trials: int
    ci_halfwidth: float
    bound: float
    max_support: int


def strong_correctness(
    alg_dp: MeteredAlgorithm, task: StatisticalTask, dist: FiniteDistribution, trials: int, bound: float, seed=0
) -> CorrectnessReport:
    """Fraction of sampled inputs whose whole output support is not accepted."""
    rng = make_rng(seed)
    law_on = alg_dp.meta.get("law_on_sample")
    bad, biggest = 0, 0
    for _ in range(trials):
        s = sample(dist, alg_dp.sample_size, rng)
        law = law_on(s) if law_on else exact_law_over_tapes(alg_dp, s)
        supp = law.positive_support()
        biggest = max(biggest, len(supp))
        if not all(task.accepted(dist, y) for y in supp):
            bad += 1
    return CorrectnessReport(bad / trials, trials, hoeffding_halfwidth(trials), bound, biggest)


# ---------------------------------------------------------------- DP -> stability


@dataclass(frozen=True)
class DpToStabReport:
    witness: tuple
    support: tuple
    mass: float
    target: float
    heaviest: tuple
    heavy_bound: float
    attempts: int


def dp_preconditions(epsilon: float, delta: float, users: int, c2: float = 1 / 8) -> tuple:
    """(epsilon cap, delta cap): c2 / sqrt(T ln T) and c2 / T."""
    eps_cap = math.inf if users < 2 else c2 / math.sqrt(users * math.log(users))
    return eps_cap, c2 / users


def dp_to_stab(
    alg: MeteredAlgorithm,
    epsilon: float,
    delta: float,
    users: int,
    family: Sequence[FiniteDistribution],
    c2: float = 1 / 8,
    gamma_prime: float = 0.05,
    search_budget: int = 32,
    mass_trials: int = 20_000,
    seed=0,
    max_bits: int = DEFAULT_MAX_ENUM_BITS,
):
    """Deterministic algorithm from a private one via a heavy-hitter witness.

    For each distribution, sampled inputs are searched for one whose output
    support (all tapes) carries marginal mass at least 1/(2 sqrt(e)); its
    heaviest member is the heavy-hitter witness. The input is then
    derandomized at weight 1/(2^(l+1) sqrt(e)). Returns the deterministic
    algorithm and one report per distribution.
    """
    eps_cap, delta_cap = dp_preconditions(epsilon, delta, users, c2)
    if epsilon > eps_cap or delta > delta_cap:
        raise PreconditionError(
            f"need epsilon <= {eps_cap:.4g} and delta <= {delta_cap:.4g}",
            measured={"epsilon": epsilon, "delta": delta},
        )
    ell = alg.bit_budget
    if ell > max_bits:
        raise EnumerationTooLargeError(f"cannot enumerate 2^{ell} tapes")
    target = 1 / (2 * math.sqrt(math.e))
    heavy = 1 / (2 ** (ell + 1) * math.sqrt(math.e))
    rng = make_rng(seed)
    reports = []
    for i, dist in enumerate(family):
        marginal = alg.law(dist)
        tol = 0.0
        if marginal is None:
            outs = draw_outputs(alg, dist, mass_trials, (seed, 19, i))
            ys, counts = np.unique(outs, return_counts=True)
            marginal = FiniteDistribution.from_pairs(zip(ys.tolist(), (counts / mass_trials).tolist()))
            tol = hoeffding_halfwidth(mass_trials)
        best, found = -1.0, None
        for attempt in range(1, search_budget + 1):
            s = sample(dist, alg.sample_size, rng)
            supp = exact_law_over_tapes(alg, s, max_bits).positive_support()
            mass = sum(float(marginal.prob(y)) for y in supp)
            best = max(best, mass)
            if mass >= target - tol:
                found = (s, supp, mass, attempt)
                break
        if found is None:
            raise PreconditionError(
                f"no sampled input reached support mass {target:.4f}; best was {best:.4f}", measured=best
            )
        s, supp, mass, attempt = found
        top = max(supp, key=lambda y: (float(marginal.prob(y)), -y))
        reports.append(
            DpToStabReport(tuple(s), supp, mass, target, (top, float(marginal.prob(top))), heavy, attempt)
        )
    return derandomize_hh(alg, heavy, gamma_prime, max_bits=max_bits), reports


@dataclass(frozen=True)
class GeneralizationReport:
    failed_fraction: float
    trials: int
    max_divergence: float
    passed: bool


def check_perfect_generalization(
    alg: MeteredAlgorithm,
    dist: FiniteDistribution,
    epsilon: float,
    delta: float,
    beta: float,
    trials: int,
    seed=0,
    marginal_trials: int = 100_000,
    max_bits: int = DEFAULT_MAX_ENUM_BITS,
) -> GeneralizationReport:
    """Compare each sampled input's exact output law with the marginal law.

    An input fails when the hockey-stick divergence at ``epsilon`` exceeds
    ``delta`` in either direction; the check passes when at most a ``beta``
    fraction fails.
    """
    marginal = alg.law(dist)
    if marginal is None:
        outs = draw_outputs(alg, dist, marginal_trials, (seed, 23))
        ys, counts = np.unique(outs, return_counts=True)
        marginal = FiniteDistribution.from_pairs(zip(ys.tolist(), (counts / marginal_trials).tolist()))
    rng = make_rng(seed)
    failed, worst = 0, 0.0
    for _ in range(trials):
        cond = exact_law_over_tapes(alg, sample(dist, alg.sample_size, rng), max_bits)
        d = max(hockey_stick(cond, marginal, epsilon), hockey_stick(marginal, cond, epsilon))
        worst = max(worst, d)
        failed += d > delta
    frac = failed / trials
    return GeneralizationReport(frac, trials, worst, frac <= beta)
