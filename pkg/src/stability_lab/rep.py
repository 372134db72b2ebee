"""Transforms between heavy hitters, global stability and replicability.

* :func:`derandomize_hh` turns an algorithm with a heavy hitter into a
  deterministic one by pooled plurality over sub-samples and all tapes.
* :func:`rep_to_glob` amplifies a replicable algorithm by plurality over
  sample blocks that share one tape.
* :func:`glob_to_rep` is random thresholding: estimate the output law of a
  deterministic algorithm, pick one of ``T`` thresholds with the tape and
  return a member of the set of outputs above it.
* :func:`amplify_replicability` composes a random tape list, derandomization
  and thresholding to push any replicability level towards one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from .core import (
    BOTTOM,
    Joint,
    MeteredAlgorithm,
    Sample,
    StatisticalTask,
    make_rng,
    plurality,
    sample_tallies,
    simulate,
)
from .distribution import FiniteDistribution, as_fraction
from .errors import EnumerationTooLargeError, PreconditionError, UnknownDistributionError
from .tape import DEFAULT_MAX_ENUM_BITS, BitTape, bits_for, enumerate_tapes
from .verify import estimate_confidence, estimate_replicability

SELECTION_RULES = ("order", "min_estimate")
ROW_BUDGET = 4_000_000  # max entries materialised at once by the fallback simulators


def _exact(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else as_fraction(x)


def default_estimation_runs(gamma: float, beta: float, tau_prime: float) -> int:
    """4 * ceil(9 / (2 gamma^2) * ln(2 / (beta * tau'/2))): every estimate within gamma/3."""
    return 4 * math.ceil(9 / (2 * gamma**2) * math.log(2 / (beta * tau_prime / 2)))


@dataclass(frozen=True)
class ThresholdingParams:
    """Parameters of random thresholding.

    ``T`` is the requested threshold count; tapes index ``T_eff``, the next
    power of two, so the thresholds actually used are ``eta - i*gamma`` for
    ``i = 1 .. T_eff``.
    """

    T: int
    eta: float
    gamma: float
    tau: float
    N: int
    rho: float
    beta: float = 0.05
    tau_prime: float = 0.02

    def __post_init__(self):
        if self.T < 1 or self.N < 1:
            raise ValueError("T and N must be positive")
        if not 0 < self.tau < self.gamma < self.eta <= 1:
            raise ValueError(f"need 0 < tau < gamma < eta <= 1, got {self.tau}, {self.gamma}, {self.eta}")
        if self.eta - self.T_eff * self.gamma <= 0:
            raise ValueError("the lowest threshold must stay positive")

    @property
    def bits(self) -> int:
        return bits_for(self.T)

    @property
    def T_eff(self) -> int:
        return 1 << self.bits

    def thresholds(self) -> np.ndarray:
        return self.eta - self.gamma * np.arange(1, self.T_eff + 1)

    def replicability_bound(self) -> float:
        """1 - (1/eta - 1)/T_eff - tau'."""
        return 1 - (1 / self.eta - 1) / self.T_eff - self.tau_prime

    @classmethod
    def default(
        cls,
        eta: Optional[float] = None,
        c_glob: Optional[int] = None,
        rho: Optional[float] = None,
        T: Optional[int] = None,
        beta: float = 0.05,
        tau_prime: float = 0.02,
        gamma: Optional[float] = None,
        tau: Optional[float] = None,
        N: Optional[int] = None,
    ) -> "ThresholdingParams":
        """Fill in defaults from either ``rho`` or an explicit ``T``.

        ``T = ceil((1/eta - 1) / rho)``; an explicit ``T`` instead sets
        ``rho = (1/eta - 1) / T``. Then ``gamma = eta*rho/(4 T_eff)`` (capped so
        the lowest threshold is at least eta/2), ``tau = gamma/10`` and ``N``
        from :func:`default_estimation_runs`.
        """
        if eta is None:
            if c_glob is None:
                raise ValueError("give eta or c_glob")
            eta = 2.0**-c_glob
        bad = 1 / _exact(eta) - 1
        if T is None:
            if rho is None:
                raise ValueError("give rho or T")
            T = max(1, math.ceil(bad / _exact(rho)))
        elif rho is None:
            rho = float(bad / T) if bad > 0 else 0.5
        t_eff = 1 << bits_for(T)
        if gamma is None:
            gamma = min(eta * rho / (4 * t_eff), eta / (2 * t_eff))
        if tau is None:
            tau = gamma / 10
        if N is None:
            N = default_estimation_runs(gamma, beta, tau_prime)
        return cls(T, float(eta), float(gamma), float(tau), int(N), float(rho), beta, tau_prime)


def select_threshold(counts: np.ndarray, outputs: np.ndarray, cutoffs: np.ndarray, rule: str) -> np.ndarray:
    """Vectorised choice from ``{y : count_y >= cutoff}``.

    ``order`` takes the smallest such output, ``min_estimate`` the one with the
    smallest count (ties to the smaller output); empty sets give ``BOTTOM``.
    """
    counts = np.atleast_2d(counts)
    above = counts >= np.asarray(cutoffs, dtype=float)[:, None]
    found = above.any(axis=1)
    if rule == "order":
        idx = np.argmax(above, axis=1)
    elif rule == "min_estimate":
        masked = np.where(above, counts, np.iinfo(np.int64).max)
        idx = np.argmin(masked, axis=1)
    else:
        raise ValueError(f"unknown selection rule {rule!r}; use one of {SELECTION_RULES}")
    return np.where(found, np.asarray(outputs, dtype=np.int64)[idx], BOTTOM)


def _counts_from_runs(alg: MeteredAlgorithm, dist, rng, runs: int, rows: int):
    """Output counts of ``runs`` independent runs, for each of ``rows`` entries."""
    per_chunk = max(1, ROW_BUDGET // max(runs, 1))
    blocks = []
    for start in range(0, rows, per_chunk):
        k = min(per_chunk, rows - start)
        blocks.append(simulate(alg, dist, rng, np.zeros((k, runs), dtype=np.int64)))
    outs = np.concatenate(blocks, axis=0)
    outputs, codes = np.unique(outs, return_inverse=True)
    codes = codes.reshape(outs.shape)
    counts = np.zeros((rows, len(outputs)), dtype=np.int64)
    np.add.at(counts, (np.arange(rows)[:, None], codes), 1)
    return outputs, counts


def glob_to_rep(
    alg: MeteredAlgorithm,
    params: ThresholdingParams,
    selection: str = "order",
    task: Optional[StatisticalTask] = None,
    family: Sequence[FiniteDistribution] = (),
    check_trials: int = 20_000,
    seed=0,
) -> MeteredAlgorithm:
    """Random thresholding on top of a deterministic globally stable algorithm.

    Runs ``alg`` on ``N`` blocks, reads ``params.bits`` tape bits to pick a
    threshold and selects among the outputs whose empirical frequency clears it.
    With a task and a distribution family the input's failure rate is first
    checked against eta/8.
    """
    if alg.bit_budget:
        raise ValueError("thresholding needs a deterministic input algorithm")
    if selection not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {selection!r}")
    if task is not None:
        for i, dist in enumerate(family):
            rep = estimate_confidence(alg, task, dist, check_trials, seed=(seed, 7, i))
            if rep.failure_rate > params.eta / 8:
                raise PreconditionError(
                    f"input failure rate {rep.failure_rate:.4f} exceeds eta/8 = {params.eta / 8:.4f}",
                    measured=rep.failure_rate,
                )
    n, N, bits = alg.sample_size, params.N, params.bits
    cutoffs = params.thresholds() * N

    def fn(s: Sample, tape: BitTape) -> int:
        outs = np.array([alg(s.block(j, n)) for j in range(N)], dtype=np.int64)
        outputs, counts = np.unique(outs, return_counts=True)
        i = tape.read_int(bits)
        return int(select_threshold(counts[None, :], outputs, cutoffs[[i]], selection)[0])

    def simulator(dist, rng, tapes):
        flat = tapes.reshape(-1)
        law = alg.law(dist)
        if law is not None:
            outputs = np.array(law.support, dtype=np.int64)
            p = law.as_array()
            counts = rng.multinomial(N, p / p.sum(), size=len(flat))
        else:
            outputs, counts = _counts_from_runs(alg, dist, rng, N, len(flat))
        return select_threshold(counts, outputs, cutoffs[flat], selection).reshape(tapes.shape)

    return MeteredAlgorithm(
        fn,
        N * n,
        bits,
        f"glob2rep({alg.name})",
        simulator=simulator,
        meta={"params": params, "selection": selection, "inner": alg},
    )


@dataclass(frozen=True)
class ThresholdAnalysis:
    thresholds: tuple
    collisions: tuple
    good: tuple
    laws: tuple
    predicted: float
    bound: float

    @property
    def good_count(self) -> int:
        return sum(self.good)


def threshold_analysis(
    law: FiniteDistribution, params: ThresholdingParams, selection: str = "order", max_uncertain: int = 16
) -> ThresholdAnalysis:
    """Threshold-by-threshold replicability of :func:`glob_to_rep` on a known law.

    For each threshold, every coordinate's "clears the cutoff" event has an
    exact binomial probability; coordinates are treated as independent (the
    multinomial correlation is negligible at the estimation sizes used). The
    per-threshold collision probability is the sum of squared output masses.
    A threshold is *good* when no true mass lies within gamma/3 of it.
    """
    ys = [y for y, p in law.items() if p > 0]
    ps = np.array([float(law.prob(y)) for y in ys])
    N = params.N
    colls, goods, laws = [], [], []
    for t in params.thresholds():
        cut = math.ceil(t * N - 1e-9)
        q = binom.sf(cut - 1, N, ps)
        sure = q >= 1 - 1e-15
        unsure = [k for k in range(len(ys)) if 1e-15 < q[k] < 1 - 1e-15]
        if len(unsure) > max_uncertain:
            raise EnumerationTooLargeError(f"{len(unsure)} uncertain coordinates")
        dist: dict = {}
        for pattern in itertools.product((False, True), repeat=len(unsure)):
            weight = 1.0
            members = set(np.flatnonzero(sure).tolist())
            for k, on in zip(unsure, pattern):
                weight *= q[k] if on else 1 - q[k]
                if on:
                    members.add(k)
            if weight == 0:
                continue
            for y, share in _pick(members, ys, ps, selection):
                dist[y] = dist.get(y, 0.0) + weight * share
        colls.append(sum(v * v for v in dist.values()))
        goods.append(bool(np.all(np.abs(ps - t) >= params.gamma / 3)))
        laws.append(dist)
    return ThresholdAnalysis(
        tuple(params.thresholds().tolist()),
        tuple(colls),
        tuple(goods),
        tuple(laws),
        float(np.mean(colls)),
        params.replicability_bound() + params.tau_prime,
    )


def _pick(members, ys, ps, selection):
    if not members:
        return [(BOTTOM, 1.0)]
    members = sorted(members)
    if selection == "order":
        return [(ys[members[0]], 1.0)]
    low = min(ps[k] for k in members)
    tied = [k for k in members if ps[k] == low]
    return [(ys[k], 1.0 / len(tied)) for k in tied]


# ---------------------------------------------------------------- derandomization


def derandomization_runs(eta: float, gamma_prime: float) -> int:
    """ceil(2 ln(1/gamma') / eta^2) sub-samples."""
    return math.ceil(2 * math.log(1 / gamma_prime) / eta**2)


def _cell_output_counts(j: Joint):
    outputs = j.outputs()
    per_cell = np.stack([(j.profiles == y).sum(axis=1) for y in outputs], axis=1)
    return outputs, per_cell


def _compositions(m: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[m]], dtype=np.int64)
    if k == 2:
        a = np.arange(m + 1, dtype=np.int64)
        return np.stack([a, m - a], axis=1)
    rows = []
    for bars in itertools.combinations(range(m + k - 1), k - 1):
        edges = (-1,) + bars + (m + k - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(rows, dtype=np.int64)


def pooled_plurality_law(j: Joint, m: int, limit: int = 2_000_000) -> FiniteDistribution:
    """Exact law of the pooled plurality over ``m`` sub-samples and all tapes.

    Enumerates every way the ``m`` sub-samples can fall into the joint's cells.
    """
    outputs, per_cell = _cell_output_counts(j)
    k = len(j.probs)
    if math.comb(m + k - 1, k - 1) > limit:
        raise EnumerationTooLargeError(f"{math.comb(m + k - 1, k - 1)} cell compositions")
    comps = _compositions(m, k)
    p = j.prob_array()
    logw = gammaln(m + 1) - gammaln(comps + 1).sum(axis=1) + (comps * np.log(p)).sum(axis=1)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    winners = outputs[np.argmax(comps @ per_cell, axis=1)]
    ys, inv = np.unique(winners, return_inverse=True)
    mass = np.bincount(inv.reshape(-1), weights=w)
    mass = mass / mass.sum()
    return FiniteDistribution.from_pairs(zip(ys.tolist(), mass.tolist()))


def derandomize_hh(
    alg: MeteredAlgorithm,
    eta: float,
    gamma_prime: float = 0.05,
    runs: Optional[int] = None,
    max_bits: int = DEFAULT_MAX_ENUM_BITS,
    exact_limit: int = 2_000_000,
) -> MeteredAlgorithm:
    """Deterministic plurality of ``alg`` over ``m`` sub-samples and every tape.

    ``m = ceil(2 ln(1/gamma') / eta^2)`` unless ``runs`` is given. The result
    has budget zero and its output is a function of the sample alone.
    """
    ell = alg.bit_budget
    if ell > max_bits:
        raise EnumerationTooLargeError(f"cannot enumerate 2^{ell} tapes (cap is 2^{max_bits})")
    m = runs if runs is not None else derandomization_runs(eta, gamma_prime)
    n = alg.sample_size
    laws: dict = {}

    def fn(s: Sample, tape: BitTape) -> int:
        counts: dict = {}
        tapes = list(enumerate_tapes(ell, max_bits))
        for j in range(m):
            block = s.block(j, n)
            for t in tapes:
                y = alg(block, t.replay())
                counts[y] = counts.get(y, 0) + 1
        best = max(counts.values())
        return min(y for y, c in counts.items() if c == best)

    def joint(dist):
        if dist not in laws:
            j = alg.joint_law(dist)
            if j is None:
                raise UnknownDistributionError("input has no closed-form joint law")
            try:
                laws[dist] = pooled_plurality_law(j, m, exact_limit)
            except EnumerationTooLargeError as exc:
                raise UnknownDistributionError(str(exc)) from exc
        return Joint.from_law(laws[dist])

    def simulator(dist, rng, tapes):
        rows = tapes.size
        j = alg.joint_law(dist)
        if j is not None:
            outputs, per_cell = _cell_output_counts(j)
            cells = rng.multinomial(m, j.prob_array() / j.prob_array().sum(), size=rows)
            pooled = cells @ per_cell
            return outputs[np.argmax(pooled, axis=1)].reshape(tapes.shape)
        per_chunk = max(1, ROW_BUDGET // m)
        result = np.empty(rows, dtype=np.int64)
        for start in range(0, rows, per_chunk):
            k = min(per_chunk, rows - start)
            outputs, counts = sample_tallies(alg, dist, rng, k * m)
            pooled = counts.reshape(k, m, -1).sum(axis=1)
            result[start : start + k] = outputs[np.argmax(pooled, axis=1)]
        return result.reshape(tapes.shape)

    return MeteredAlgorithm(
        fn,
        m * n,
        0,
        f"derandomized({alg.name})",
        joint=joint,
        simulator=simulator,
        meta={"runs": m, "eta": eta, "gamma_prime": gamma_prime, "inner": alg},
    )


@dataclass(frozen=True)
class CollisionCheck:
    """Measured two-run collision against a bound, per distribution."""

    estimates: tuple
    ci_halfwidth: float
    bound: float

    @property
    def passed(self) -> bool:
        return all(e + self.ci_halfwidth >= self.bound for e in self.estimates)


def check_collision(alg, family, bound: float, trials: int = 100_000, seed=0) -> CollisionCheck:
    """Post-verification: independent-run collision of ``alg`` on each distribution."""
    estimates, hw = [], 0.0
    for i, dist in enumerate(family):
        rep = estimate_replicability(alg, dist, trials, shared=False, seed=(seed, i))
        estimates.append(rep.estimate)
        hw = rep.ci_halfwidth
    return CollisionCheck(tuple(estimates), hw, bound)


# ---------------------------------------------------------------- replicable -> stable


def majority_blocks(gamma: float, tau: float) -> int:
    """ceil(ln(2/tau) / (2 gamma^2)) blocks."""
    return math.ceil(math.log(2 / tau) / (2 * gamma**2))


def rep_to_glob(
    alg: MeteredAlgorithm,
    gamma: float,
    tau: float,
    family: Sequence[FiniteDistribution] = (),
    check_trials: int = 20_000,
    seed=0,
) -> MeteredAlgorithm:
    """Plurality of ``alg`` over independent blocks that all read the same tape.

    With a distribution family the input's shared-tape replicability is first
    required to exceed 1/2 + gamma.
    """
    for i, dist in enumerate(family):
        rep = estimate_replicability(alg, dist, check_trials, shared=True, seed=(seed, 11, i))
        if rep.estimate <= 0.5 + gamma:
            raise PreconditionError(
                f"measured replicability {rep.estimate:.4f} is not above 1/2 + gamma = {0.5 + gamma:.4f}",
                measured=rep.estimate,
            )
    blocks = majority_blocks(gamma, tau)
    n, ell = alg.sample_size, alg.bit_budget

    def fn(s: Sample, tape: BitTape) -> int:
        bits = tape.read_bits(ell)
        outs = [alg(s.block(j, n), BitTape(bits)) for j in range(blocks)]
        return int(plurality(np.array(outs)))

    def simulator(dist, rng, tapes):
        flat = tapes.reshape(-1)
        per_chunk = max(1, ROW_BUDGET // blocks)
        result = np.empty(len(flat), dtype=np.int64)
        for start in range(0, len(flat), per_chunk):
            part = flat[start : start + per_chunk]
            outs = simulate(alg, dist, rng, np.repeat(part[:, None], blocks, axis=1))
            result[start : start + len(part)] = plurality(outs, axis=1)
        return result.reshape(tapes.shape)

    return MeteredAlgorithm(
        fn,
        blocks * n,
        ell,
        f"rep2glob({alg.name})",
        simulator=simulator,
        meta={"blocks": blocks, "gamma": gamma, "tau": tau, "inner": alg},
    )


# ---------------------------------------------------------------- amplification


def good_tape_fraction(alg: MeteredAlgorithm, dist: FiniteDistribution, weight: float) -> float:
    """Fraction of tapes whose per-tape output law has an element of mass >= weight."""
    j = alg.joint_law(dist)
    if j is None:
        raise UnknownDistributionError("need the joint law across tapes")
    good = 0
    for r in range(j.n_tapes):
        law = j.per_tape(r)
        if max(float(p) for p in law.probs) >= weight:
            good += 1
    return good / j.n_tapes


@dataclass(frozen=True)
class AmplificationPlan:
    list_size: int  # t
    list_size_eff: int  # t rounded up to a power of two
    heavy_weight: float  # nu / (2 t_eff)
    runs: int  # sub-samples of the derandomization
    params: ThresholdingParams
    list_bits: int


def plan_amplification(nu: float, rho: float, bit_budget: int, gamma_prime: float = 0.05, **threshold_overrides) -> AmplificationPlan:
    t = math.ceil(2 * math.log(2 / rho) / nu)
    t_eff = 1 << bits_for(t)
    hh = nu / (2 * t_eff)
    params = ThresholdingParams.default(eta=hh, rho=rho / 2, **threshold_overrides)
    return AmplificationPlan(t, t_eff, hh, derandomization_runs(hh, gamma_prime), params, t_eff * bit_budget)


def list_member(alg: MeteredAlgorithm, tapes: Sequence[int]) -> MeteredAlgorithm:
    """Runs ``alg`` with a uniformly chosen tape from a fixed list."""
    tapes = tuple(int(r) for r in tapes)
    b = bits_for(len(tapes))
    if len(tapes) != 1 << b:
        raise ValueError("list length must be a power of two")
    ell = alg.bit_budget

    def fn(s: Sample, tape: BitTape) -> int:
        return alg(s, BitTape.from_int(tapes[tape.read_int(b)], ell))

    def joint(dist):
        j = alg.joint_law(dist)
        if j is None:
            raise UnknownDistributionError("inner algorithm has no joint law")
        return j.columns(tapes)

    return MeteredAlgorithm(fn, alg.sample_size, b, f"member({alg.name})", joint=joint)


def amplify_replicability(
    alg: MeteredAlgorithm,
    nu: float,
    rho: float,
    gamma_prime: float = 0.05,
    selection: str = "order",
    family: Sequence[FiniteDistribution] = (),
    check_trials: int = 20_000,
    seed=0,
    exact_limit: int = 2_000_000,
) -> MeteredAlgorithm:
    """Boost a (1 - nu)-replicable algorithm to (1 - rho)-replicability.

    The tape first names ``t_eff`` tapes of ``alg``. The algorithm that runs
    ``alg`` on a uniform member of that list is derandomized at heavy-hitter
    weight nu/(2 t_eff), and the result is thresholded at target rho/2 with the
    remaining tape bits.
    """
    for i, dist in enumerate(family):
        rep = estimate_replicability(alg, dist, check_trials, shared=True, seed=(seed, 13, i))
        if rep.estimate + rep.ci_halfwidth < 1 - nu:
            raise PreconditionError(
                f"measured replicability {rep.estimate:.4f} is below 1 - nu = {1 - nu:.4f}",
                measured=rep.estimate,
            )
    plan = plan_amplification(nu, rho, alg.bit_budget, gamma_prime)
    ell, t_eff, m, params = alg.bit_budget, plan.list_size_eff, plan.runs, plan.params
    if plan.list_bits + params.bits > 62:
        raise ValueError("amplified tape exceeds 62 bits")
    cutoffs = params.thresholds() * params.N
    n = alg.sample_size
    law_cache: dict = {}

    def fn(s: Sample, tape: BitTape) -> int:
        tapes = [tape.read_int(ell) for _ in range(t_eff)]
        inner = derandomize_hh(list_member(alg, tapes), plan.heavy_weight, runs=m)
        final = glob_to_rep(inner, params, selection)
        return final(s, BitTape(tape.read_bits(params.bits)))

    def law_for(dist, hist: tuple) -> FiniteDistribution:
        j = alg.joint_law(dist)
        if j is None:
            raise UnknownDistributionError("inner algorithm has no joint law")
        listed = j.columns([r for r, c in enumerate(hist) for _ in range(c)])
        # the pooled law only depends on how often each cell yields each output
        outputs, per_cell = _cell_output_counts(listed)
        key = (dist, tuple(outputs.tolist()), per_cell.tobytes(), listed.prob_array().tobytes())
        if key not in law_cache:
            law_cache[key] = pooled_plurality_law(listed, m, exact_limit)
        return law_cache[key]

    def simulator(dist, rng, tape_values):
        flat = tape_values.reshape(-1).astype(np.int64)
        index = flat & (params.T_eff - 1)
        listed = flat >> params.bits
        mask = (1 << ell) - 1
        members = np.stack(
            [(listed >> (ell * (t_eff - 1 - k))) & mask for k in range(t_eff)], axis=1
        )
        hists = np.stack([(members == r).sum(axis=1) for r in range(1 << ell)], axis=1)
        keys, inverse = np.unique(hists, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        out = np.empty(len(flat), dtype=np.int64)
        for g, key in enumerate(keys):
            rows = np.flatnonzero(inverse == g)
            law = law_for(dist, tuple(int(c) for c in key))
            p = law.as_array()
            counts = rng.multinomial(params.N, p / p.sum(), size=len(rows))
            outputs = np.array(law.support, dtype=np.int64)
            out[rows] = select_threshold(counts, outputs, cutoffs[index[rows]], selection)
        return out.reshape(tape_values.shape)

    return MeteredAlgorithm(
        fn,
        params.N * m * n,
        plan.list_bits + params.bits,
        f"amplified({alg.name})",
        simulator=simulator,
        meta={"plan": plan, "inner": alg},
    )
