"""Built-in acceptance studies, each returning report rows with pass/fail verdicts.

Every study is a pure function of its seed: all randomness is derived from it.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction
from typing import Callable

import numpy as np

from .core import Joint, MeteredAlgorithm, Sample, make_oracle_algorithm, make_tape_oracle, merge_profiles
from .distribution import FiniteDistribution
from .dp import DpPipelineParams, dp_to_stab, stab_to_dp
from .errors import PreconditionError
from .pac import (
    HypothesisClass,
    agnostic_reduce,
    agnostic_replicable_learner,
    errors_on,
    labeled_distribution,
    pac_budget_formula,
    pac_task,
    sauer_bound,
)
from .rep import ThresholdingParams, amplify_replicability, check_collision, derandomize_hh, glob_to_rep, threshold_analysis
from .reporting import ReportRow
from .tape import bits_for, compress_distribution
from .verify import LawCache, audit_dp_exact, estimate_confidence, estimate_replicability, find_heavy_hitters, neighbors

STUDIES: dict[str, Callable[..., list]] = {}

DATA = FiniteDistribution.point(0)  # oracle tasks ignore the data values


def study(name: str):
    def register(fn):
        STUDIES[name] = fn
        return fn

    return register


def _three_sigma_above(p_hat: float, trials: int, level: float) -> bool:
    sd = math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / trials)
    return p_hat - 3 * sd > level


def planted_law(eta: Fraction) -> FiniteDistribution:
    """Output 1 has mass eta; output 0 (first in order) and the rest have eta/2 each."""
    half = eta / 2
    rest = int((1 - eta - half) / half)
    pairs = [(0, half), (1, eta)] + [(2 + i, half) for i in range(rest)]
    return FiniteDistribution.from_pairs(pairs)


@study("sandwich")
def sandwich(seed: int, trials: int = 100_000, etas=("1/2", "1/4", "1/8"), rho: float = 0.49) -> list:
    rows = []
    for i, e in enumerate(etas):
        eta = Fraction(e)
        c_glob = bits_for(int(1 / eta))
        oracle = make_oracle_algorithm({DATA: planted_law(eta)})
        alg = glob_to_rep(oracle, ThresholdingParams.default(eta=float(eta), rho=rho))
        rep = estimate_replicability(alg, DATA, trials, seed=(seed, i))
        grid = {"eta": e}
        ok = _three_sigma_above(rep.estimate, trials, 0.5)
        rows.append(ReportRow("replicability", rep.estimate, rep.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, ok, grid=grid))
        rows.append(ReportRow("bits_minus_c_glob", alg.bit_budget - c_glob, None, alg.bit_budget, None, alg.bit_budget <= c_glob + 1, grid=grid))
    return rows


FIGURE_ONE_LAW = ((0, "0.30"), (1, "0.25"), (2, "0.24"), (3, "0.21"))


@study("figure-one")
def figure_one(seed: int, trials: int = 100_000) -> list:
    law = FiniteDistribution.from_pairs((y, Fraction(p)) for y, p in FIGURE_ONE_LAW)
    params = ThresholdingParams.default(eta=0.25, T=7)
    oracle = make_oracle_algorithm({DATA: law})
    rows = []
    for i, rule in enumerate(("order", "min_estimate")):
        alg = glob_to_rep(oracle, params, rule)
        rep = estimate_replicability(alg, DATA, trials, seed=(seed, i))
        analysis = threshold_analysis(law, params, rule)
        grid = {"selection": rule}
        rows.append(ReportRow("replicability", rep.estimate, rep.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, rep.estimate >= 4 / 7 - 0.03, grid=grid))
        rows.append(ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, alg.bit_budget == 3, grid=grid))
        gap = abs(rep.estimate - analysis.predicted)
        rows.append(ReportRow("analysis_gap", gap, rep.ci_halfwidth, alg.bit_budget, None, gap <= rep.ci_halfwidth, f"predicted={analysis.predicted:.6f}", grid=grid))
        rows.append(ReportRow("good_thresholds", analysis.good_count, None, alg.bit_budget, None, None, grid=grid))
    return rows


def straddling_law(params: ThresholdingParams) -> FiniteDistribution:
    """Output 0 sits exactly on the middle threshold; output 1 has mass eta."""
    mid = params.eta - (params.T_eff // 2) * params.gamma
    rest = 1 - params.eta - mid
    return FiniteDistribution.from_pairs([(0, mid), (1, params.eta)] + [(2 + i, rest / 3) for i in range(3)])


@study("rho-budget")
def rho_budget(seed: int, trials: int = 100_000, rhos=("1/4", "1/8", "1/16"), c_glob: int = 2) -> list:
    rows = []
    eta = 2.0**-c_glob
    for i, r in enumerate(rhos):
        rho = float(Fraction(r))
        params = ThresholdingParams.default(eta=eta, rho=rho)
        alg = glob_to_rep(make_oracle_algorithm({DATA: straddling_law(params)}), params)
        rep = estimate_replicability(alg, DATA, trials, seed=(seed, i))
        expected = math.ceil(c_glob + math.log2(1 / rho))
        grid = {"rho": r}
        rows.append(ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, alg.bit_budget == expected, f"expected={expected}", grid=grid))
        rows.append(ReportRow("replicability", rep.estimate, rep.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, rep.estimate >= 1 - rho - 0.03, grid=grid))
    return rows


def heavy_hitter_oracle() -> MeteredAlgorithm:
    """Two-bit oracle whose output 0 has marginal mass 0.3."""
    f = Fraction
    per_tape = [
        FiniteDistribution.from_pairs([(0, f(3, 5)), (1, f(2, 5))]),
        FiniteDistribution.from_pairs([(0, f(3, 5)), (2, f(2, 5))]),
        FiniteDistribution.from_pairs([(1, f(1, 2)), (2, f(1, 2))]),
        FiniteDistribution.point(3),
    ]
    return make_tape_oracle({DATA: per_tape}, 2)


@study("derandomization")
def derandomization(seed: int, trials: int = 100_000, eta: float = 0.3) -> list:
    base = heavy_hitter_oracle()
    alg = derandomize_hh(base, eta)
    check = check_collision(alg, [DATA], eta - 0.05, trials, seed=seed)
    est = check.estimates[0]
    return [
        ReportRow("input_bits", base.bit_budget, None, base.bit_budget, None, None),
        ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, alg.bit_budget == 0),
        ReportRow("collision", est, check.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, est >= eta - 0.05),
    ]


@study("compression")
def compression(seed: int, count: int = 200, etas=("1/4", "1/16"), max_support: int = 16) -> list:
    rnd = random.Random(seed)
    rows = []
    for e in etas:
        eta = Fraction(e)
        ok_tv = ok_supp = 0
        worst = Fraction(0)
        for _ in range(count):
            size = rnd.randint(2, max_support)
            base = FiniteDistribution.from_weights({y: rnd.randint(1, 1000) for y in range(size)})
            k = bits_for(size) + bits_for(int(1 / eta))
            sampler = compress_distribution(base, k)
            tv = sampler.tv
            worst = max(worst, tv)
            ok_tv += tv <= eta
            ok_supp += set(sampler.law.positive_support()) <= set(base.positive_support())
        grid = {"eta": e}
        rows.append(ReportRow("tv_within_eta_fraction", ok_tv / count, None, None, None, ok_tv == count, f"worst_tv={worst}", grid=grid))
        rows.append(ReportRow("subset_support_fraction", ok_supp / count, None, None, None, ok_supp == count, grid=grid))
    return rows


def identity_algorithm() -> MeteredAlgorithm:
    def fn(s: Sample, tape) -> int:
        return int(s.points[0])

    return MeteredAlgorithm(fn, 1, 0, "identity", joint=lambda dist: Joint.from_law(dist))


@study("dp-pipeline")
def dp_pipeline(seed: int, epsilon: float = 1.0, delta: float = 0.05, users: int = 3, gap_constants=(4.0, 4.5)) -> list:
    rows = []
    for c in gap_constants:
        params = DpPipelineParams(epsilon, delta, eta=0.5, beta=0.05, users=users, list_runs=3, dummy=0, c=c)
        alg = stab_to_dp(identity_algorithm(), params)
        n = alg.sample_size
        cache = LawCache(alg)
        pairs = neighbors((0, 1), n, user_level=True, users=users)
        law_on = alg.meta["law_on_sample"]
        for s, _ in pairs:
            if s not in cache._laws:
                cache._laws[s] = law_on(Sample.from_points(s))
        audit = audit_dp_exact(alg, pairs, epsilon, user_level=True, laws=cache)
        support = max(len(law.positive_support()) for law in cache._laws.values())
        informational = c != gap_constants[0]
        grid = {"c": c}
        witness = audit.witness_json()
        note = f"pairs={audit.pairs_audited};witness={witness['S']}->{witness['S_prime']}"
        rows.append(ReportRow("delta_max", audit.delta_max, None, alg.bit_budget, None, None if informational else audit.passes(delta), note, grid=grid))
        rows.append(ReportRow("max_support", support, None, alg.bit_budget, None, None if informational else support <= params.T_users + 1, grid=grid))
        bound = params.budget_formula() + 8
        rows.append(ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, None if informational else alg.bit_budget <= bound, f"bound={bound:.4f}", grid=grid))
    return rows


def xor_mechanism() -> MeteredAlgorithm:
    """Two-bit mechanism: tape XOR (2 x0 + x1). Every input gives the uniform law on 4 outputs."""

    def fn(s: Sample, tape) -> int:
        return tape.read_int(2) ^ (2 * int(s.points[0]) + int(s.points[1]))

    def joint(dist):
        p1 = dist.prob(1)
        pz = [(1 - p1) * (1 - p1), (1 - p1) * p1, p1 * (1 - p1), p1 * p1]
        rows = np.array([[r ^ z for r in range(4)] for z in range(4)], dtype=np.int64)
        keep = [z for z in range(4) if pz[z] > 0]
        return merge_profiles(rows[keep], [pz[z] for z in keep])

    return MeteredAlgorithm(fn, 2, 2, "xor-mechanism", joint=joint)


@study("dp-to-stability")
def dp_to_stability(seed: int, trials: int = 100_000, users: int = 2) -> list:
    mech = xor_mechanism()
    eps = 0.1
    delta = 1 / 16
    family = [FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])]
    alg, reports = dp_to_stab(mech, eps, delta, users, family, seed=seed)
    bound = 1 / (2**3 * math.sqrt(math.e))
    check = check_collision(alg, family, bound - 0.05, trials, seed=(seed, 1))
    est = check.estimates[0]
    rows = [
        ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, alg.bit_budget == 0),
        ReportRow("support_mass", reports[0].mass, None, mech.bit_budget, None, None, f"target={reports[0].target:.6f}"),
        ReportRow("collision", est, check.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, est >= bound - 0.05, f"bound={bound - 0.05:.6f}"),
    ]
    try:
        dp_to_stab(mech, 0.2, delta, users, family, seed=seed)
        gated = False
    except PreconditionError:
        gated = True
    rows.append(ReportRow("precondition_gate", float(gated), None, None, None, gated, "epsilon=0.2 above cap"))
    return rows


@study("agnostic-pac")
def agnostic_pac(seed: int, trials: int = 10_000, domain: int = 16, noise: str = "0.1", alpha: float = 0.15, beta: float = 0.05, rho: float = 0.4, pilot_runs: int = 500, rep_trials: int = 20_000) -> list:
    cls = HypothesisClass.thresholds(domain)
    dist = labeled_distribution(cls.matrix[domain // 2].astype(int), Fraction(noise))
    task = pac_task(cls, alpha)
    reduce = agnostic_reduce(cls, alpha, beta)
    conf = estimate_confidence(reduce, task, dist, trials, seed=(seed, 0))
    rows = [
        ReportRow("failure_rate", conf.failure_rate, conf.ci_halfwidth, reduce.bit_budget, trials * reduce.sample_size, conf.failure_rate <= beta + conf.ci_halfwidth),
    ]
    batch = reduce.meta["batch"](dist, np.random.default_rng([seed, 1]), 2000)
    pruned = int(batch["keep"].sum(axis=1).max())
    p = reduce.meta["params"]
    rows.append(ReportRow("max_pruned", pruned, None, reduce.bit_budget, None, pruned <= p.pruned_bound, f"bound={p.pruned_bound}"))
    # the Sauer check is a hard assertion inside every vectorised batch
    rows.append(ReportRow("sauer_violations", 0, None, None, None, True))
    eta_star = find_heavy_hitters(reduce, dist, 0.15, seed=(seed, 2))[0][1]
    hh = 0.75 * eta_star
    rows.append(ReportRow("heavy_hitter_weight", eta_star, None, reduce.bit_budget, None, eta_star >= p.nu / (2 * p.pruned_bound), f"used={hh:.6f}"))
    learner = agnostic_replicable_learner(cls, alpha, beta, rho, hh_weight=hh, family=[dist], pilot_runs=pilot_runs, seed=seed)
    rep = estimate_replicability(learner, dist, rep_trials, seed=(seed, 3))
    formula = learner.meta["budget_formula"]
    rows.append(ReportRow("replicability", rep.estimate, rep.ci_halfwidth, learner.bit_budget, rep_trials * learner.sample_size, rep.estimate >= 0.55))
    rows.append(ReportRow("bits", learner.bit_budget, None, learner.bit_budget, None, learner.bit_budget <= formula, f"formula={formula}"))
    errs = errors_on(cls, dist)
    best = int(np.argmin(errs))
    rows.append(ReportRow("opt_error", float(errs[best]), None, None, None, None))
    rows.extend(_alpha_slope(cls, beta, rho, cls.vc_dim))
    return rows


def _alpha_slope(cls: HypothesisClass, beta: float, rho: float, vc: int, alphas=(0.2, 0.1, 0.05)) -> list:
    rows, bits = [], []
    for a in alphas:
        learner = agnostic_replicable_learner(cls, a, beta, rho)
        bits.append(learner.bit_budget)
        p = learner.meta["reduce"].meta["params"]
        uncapped = math.ceil(2 / p.nu * sauer_bound(p.unlabeled_size, vc))
        grid = {"alpha": a}
        rows.append(ReportRow("sweep_bits", learner.bit_budget, None, learner.bit_budget, None, None, grid=grid))
        rows.append(ReportRow("sweep_formula_without_class_cap", pac_budget_formula(uncapped, p.nu, rho), None, None, None, None, grid=grid))
    x = np.log2(1 / np.array(alphas))
    slope = round(float(np.polyfit(x, np.array(bits, dtype=float), 1)[0]), 9) + 0.0
    rows.append(ReportRow("bits_slope_per_log2_inv_alpha", slope, None, None, None, slope <= vc + 1, f"vc={vc}"))
    return rows


def amplification_oracle() -> MeteredAlgorithm:
    """Three-bit oracle: two deterministic tapes, six fair coins over outputs {0, 1}."""
    half = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])
    per_tape = [FiniteDistribution.point(0), FiniteDistribution.point(1)] + [half] * 6
    return make_tape_oracle({DATA: per_tape}, 3)


@study("amplification")
def amplification(seed: int, trials: int = 20_000, nu: float = 0.4, rho: float = 0.1) -> list:
    base = amplification_oracle()
    before = estimate_replicability(base, DATA, trials, seed=(seed, 0))
    alg = amplify_replicability(base, nu, rho, family=[DATA], seed=seed)
    rep = estimate_replicability(alg, DATA, trials, seed=(seed, 1))
    return [
        ReportRow("input_replicability", before.estimate, before.ci_halfwidth, base.bit_budget, trials, None),
        ReportRow("replicability", rep.estimate, rep.ci_halfwidth, alg.bit_budget, trials * alg.sample_size, rep.estimate >= 1 - rho - rep.ci_halfwidth),
        ReportRow("bits", alg.bit_budget, None, alg.bit_budget, None, None, f"plan={alg.meta['plan'].list_size_eff}x{base.bit_budget}"),
    ]


ACCEPTANCE = (
    (1, "sandwich"),
    (2, "figure-one"),
    (3, "rho-budget"),
    (4, "derandomization"),
    (5, "compression"),
    (6, "dp-pipeline"),
    (7, "dp-to-stability"),
    (8, "agnostic-pac"),
    (9, "amplification"),
)
