import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from stability_lab.core import BOTTOM, MeteredAlgorithm, make_oracle_algorithm, make_tape_oracle, planted_task, run_ground_truth, sample, simulate
from stability_lab.distribution import FiniteDistribution
from stability_lab.errors import PreconditionError
from stability_lab.rep import (
    ThresholdingParams,
    amplify_replicability,
    check_collision,
    default_estimation_runs,
    derandomization_runs,
    derandomize_hh,
    glob_to_rep,
    good_tape_fraction,
    majority_blocks,
    plan_amplification,
    rep_to_glob,
    select_threshold,
    threshold_analysis,
)
from stability_lab.verify import estimate_confidence, estimate_replicability

from oracles import collision, plurality_of_runs

D = FiniteDistribution.point(0)
HALF = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])
FIG = FiniteDistribution.from_pairs([(0, Fraction(30, 100)), (1, Fraction(25, 100)), (2, Fraction(24, 100)), (3, Fraction(21, 100))])


def oracle(law):
    return make_oracle_algorithm({D: law})


def test_figure_one_parameters():
    p = ThresholdingParams.default(eta=0.25, T=7)
    assert (p.T_eff, p.bits) == (8, 3)
    assert p.rho == pytest.approx(3 / 7)
    assert p.gamma == pytest.approx(0.25 * (3 / 7) / 32)
    assert p.tau == pytest.approx(p.gamma / 10)
    assert p.N == 4 * math.ceil(9 / (2 * p.gamma**2) * math.log(2 / (0.05 * 0.01)))
    assert np.all(p.thresholds() > 0)


@pytest.mark.parametrize("rho,bits", [(0.25, 4), (0.125, 5), (0.0625, 6)])
def test_bits_follow_the_rho_law(rho, bits):
    assert ThresholdingParams.default(c_glob=2, rho=rho).bits == bits == math.ceil(2 + math.log2(1 / rho))


def test_parameters_reject_bad_orderings():
    with pytest.raises(ValueError):
        ThresholdingParams(T=4, eta=0.5, gamma=0.01, tau=0.02, N=10, rho=0.25)


def test_select_threshold_rules():
    counts = np.array([[30, 50, 20]])
    outputs = np.array([0, 1, 2])
    assert select_threshold(counts, outputs, np.array([25.0]), "order")[0] == 0
    assert select_threshold(counts, outputs, np.array([25.0]), "min_estimate")[0] == 0
    assert select_threshold(counts, outputs, np.array([40.0]), "order")[0] == 1
    assert select_threshold(counts, outputs, np.array([19.0]), "min_estimate")[0] == 2
    assert select_threshold(counts, outputs, np.array([60.0]), "order")[0] == BOTTOM


def test_point_mass_is_perfectly_replicable():
    alg = glob_to_rep(oracle(FiniteDistribution.point(5)), ThresholdingParams.default(eta=0.5, T=3))
    assert estimate_replicability(alg, D, 20_000, seed=0).estimate == 1


def test_even_coin_replicates_at_three_quarters():
    params = ThresholdingParams.default(eta=0.5, rho=0.25)
    assert (params.T, params.bits) == (4, 2)
    alg = glob_to_rep(oracle(HALF), params, "order")
    rep = estimate_replicability(alg, D, 50_000, seed=1)
    assert rep.estimate >= 0.75 - params.tau_prime
    # at most 1/eta - 1 = 1 threshold lies near a true mass
    assert threshold_analysis(HALF, params, "order").good_count >= params.T_eff - 1


def test_smallest_estimate_rule_splits_exact_ties():
    # both outputs clear every threshold and their estimates tie in law,
    # so picking the smaller estimate is a fair coin between them
    params = ThresholdingParams.default(eta=0.5, rho=0.25)
    alg = glob_to_rep(oracle(HALF), params, "min_estimate")
    rep = estimate_replicability(alg, D, 50_000, seed=1)
    assert abs(rep.estimate - 0.5) <= rep.ci_halfwidth
    assert threshold_analysis(HALF, params, "min_estimate").predicted == pytest.approx(0.5, abs=1e-6)


def test_figure_one_analysis_matches_monte_carlo():
    params = ThresholdingParams.default(eta=0.25, T=7)
    alg = glob_to_rep(oracle(FIG), params, "min_estimate")
    rep = estimate_replicability(alg, D, 100_000, seed=2)
    analysis = threshold_analysis(FIG, params, "min_estimate")
    assert analysis.good_count >= 4
    assert abs(rep.estimate - analysis.predicted) <= rep.ci_halfwidth
    assert rep.estimate >= 4 / 7 - 0.03


@given(st.lists(st.integers(1, 30), min_size=1, max_size=6, unique=True), st.sampled_from(["order", "min_estimate"]))
def test_good_thresholds_give_deterministic_outputs(ws, rule):
    # distinct masses: the smallest-estimate rule has no exact ties to split
    law = FiniteDistribution.from_weights(ws)
    eta = float(max(law.probs))
    params = ThresholdingParams.default(eta=eta, rho=0.25)
    masses = sorted(float(p) for p in law.probs)
    assume(all(b - a >= params.gamma for a, b in zip(masses, masses[1:])))
    analysis = threshold_analysis(law, params, rule)
    for good, coll in zip(analysis.good, analysis.collisions):
        if good:
            assert coll >= 1 - 1e-6


def test_ground_truth_matches_simulation_for_small_estimation():
    params = ThresholdingParams(T=4, eta=0.5, gamma=0.05, tau=0.005, N=400, rho=0.25)
    alg = glob_to_rep(oracle(HALF), params, "order")
    tapes = np.random.default_rng(0).integers(0, 4, 400)
    slow = run_ground_truth(alg, D, np.random.default_rng(1), tapes)
    fast = simulate(alg, D, 2, tapes)
    for y in (0, 1, BOTTOM):
        assert abs(np.mean(slow == y) - np.mean(fast == y)) < 0.12


def test_confidence_precondition_is_checked():
    law = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])
    task = planted_task({D: FiniteDistribution.point(0)}, output_domain=[0, 1])
    with pytest.raises(PreconditionError) as info:
        glob_to_rep(oracle(law), ThresholdingParams.default(eta=0.5, rho=0.25), task=task, family=[D], check_trials=5000)
    assert info.value.measured > 0.5 / 8


def test_correct_heavy_hitters_keep_the_output_correct():
    task = planted_task({D: FIG})
    alg = glob_to_rep(oracle(FIG), ThresholdingParams.default(eta=0.25, T=7), task=task, family=[D])
    assert estimate_confidence(alg, task, D, 20_000, seed=3).failure_rate == 0


def test_derandomizing_a_point_mass_changes_nothing():
    alg = derandomize_hh(oracle(FiniteDistribution.point(7)), 0.9)
    assert alg.bit_budget == 0
    assert check_collision(alg, [D], 1.0, 10_000).estimates == (1.0,)


def test_derandomized_coin_law_matches_plurality_oracle():
    law = FiniteDistribution.from_pairs([(0, Fraction(3, 5)), (1, Fraction(2, 5))])
    m = derandomization_runs(0.5, 0.05)
    assert m == 24
    alg = derandomize_hh(oracle(law), 0.5)
    got = alg.law(D)
    # frozen from oracles.plurality_of_runs([0.6, 0.4], 24)
    assert float(got.prob(0)) == pytest.approx(0.8857349176807559, abs=1e-9)
    assert float(got.prob(0)) == pytest.approx(plurality_of_runs([0.6, 0.4], 24)[0], abs=1e-9)
    assert float(got.prob(0)) >= 1 - 2 * 0.05 / 0.5
    assert float(collision(dict(got.items()))) >= (1 - 2 * 0.05 / 0.5) ** 2


def two_bit_oracle():
    f = Fraction
    per_tape = [
        FiniteDistribution.from_pairs([(0, f(3, 5)), (1, f(2, 5))]),
        FiniteDistribution.from_pairs([(0, f(3, 5)), (2, f(2, 5))]),
        FiniteDistribution.from_pairs([(1, f(1, 2)), (2, f(1, 2))]),
        FiniteDistribution.point(3),
    ]
    return make_tape_oracle({D: per_tape}, 2)


def test_derandomized_ground_truth_matches_exact_law():
    alg = derandomize_hh(two_bit_oracle(), 0.3, runs=5)
    exact = alg.law(D)
    outs = run_ground_truth(alg, D, np.random.default_rng(0), np.zeros(3000, dtype=np.int64))
    for y, p in exact.items():
        sd = math.sqrt(float(p) * (1 - float(p)) / len(outs))
        assert abs(np.mean(outs == y) - float(p)) <= 4 * sd + 1e-9


def test_derandomized_output_is_a_function_of_the_sample():
    alg = derandomize_hh(two_bit_oracle(), 0.3, runs=5)
    s = sample(D, alg.sample_size, 11)
    assert alg(s) == alg(s)


def test_two_bit_heavy_hitter_derandomizes():
    alg = derandomize_hh(two_bit_oracle(), 0.3)
    assert check_collision(alg, [D], 0.25, 100_000, seed=4).passed


def per_tape_oracle(laws, bits):
    return make_tape_oracle({D: laws}, bits)


def test_majority_blocks_formula():
    assert majority_blocks(0.1, 0.05) == math.ceil(math.log(40) / 0.02)


def test_rep_to_glob_on_a_constant_algorithm():
    alg = rep_to_glob(oracle(FiniteDistribution.point(1)), 0.1, 0.05, [D])
    assert check_collision(alg, [D], 0.95, 5000).estimates == (1.0,)


def test_rep_to_glob_with_two_canonical_tapes():
    f = Fraction
    laws = [FiniteDistribution.from_pairs([(0, f(9, 10)), (1, f(1, 10))]), FiniteDistribution.from_pairs([(0, f(1, 10)), (1, f(9, 10))])]
    tau = 0.05
    alg = rep_to_glob(per_tape_oracle(laws, 1), 0.1, tau, [D])
    check = check_collision(alg, [D], 0.5 * (1 - tau), 50_000, seed=5)
    assert check.passed


def test_rep_to_glob_with_one_good_tape():
    f = Fraction
    laws = [FiniteDistribution.from_pairs([(0, f(4, 5)), (1, f(1, 5))])] + [FiniteDistribution.point(y) for y in (1, 2, 3)]
    tau = 0.05
    alg = rep_to_glob(per_tape_oracle(laws, 2), 0.1, tau, [D])
    assert check_collision(alg, [D], 0.25 * (1 - tau), 50_000, seed=6).passed


def test_rep_to_glob_rejects_unreplicable_input():
    with pytest.raises(PreconditionError):
        rep_to_glob(oracle(HALF), 0.1, 0.05, [D])


def test_amplification_plan():
    plan = plan_amplification(0.4, 0.1, 3)
    assert (plan.list_size, plan.list_size_eff) == (15, 16)
    assert plan.heavy_weight == pytest.approx(0.4 / 32)
    assert plan.list_bits == 48


def test_amplifying_a_replicable_algorithm_keeps_it_replicable():
    alg = amplify_replicability(oracle(FiniteDistribution.point(2)), 0.4, 0.1)
    assert estimate_replicability(alg, D, 5000, seed=0).estimate == 1


def test_many_tapes_carry_a_heavy_hitter():
    half = HALF
    alg = per_tape_oracle([FiniteDistribution.point(0), FiniteDistribution.point(1)] + [half] * 6, 3)
    nu = 0.4
    assert good_tape_fraction(alg, D, nu / 2) >= nu / 2
