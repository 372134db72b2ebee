import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stability_lab.core import MeteredAlgorithm, Joint, Sample, exact_law_over_tapes, majority_algorithm, sign_task
from stability_lab.distribution import FiniteDistribution
from stability_lab.dp import (
    DpPipelineParams,
    SelectionDataset,
    check_perfect_generalization,
    dp_preconditions,
    dp_select,
    dp_to_stab,
    gap_bound,
    selection_bits,
    selection_law,
    selection_mechanism,
    selection_sampler,
    stab_to_dp,
    strong_correctness,
)
from stability_lab.errors import PreconditionError
from stability_lab.rep import check_collision
from stability_lab.tape import enumerate_tapes
from stability_lab.verify import audit_dp_exact, neighbors

from oracles import floor_then_mode, hockey

FAIR = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])


def test_gap_and_bits():
    assert gap_bound(1.0, 0.05) == math.ceil(4 * math.log(20)) == 12
    assert selection_bits(2, 0.05) == 1 + 6


def test_single_element_dataset_selects_it():
    data = SelectionDataset.from_items([3] * 7, 1.0, 0.05)
    assert {dp_select(data, t) for t in enumerate_tapes(selection_bits(1, 0.05))} == {3}


def test_exponential_weights_and_compressed_law():
    data = SelectionDataset.from_counts({0: 10, 1: 1}, 1.0, 0.05)
    assert data.gap == 12
    assert data.candidates() == (0, 1)
    law = selection_law(data)
    assert float(law.prob(0)) / float(law.prob(1)) == pytest.approx(math.exp(9 / 4))
    # frozen from oracles.floor_then_mode([p, 1 - p], 7) with p = 1 / (1 + e^{-9/4})
    compressed = selection_sampler(data).law
    assert dict(compressed.items()) == {0: Fraction(29, 32), 1: Fraction(3, 32)}
    p = 1 / (1 + math.exp(-9 / 4))
    assert [compressed.prob(0), compressed.prob(1)] == floor_then_mode([p, 1 - p], 7)


@given(st.dictionaries(st.integers(0, 5), st.integers(0, 30), min_size=1).filter(lambda d: any(d.values())), st.floats(0.2, 2), st.sampled_from([0.01, 0.05, 0.2]))
def test_every_reachable_output_is_within_the_gap(counts, eps, delta):
    data = SelectionDataset.from_counts(counts, eps, delta)
    sampler = selection_sampler(data)
    top = max(counts.values())
    for y in sampler.law.positive_support():
        assert data.count(y) >= top - data.gap
    assert set(sampler.law.positive_support()) <= set(selection_law(data).positive_support())


def test_selection_over_a_domain_is_private_on_small_datasets():
    universe = (0, 1, 2)
    for n in range(1, 7):
        alg = selection_mechanism(universe, n, 1.0, 0.05)
        audit = audit_dp_exact(alg, neighbors(universe, n), 1.0)
        assert audit.delta_max <= 0.05


def test_selection_over_present_outputs_only_leaks_on_tiny_datasets():
    # an absent output becoming present jumps from weight 0 to a full candidate
    alg = selection_mechanism((0, 1, 2), 2, 1.0, 0.05, over_domain=False)
    assert audit_dp_exact(alg, neighbors((0, 1, 2), 2), 1.0).delta_max > 0.05


def test_pipeline_parameters():
    p = DpPipelineParams(1.0, 0.05, eta=0.25, beta=0.05)
    assert p.C == 2
    assert p.T_users == math.ceil(8 * 4 * math.log(20))
    assert p.dummy_copies == 12
    assert p.runs == math.ceil(2 * math.log(20) / 0.0625)
    assert p.budget_formula() == pytest.approx(2 + 0 + math.log2(20) + math.log2(math.log2(20)))
    assert p.beta_prime() == min(1.0, p.T_users * (2 * 0.05 / 0.25) ** 3)


def constant(y):
    return MeteredAlgorithm(lambda s, t: y, 1, 0, "constant", joint=lambda d: Joint.from_law(FiniteDistribution.point(y)))


def identity():
    return MeteredAlgorithm(lambda s, t: int(s.points[0]), 1, 0, "identity", joint=lambda d: Joint.from_law(d))


def test_many_agreeing_users_outvote_the_dummies():
    params = DpPipelineParams(1.0, 0.05, eta=0.5, beta=0.05, users=30, list_runs=1, dummy=0)
    alg = stab_to_dp(constant(5), params)
    law = exact_law_over_tapes(alg, Sample.from_points([0] * alg.sample_size))
    assert dict(law.items()) == {5: 1}


def three_user_pipeline():
    params = DpPipelineParams(1.0, 0.05, eta=0.5, beta=0.05, users=3, list_runs=3, dummy=0)
    return params, stab_to_dp(identity(), params)


def test_closed_form_law_matches_tape_enumeration_everywhere():
    params, alg = three_user_pipeline()
    law_on = alg.meta["law_on_sample"]
    for bits in enumerate_tapes(alg.sample_size):
        s = Sample.from_points(bits.contents)
        exact = exact_law_over_tapes(alg, s)
        assert dict(law_on(s).items()) == dict(exact.items())
        assert len(exact.positive_support()) <= params.T_users + 1


def test_pipeline_bits_obey_the_budget_formula():
    params, alg = three_user_pipeline()
    assert alg.bit_budget == params.bits <= params.budget_formula() + 8


def test_strong_correctness_of_a_stable_majority():
    params = DpPipelineParams(1.0, 0.05, eta=0.5, beta=0.05, dummy=-1)
    alg = stab_to_dp(majority_algorithm(25), params)
    dist = FiniteDistribution.from_pairs([(0, 0.2), (1, 0.8)])
    rep = strong_correctness(alg, sign_task(), dist, 100, params.beta_prime(), seed=0)
    assert rep.bad_fraction <= rep.bound
    assert rep.max_support <= params.T_users + 1


def test_stab_to_dp_checks_input_confidence():
    params = DpPipelineParams(1.0, 0.05, eta=0.5, beta=0.05, users=3, list_runs=1)
    with pytest.raises(PreconditionError):
        stab_to_dp(majority_algorithm(1), params, sign_task(), [FiniteDistribution.from_pairs([(0, 0.4), (1, 0.6)])], check_trials=5000)


def one_bit_mechanism():
    """Output x XOR tape bit: uniform on {0, 1} for every input, so 0-DP."""

    def fn(s, t):
        return int(s.points[0]) ^ t.read_int(1)

    def joint(d):
        rows = np.array([[0, 1], [1, 0]])
        keep = [x for x in (0, 1) if d.prob(x) > 0]
        from stability_lab.core import merge_profiles

        return merge_profiles(rows[keep], [d.prob(x) for x in keep])

    return MeteredAlgorithm(fn, 1, 1, "one-bit", joint=joint)


def test_dp_to_stab_on_a_constant_is_the_constant():
    alg, reports = dp_to_stab(constant(4), 0.05, 0.01, 4, [FAIR])
    assert alg.bit_budget == 0
    assert check_collision(alg, [FAIR], 1.0, 5000).estimates == (1.0,)


def test_dp_to_stab_finds_a_heavy_hitter_for_a_one_bit_mechanism():
    alg, reports = dp_to_stab(one_bit_mechanism(), 0.05, 0.01, 4, [FAIR])
    rep = reports[0]
    assert rep.mass >= rep.target
    assert rep.heaviest[1] >= 1 / (4 * math.sqrt(math.e))
    check = check_collision(alg, [FAIR], 2.0 ** -(1 + 2), 20_000)
    assert alg.bit_budget == 0 and check.passed


def test_dp_to_stab_gates_on_epsilon():
    cap, dcap = dp_preconditions(1.0, 0.01, 4)
    assert cap == pytest.approx(1 / 8 / math.sqrt(4 * math.log(4)))
    assert dcap == 1 / 32
    with pytest.raises(PreconditionError):
        dp_to_stab(one_bit_mechanism(), 0.5, 0.01, 4, [FAIR])


def test_constant_algorithm_generalizes_perfectly():
    rep = check_perfect_generalization(constant(1), FAIR, 0.1, 0.0, 0.0, 50)
    assert rep.passed and rep.max_divergence == 0


def test_split_deterministic_algorithm_sits_on_the_boundary():
    # each conditional law is a point; the marginal is 50/50
    rep = check_perfect_generalization(identity(), FAIR, 0.5, 0.5, 0.1, 100, seed=1)
    forward = hockey({1: 1.0}, {0: 0.5, 1: 0.5}, 0.5)
    backward = hockey({0: 0.5, 1: 0.5}, {1: 1.0}, 0.5)
    assert forward == pytest.approx(1 - 0.5 * math.exp(0.5))
    assert rep.max_divergence == pytest.approx(max(forward, backward)) == pytest.approx(0.5)
    assert rep.passed


def test_private_mechanism_is_half_perfectly_generalizing():
    rep = check_perfect_generalization(one_bit_mechanism(), FAIR, 0.5, 0.5, 0.5, 100)
    assert rep.passed
