import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stability_lab.core import MeteredAlgorithm, hoeffding_halfwidth, make_oracle_algorithm, planted_task
from stability_lab.distribution import FiniteDistribution
from stability_lab.errors import CapExceededError
from stability_lab.verify import (
    audit_dp_exact,
    estimate_confidence,
    estimate_global_stability,
    estimate_replicability,
    find_heavy_hitters,
    heavy_hitter_trials,
    neighbors,
)

from oracles import collision, item_neighbor_count, randomized_response

D = FiniteDistribution.point(0)
FIG = FiniteDistribution.from_pairs([(0, 0.30), (1, 0.25), (2, 0.24), (3, 0.21)])


def oracle(law):
    return make_oracle_algorithm({D: law})


def test_constant_algorithm_replicates_exactly():
    rep = estimate_replicability(oracle(FiniteDistribution.point(3)), D, 5000, seed=1)
    assert rep.estimate == 1


def test_half_width_formula():
    rep = estimate_replicability(oracle(FIG), D, 1234, seed=0)
    assert rep.ci_halfwidth == pytest.approx(math.sqrt(math.log(2000) / (2 * 1234)), rel=1e-12)


@pytest.mark.parametrize("law", [FiniteDistribution.uniform([0, 1]), FIG])
def test_independent_collision_matches_sum_of_squares(law):
    trials = 200_000
    expected = float(collision(dict(law.items())))
    rep = estimate_global_stability(oracle(law), D, trials, seed=2)
    sd = math.sqrt(expected * (1 - expected) / trials)
    assert abs(rep.estimate - expected) <= 3 * sd
    assert 0 <= rep.estimate <= 1


def test_estimates_are_deterministic_given_seed():
    a = estimate_replicability(oracle(FIG), D, 10_000, seed=5)
    b = estimate_replicability(oracle(FIG), D, 10_000, seed=5)
    assert a == b


def test_point_mass_has_one_heavy_hitter():
    hits = find_heavy_hitters(oracle(FiniteDistribution.point(2)), D, 0.5, seed=0)
    assert [y for y, _ in hits] == [2]
    assert hits[0][1] == 1


def test_figure_law_has_four_heavy_hitters():
    hits = find_heavy_hitters(oracle(FIG), D, 0.25, seed=0)
    assert sorted(y for y, _ in hits) == [0, 1, 2, 3]


def test_uniform_over_hundred_has_no_heavy_hitter():
    assert find_heavy_hitters(oracle(FiniteDistribution.uniform(range(100))), D, 0.25, seed=0) == []


def test_heavy_hitter_trial_floor_is_enforced():
    assert heavy_hitter_trials(0.5) == math.ceil(8 * math.log(2000) / 0.25)
    with pytest.raises(ValueError):
        find_heavy_hitters(oracle(FIG), D, 0.5, trials=10)


def test_confidence_of_always_correct_oracle():
    law = FiniteDistribution.from_pairs([(0, 0.5), (1, 0.5)])
    task = planted_task({D: law})
    assert estimate_confidence(oracle(law), task, D, 5000, seed=0).failure_rate == 0


def test_confidence_with_a_rejected_output():
    law = FiniteDistribution.from_pairs([(0, 0.9), (1, 0.1)])
    task = planted_task({D: FiniteDistribution.point(0)}, output_domain=[0, 1])
    rep = estimate_confidence(oracle(law), task, D, 100_000, seed=0)
    assert abs(rep.failure_rate - 0.1) <= rep.ci_halfwidth


def test_confidence_with_empty_accepted_set():
    task = planted_task({}, output_domain=[0])
    rep = estimate_confidence(oracle(FiniteDistribution.point(0)), task, D, 100, seed=0)
    assert rep.failure_rate == 1


def bit_mechanism(flip_mass_bits: int, flip_cells: int):
    """Output the data bit, flipped on ``flip_cells`` of the 2^bits tape values."""

    def fn(s, t):
        r = t.read_int(flip_mass_bits)
        return int(s.points[0]) ^ int(r < flip_cells)

    return MeteredAlgorithm(fn, 1, flip_mass_bits)


def test_audit_of_identical_laws_is_zero():
    alg = MeteredAlgorithm(lambda s, t: t.read_int(2), 1, 2)
    audit = audit_dp_exact(alg, neighbors([0, 1], 1), 0.0)
    assert audit.delta_max == 0


def test_audit_of_disjoint_laws_is_one():
    alg = MeteredAlgorithm(lambda s, t: int(s.points[0]), 1, 0)
    audit = audit_dp_exact(alg, neighbors([0, 1], 1), 0.0)
    assert audit.delta_max == 1
    assert audit.witness in {((0,), (1,)), ((1,), (0,))}


def test_randomized_response_audit():
    # flip probability 1/4 equals 1/(1+e^eps) at eps = ln 3
    eps = math.log(3)
    p, q = randomized_response(eps)
    assert p[1] == pytest.approx(0.25)
    alg = bit_mechanism(2, 1)
    pairs = neighbors([0, 1], 1)
    assert audit_dp_exact(alg, pairs, eps).delta_max == pytest.approx(0, abs=1e-12)
    smaller = audit_dp_exact(alg, pairs, 0.5 * eps).delta_max
    assert smaller == pytest.approx(0.75 - math.exp(0.5 * eps) * 0.25)
    assert smaller > 0


@given(st.floats(0, 2), st.floats(0, 2))
def test_audit_is_monotone_in_epsilon(e1, e2):
    lo, hi = sorted((e1, e2))
    alg = bit_mechanism(3, 2)
    pairs = neighbors([0, 1], 1)
    assert audit_dp_exact(alg, pairs, lo).delta_max >= audit_dp_exact(alg, pairs, hi).delta_max


def test_neighbor_counts():
    pairs = neighbors(["a", "b"], 2)
    assert len(pairs) == item_neighbor_count(2, 2) == 8
    assert (("a", "a"), ("a", "b")) in pairs
    singles = neighbors([0, 1, 2], 1)
    assert len(singles) == item_neighbor_count(3, 1)
    assert all(s != t for s, t in singles)


def test_user_level_with_unit_blocks_is_item_level():
    assert sorted(neighbors([0, 1], 2, user_level=True, users=2)) == sorted(neighbors([0, 1], 2))


def test_user_level_pairs_change_one_block():
    pairs = neighbors([0, 1], 6, user_level=True, users=3)
    assert len(pairs) == 2**6 * 3 * 3
    for s, t in pairs:
        changed = {i // 2 for i in range(6) if s[i] != t[i]}
        assert len(changed) == 1


def test_neighbor_cap():
    with pytest.raises(CapExceededError):
        neighbors(range(5), 8, cap=1000)
