from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stability_lab.distribution import FiniteDistribution, empirical, hockey_stick

from oracles import hockey, total_variation

weights = st.lists(st.integers(1, 50), min_size=1, max_size=8)


def test_exact_probabilities_must_sum_to_one():
    with pytest.raises(ValueError):
        FiniteDistribution((0, 1), (Fraction(1, 2), Fraction(1, 3)))


def test_float_probabilities_tolerate_rounding():
    d = FiniteDistribution.from_pairs([(0, 0.1), (1, 0.2), (2, 0.7)])
    assert not d.is_exact
    assert d.prob(2) == 0.7


def test_from_weights_is_exact_for_integers():
    d = FiniteDistribution.from_weights([1, 2, 1])
    assert d.is_exact
    assert d.prob(1) == Fraction(1, 2)


def test_json_round_trip_keeps_fractions():
    d = FiniteDistribution.from_json([[0, "1/3"], [4, "2/3"]])
    assert d.prob(4) == Fraction(2, 3)
    assert FiniteDistribution.from_json(d.to_json()) == d


def test_mode_breaks_ties_toward_smaller_id():
    d = FiniteDistribution.from_weights({3: 2, 1: 2, 0: 1})
    assert d.mode() == 1


def test_quantile_walks_the_cdf():
    d = FiniteDistribution.from_pairs([(5, Fraction(1, 4)), (7, Fraction(3, 4))])
    assert d.quantile(0.0) == 5
    assert d.quantile(0.2499) == 5
    assert d.quantile(0.25) == 7
    assert d.quantile(0.999) == 7


def test_draw_frequencies_match_law():
    d = FiniteDistribution.from_pairs([(0, 0.3), (1, 0.7)])
    x = d.draw(np.random.default_rng(0), 200_000)
    assert abs(np.mean(x == 1) - 0.7) < 0.005


@given(weights, weights)
def test_tv_matches_reference(a, b):
    p = FiniteDistribution.from_weights(a)
    q = FiniteDistribution.from_weights(b)
    assert p.tv(q) == total_variation(dict(p.items()), dict(q.items()))


@given(weights, weights, st.floats(0, 3))
def test_hockey_stick_matches_reference_and_is_a_probability(a, b, eps):
    p = FiniteDistribution.from_weights(a)
    q = FiniteDistribution.from_weights(b)
    d = hockey_stick(p, q, eps)
    assert 0 <= d <= 1
    assert d == pytest.approx(hockey(dict(p.items()), dict(q.items()), eps), abs=1e-12)
    assert hockey_stick(p, p, eps) == 0


def test_hockey_stick_of_disjoint_points_is_one():
    assert hockey_stick(FiniteDistribution.point(0), FiniteDistribution.point(1), 0.0) == 1


def test_collision_probability_is_sum_of_squares():
    d = FiniteDistribution.from_pairs([(0, Fraction(1, 2)), (1, Fraction(1, 2))])
    assert d.collision_probability() == Fraction(1, 2)


def test_empirical_law_counts_values():
    d = empirical([1, 1, 2, 1])
    assert d.prob(1) == Fraction(3, 4)
