from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stability_lab.core import MeteredAlgorithm, Sample, exact_law_over_tapes, majority_algorithm
from stability_lab.distribution import FiniteDistribution
from stability_lab.errors import BudgetExhaustedError, EnumerationTooLargeError
from stability_lab.tape import BitTape, bits_for, compress_distribution, enumerate_tapes, fresh_tape

from oracles import floor_then_mode, total_variation


def test_reads_past_the_budget_fail():
    tape = BitTape.from_int(0b101, 3)
    assert tape.read_bits(3) == (1, 0, 1)
    with pytest.raises(BudgetExhaustedError):
        tape.read_bit()


def test_empty_tape_cannot_be_read():
    assert fresh_tape(1, 2, 0).budget == 0
    with pytest.raises(BudgetExhaustedError):
        fresh_tape(1, 2, 0).read_bit()


def test_replay_repeats_the_reads():
    tape = fresh_tape(7, 3, 40)
    first = tape.read_bits(40)
    assert tape.replay().read_bits(40) == first


def test_fresh_tape_is_deterministic_and_stream_dependent():
    assert fresh_tape(7, 3, 64) == fresh_tape(7, 3, 64)
    assert fresh_tape(7, 3, 64) != fresh_tape(7, 4, 64)


def test_fresh_tape_bits_are_balanced():
    # 10^5 tapes of 32 bits; Hoeffding at 0.99 per position gives about +-0.0052
    bits = np.array([fresh_tape(11, i, 32).contents for i in range(100_000)])
    assert np.all(np.abs(bits.mean(axis=0) - 0.5) < 0.01)


def test_enumeration_is_lexicographic():
    assert [t.contents for t in enumerate_tapes(1)] == [(0,), (1,)]
    assert [t.to_int() for t in enumerate_tapes(3)] == list(range(8))
    assert len(enumerate_tapes(20)) == 2**20


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLargeError):
        enumerate_tapes(25)


def test_dyadic_base_compresses_exactly():
    base = FiniteDistribution.from_weights([2, 1, 1])
    assert compress_distribution(base, 2).tv == 0


def test_thirds_compress_to_the_reference_masses():
    # frozen from oracles.floor_then_mode([1/3]*3, 4) and oracles.total_variation
    sampler = compress_distribution(FiniteDistribution.from_weights([1, 1, 1]), 4)
    assert [p for _, p in sampler.law.items()] == [Fraction(6, 16), Fraction(5, 16), Fraction(5, 16)]
    assert sampler.tv == Fraction(1, 24)


def test_compression_below_the_minimum_bits_names_the_bound():
    with pytest.raises(ValueError, match="ceil"):
        compress_distribution(FiniteDistribution.from_weights([1] * 5), 2)


@given(st.lists(st.integers(0, 40), min_size=1, max_size=16).filter(any), st.integers(0, 5))
def test_compression_matches_reference_and_keeps_guarantees(ws, extra):
    base = FiniteDistribution.from_weights(ws)
    positive = [p for _, p in base.items() if p > 0]
    k = bits_for(len(positive)) + extra
    sampler = compress_distribution(base, k)
    law = sampler.law
    assert sum(law.probs) == 1
    assert set(law.positive_support()) <= set(base.positive_support())
    expected = floor_then_mode(positive, k)
    got = [law.prob(y) for y in base.positive_support()]
    assert got == expected
    assert sampler.tv == total_variation(dict(base.items()), dict(law.items()))
    assert sampler.tv <= Fraction(len(positive), 2**k)


@given(st.lists(st.integers(1, 1000), min_size=2, max_size=16), st.sampled_from([Fraction(1, 4), Fraction(1, 16)]))
def test_compression_meets_the_eta_target(ws, eta):
    base = FiniteDistribution.from_weights(ws)
    k = bits_for(len(ws)) + bits_for(int(1 / eta))
    assert compress_distribution(base, k).tv <= eta


@given(st.lists(st.integers(1, 20), min_size=1, max_size=9), st.integers(0, 6))
def test_table_lookup_reproduces_the_law(ws, extra):
    base = FiniteDistribution.from_weights(ws)
    sampler = compress_distribution(base, bits_for(len(ws)) + extra)
    counts = {}
    for t in enumerate_tapes(sampler.bits):
        y = sampler.sample(t)
        counts[y] = counts.get(y, 0) + 1
    assert {y: Fraction(c, 2**sampler.bits) for y, c in counts.items()} == dict(sampler.law.items())


def test_exact_law_of_a_deterministic_algorithm_is_a_point():
    alg = MeteredAlgorithm(lambda s, t: int(s.points.sum()), 3, 0)
    law = exact_law_over_tapes(alg, Sample.from_points([1, 1, 0]))
    assert dict(law.items()) == {2: 1}


def test_exact_law_of_the_tape_reader_is_uniform():
    alg = MeteredAlgorithm(lambda s, t: t.read_int(3), 1, 3)
    law = exact_law_over_tapes(alg, Sample.from_points([0]))
    assert dict(law.items()) == {y: Fraction(1, 8) for y in range(8)}


def test_exact_law_of_a_randomised_majority_matches_monte_carlo():
    # two tape bits choose how many of the first points the majority ignores
    base = majority_algorithm(7)

    def fn(s, t):
        skip = t.read_int(2)
        pts = s.points[skip:]
        return 1 if 2 * int((pts == 1).sum()) > len(pts) else -1

    alg = MeteredAlgorithm(fn, 7, 2)
    s = Sample.from_points([1, 1, 1, 0, 0, 0, 1])
    law = exact_law_over_tapes(alg, s)
    rng = np.random.default_rng(0)
    trials = 200_000
    draws = rng.integers(0, 4, trials)
    outs = np.array([alg(s, BitTape.from_int(int(r), 2)) for r in range(4)])[draws]
    for y, p in law.items():
        sd = (float(p) * (1 - float(p)) / trials) ** 0.5
        assert abs(np.mean(outs == y) - float(p)) <= 3 * sd + 1e-12
    assert base(s) == 1
