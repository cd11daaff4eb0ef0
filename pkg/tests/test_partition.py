import math
from collections import Counter
from itertools import permutations

import numpy as np
import pytest

from fvddp.death_process import LatticeBudgetError
from fvddp.filtering import FilterState, init_state
from fvddp.lattice import WeightedNodeSet
from fvddp.measures import BaseMeasure, FiniteUniformP0
from fvddp.partition import (
    PartitionSample,
    conveyor_simulate,
    dp_eppf,
    lemma2_oracle,
    sample_partition,
    set_partition_count,
)
from fvddp.predictive import coefficients, exact_predict

DIFFUSE = FiniteUniformP0(range(1_000_000))


def zero_history_state(theta=1.0):
    return exact_predict(init_state(BaseMeasure(theta, DIFFUSE)), 1.0)


def multisets_of(n):
    """All block-size multisets of n, as sorted-descending tuples."""
    out = set()

    def rec(remaining, max_part, acc):
        if remaining == 0:
            out.add(tuple(sorted(acc, reverse=True)))
            return
        for part in range(min(remaining, max_part), 0, -1):
            rec(remaining - part, part, acc + [part])

    rec(n, n, [])
    return sorted(out)


def crp_seating_enumeration(n, theta):
    """Brute-force law of the CRP block-size multiset by walking every
    seating sequence (table choices) of n customers."""
    law = Counter()

    def rec(tables, prob):
        k = sum(tables)
        if k == n:
            law[tuple(sorted(tables, reverse=True))] += prob
            return
        denom = theta + k
        for j in range(len(tables)):
            rec(tables[:j] + [tables[j] + 1] + tables[j + 1 :], prob * tables[j] / denom)
        rec(tables + [1], prob * theta / denom)

    rec([], 1.0)
    return law


def test_dp_eppf_trivia():
    assert dp_eppf((1,), 0.3) == pytest.approx(1.0)
    assert dp_eppf((1,), 7.0) == pytest.approx(1.0)
    # 3 customers, one pair plus a singleton, theta = 1: 1/(1*2*3) * 1 * 1
    assert dp_eppf((2, 1), 1.0) == pytest.approx(1.0 / 6.0, abs=1e-15)
    with pytest.raises(ValueError):
        dp_eppf((), 1.0)
    with pytest.raises(ValueError):
        dp_eppf((0, 2), 1.0)


def test_dp_eppf_matches_seating_enumeration():
    for theta in (0.5, 1.0, 3.0):
        law = crp_seating_enumeration(3, theta)
        for sizes, prob in law.items():
            assert dp_eppf(sizes, theta) * set_partition_count(sizes) == pytest.approx(
                prob, abs=1e-12
            )


@pytest.mark.parametrize("theta", [0.5, 1.0, 5.0])
def test_dp_eppf_normalizes_over_set_partitions(theta):
    total = sum(
        dp_eppf(sizes, theta) * set_partition_count(sizes) for sizes in multisets_of(4)
    )
    assert abs(total - 1.0) < 1e-12
    assert sum(set_partition_count(s) for s in multisets_of(4)) == 15


def test_partition_sample_validation():
    with pytest.raises(ValueError):
        PartitionSample((("a", 0),))
    with pytest.raises(ValueError):
        PartitionSample((("a", 1), ("a", 2)))
    sample = PartitionSample((("a", 2), ("b", 1)))
    assert sample.n == 3
    assert sample.sorted_sizes == (2, 1)
    assert sample.to_json_dict() == {
        "blocks": [{"value": "a", "size": 2}, {"value": "b", "size": 1}]
    }


def test_single_customer_is_one_block(fig1_diffuse, rng):
    ps = exact_predict(fig1_diffuse, 0.5)
    for sampler in (sample_partition, conveyor_simulate):
        sample = sampler(ps, 1, rng)
        assert sample.sizes == (1,)


def test_samplers_require_draw_free_state(fig1_diffuse, rng):
    from fvddp.predictive import observe_draw

    ps = observe_draw(exact_predict(fig1_diffuse, 0.5), 3)
    with pytest.raises(ValueError, match="draw-free"):
        sample_partition(ps, 2, rng)


def _empirical_multiset_law(sampler, state, n, reps, rng):
    counts = Counter()
    for _ in range(reps):
        counts[sampler(state, n, rng).sorted_sizes] += 1
    return {k: v / reps for k, v in counts.items()}


def test_zero_history_sampler_matches_dp_eppf(rng):
    state = zero_history_state(theta=1.0)
    reps = 20_000
    law = _empirical_multiset_law(sample_partition, state, 3, reps, rng)
    for sizes in multisets_of(3):
        expected = dp_eppf(sizes, 1.0) * set_partition_count(sizes)
        se = math.sqrt(expected * (1 - expected) / reps)
        assert abs(law.get(sizes, 0.0) - expected) <= 4 * se


def test_empty_belt_conveyor_is_classical_crp(rng):
    state = zero_history_state(theta=2.0)
    reps = 20_000
    law = _empirical_multiset_law(conveyor_simulate, state, 3, reps, rng)
    for sizes in multisets_of(3):
        expected = dp_eppf(sizes, 2.0) * set_partition_count(sizes)
        se = math.sqrt(expected * (1 - expected) / reps)
        assert abs(law.get(sizes, 0.0) - expected) <= 4 * se


def test_first_customer_belt_menu_split(fig1_diffuse, rng):
    # P(first dish is a past value) = sum_n w_n |n| / (theta + |n|) = sum C_i
    ps = exact_predict(fig1_diffuse, 0.5)
    coef = coefficients(ps)
    expected = float(coef.c.sum())
    reps = 20_000
    hits = 0
    for _ in range(reps):
        sample = conveyor_simulate(ps, 1, rng)
        hits += sample.blocks[0][0] in (0, 1)
    se = math.sqrt(expected * (1 - expected) / reps)
    assert abs(hits / reps - expected) <= 4 * se


def test_lemma2_oracle_reduces_to_dp_eppf():
    state = zero_history_state(theta=1.3)
    for sizes in ((1,), (2,), (2, 1), (1, 1, 1), (3, 2)):
        assert lemma2_oracle(state, sizes) == pytest.approx(
            dp_eppf(sizes, 1.3), abs=1e-12
        )


def test_lemma2_oracle_total_probability_single_draw(fig1_diffuse):
    ps = exact_predict(fig1_diffuse, 0.5)
    assert lemma2_oracle(ps, (1,)) == pytest.approx(1.0, abs=1e-12)


def test_lemma2_oracle_symmetric_in_sizes(fig1_diffuse):
    ps = exact_predict(fig1_diffuse, 0.5)
    for sizes in ((2, 1), (3, 1), (2, 2)):
        for perm in set(permutations(sizes)):
            assert lemma2_oracle(ps, perm) == pytest.approx(
                lemma2_oracle(ps, sizes), abs=1e-13
            )


def test_lemma2_oracle_normalizes_at_n3(fig1_diffuse):
    ps = exact_predict(fig1_diffuse, 0.5)
    total = sum(
        lemma2_oracle(ps, sizes) * set_partition_count(sizes)
        for sizes in multisets_of(3)
    )
    assert total == pytest.approx(1.0, abs=1e-10)


def test_lemma2_oracle_budget_refusals(fig1_diffuse):
    ps = exact_predict(fig1_diffuse, 0.5)
    with pytest.raises(LatticeBudgetError):
        lemma2_oracle(ps, (4, 2))


def test_both_samplers_match_the_oracle(fig1_diffuse, rng):
    ps = exact_predict(fig1_diffuse, 0.5)
    reps = 20_000
    exact = {
        sizes: lemma2_oracle(ps, sizes) * set_partition_count(sizes)
        for sizes in multisets_of(3)
    }
    assert sum(exact.values()) == pytest.approx(1.0, abs=1e-10)
    for sampler in (sample_partition, conveyor_simulate):
        law = _empirical_multiset_law(sampler, ps, 3, reps, rng)
        for sizes, expected in exact.items():
            se = math.sqrt(expected * (1 - expected) / reps)
            assert abs(law.get(sizes, 0.0) - expected) <= 4 * se + 1e-9


def test_partition_law_approaches_dp_eppf_for_long_lags(fig1_diffuse, rng):
    ps = exact_predict(fig1_diffuse, 50.0)
    exact = {
        sizes: lemma2_oracle(ps, sizes) * set_partition_count(sizes)
        for sizes in multisets_of(4)
    }
    tv = 0.5 * sum(
        abs(exact[s] - dp_eppf(s, 1.0) * set_partition_count(s)) for s in exact
    )
    assert tv < 0.01


def test_fresh_labels_are_distinct_and_belt_labels_are_past_values(rng):
    # a belt-heavy state: block values must never repeat
    fs = FilterState(
        distinct=(0, 1, 2),
        nodes=WeightedNodeSet({(2, 1, 1): 0.5, (1, 1, 0): 0.5}),
        base=BaseMeasure(1.0, DIFFUSE),
        sigma=1.0,
    )
    ps = exact_predict(fs, 0.05)
    for _ in range(200):
        sample = conveyor_simulate(ps, 5, rng)
        values = [v for v, _ in sample.blocks]
        assert len(values) == len(set(values))
