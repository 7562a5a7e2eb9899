import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alf_entropy.fermion_shift import build_gicar_partition, random_tail_map
from alf_entropy.markov_reduction import (
    ChainError,
    FiniteMarkovChain,
    build_fine_chain,
    check_lumpable,
    class_mass,
    classify_states,
    closed_form_rate,
    coarse_classes,
    coarse_grain,
    coarse_in_a3,
    coarse_path_probabilities,
    entropy_rate,
    expected_coarse_successors,
    finite_n_entropy,
    gicar_chains,
    path_entropy_bruteforce,
    stationary_measure,
    stationary_residual,
    structure_checks,
    successor_labels,
)

from oracles import path_distribution, shannon_hp

LN2 = math.log(2)
F = Fraction


def test_state_counts():
    assert build_fine_chain(2).n_states == 6
    assert build_fine_chain(3).n_states == 14
    assert coarse_grain(build_fine_chain(3)).n_states == 10


def test_row_probabilities_a3_a4():
    fine = build_fine_chain(4)
    a3, a4 = classify_states(fine)
    assert a3 | a4 == frozenset(range(fine.n_states)) and not a3 & a4
    for i in a3:
        assert sorted(fine.P[i].values()) == [F(1, 4), F(1, 4), F(1, 2)]
    for i in a4:
        assert sorted(fine.P[i].values()) == [F(1, 4)] * 4
    assert shannon_hp([0.5, 0.25, 0.25]) == pytest.approx(1.5 * LN2, abs=1e-15)


def test_m2_all_states_a3():
    a3, a4 = classify_states(build_fine_chain(2))
    assert len(a3) == 6 and not a4


def test_rows_sum_to_one_and_bad_chain():
    for m in range(2, 7):
        for row in build_fine_chain(m).P:
            assert sum(row.values()) == 1
    with pytest.raises(ChainError):
        FiniteMarkovChain.from_matrix([[F(1, 2), F(1, 3)], [0, 1]])


@pytest.mark.parametrize("m", range(2, 9))
def test_stationary_masses(m):
    fine, coarse = gicar_chains(m)
    mu = stationary_measure(fine)
    assert stationary_residual(fine, mu) == 0
    a3, a4 = classify_states(fine)
    assert class_mass(mu, a3) == F(2, m)
    assert class_mass(mu, a4) == F(m - 2, m)
    mu_c = stationary_measure(coarse)
    assert stationary_residual(coarse, mu_c) == 0
    extremes = {(0, 1, 1), (m, 2, 2)}
    for label, v in zip(coarse.states, mu_c):
        assert v == (F(1, 2 * m) if label in extremes else F(1, 4 * m))
    # class sums of the fine measure reproduce the coarse one
    for label, members in coarse_classes(fine).items():
        assert class_mass(mu, members) == mu_c[coarse.index(label)]


@pytest.mark.parametrize("m", range(2, 9))
def test_rates_closed_form(m):
    fine, coarse = gicar_chains(m)
    closed = closed_form_rate(m)
    assert closed == pytest.approx((2 - 1 / m) * LN2, abs=1e-15)
    assert entropy_rate(fine) == pytest.approx(closed, abs=1e-10)
    assert entropy_rate(coarse) == pytest.approx(closed, abs=1e-10)
    assert entropy_rate(fine) < 2 * LN2


def test_closed_form_values():
    assert closed_form_rate(2) == pytest.approx(1.039721, abs=1e-6)
    assert closed_form_rate(8) == pytest.approx(15 / 8 * LN2)
    rates = [closed_form_rate(m) for m in range(2, 50)]
    assert all(a < b for a, b in zip(rates, rates[1:]))
    for m in (2, 5, 40):
        assert 2 * LN2 - closed_form_rate(m) == pytest.approx(LN2 / m)


@pytest.mark.parametrize("m", range(2, 7))
def test_lumpability(m):
    fine = build_fine_chain(m)
    assert check_lumpable(fine, list(coarse_classes(fine).values())).lumpable
    assert check_lumpable(fine, [[i] for i in range(fine.n_states)]).lumpable


def test_a3_a4_split_recorded():
    fine = build_fine_chain(4)
    a3, a4 = classify_states(fine)
    res = check_lumpable(fine, [sorted(a3), sorted(a4)])
    # no expectation: outcome is reported, and a failure carries a witness
    assert res.lumpable or res.witness is not None


@pytest.mark.parametrize("m", [2, 3, 4])
def test_coarse_paths_equal_fine_sums(m):
    fine, coarse = gicar_chains(m)
    count = 0
    for _, cp, fp in coarse_path_probabilities(fine, coarse, 4):
        assert cp == fp
        count += 1
    assert count > 0


@pytest.mark.parametrize("m", range(2, 9))
def test_coarse_successor_tables(m):
    coarse = coarse_grain(build_fine_chain(m))
    assert coarse.n_states == 4 * m - 2
    for label in coarse.states:
        expected = expected_coarse_successors(m, label)
        assert expected is not None, label
        assert successor_labels(coarse, label) == expected
    fine = build_fine_chain(m)
    a3, _ = classify_states(fine)
    for label, members in coarse_classes(fine).items():
        assert all((i in a3) == coarse_in_a3(m, label) for i in members)


def test_interior_and_boundary_rows():
    coarse = coarse_grain(build_fine_chain(5))
    assert successor_labels(coarse, (2, 1, 1)) == {(2, 1, 1), (2, 2, 1), (3, 1, 2), (3, 2, 2)}
    assert successor_labels(coarse, (0, 1, 1)) == {(0, 1, 1), (1, 1, 2), (1, 2, 2)}


@pytest.mark.parametrize("m", range(2, 9))
def test_structure(m):
    st_ = structure_checks(gicar_chains(m)[1])
    assert st_.irreducible and st_.primitive


def test_structure_small_chains():
    swap = FiniteMarkovChain.from_matrix([[0, 1], [1, 0]])
    s = structure_checks(swap)
    assert s.irreducible and not s.primitive
    assert not structure_checks(FiniteMarkovChain.from_matrix([[1, 0], [0, 1]])).irreducible
    assert stationary_measure(FiniteMarkovChain.from_matrix([[F(1, 3), F(2, 3)], [F(2, 3), F(1, 3)]])) == [F(1, 2)] * 2
    with pytest.raises(ChainError):
        stationary_measure(FiniteMarkovChain.from_matrix([[1, 0], [0, 1]]))


def test_deterministic_cycle_rate_zero():
    cycle = FiniteMarkovChain.from_matrix([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    assert entropy_rate(cycle) == 0


def test_finite_n_uniform_two_state():
    chain = FiniteMarkovChain.from_matrix([[F(1, 2), F(1, 2)], [F(1, 2), F(1, 2)]])
    assert finite_n_entropy(chain, 1) == pytest.approx(2 * LN2, abs=1e-15)


@pytest.mark.parametrize("n", range(0, 6))
def test_finite_n_matches_enumeration(n):
    fine = build_fine_chain(2)
    expected = shannon_hp([float(v) for v in path_distribution(2, n).values()]) if n <= 3 else None
    got = finite_n_entropy(fine, n)
    assert got == pytest.approx(path_entropy_bruteforce(fine, n), abs=1e-10)
    if expected is not None:
        assert got == pytest.approx(expected, abs=1e-10)


def test_finite_n_converges():
    fine = build_fine_chain(4)
    s = finite_n_entropy(fine, 2000)
    assert abs(s / 2000 - closed_form_rate(4)) < 5e-3


def test_large_chain_rational_reconstruction():
    fine = build_fine_chain(7)  # 254 states, float path then exact check
    mu = stationary_measure(fine)
    assert all(isinstance(v, Fraction) for v in mu)
    assert stationary_residual(fine, mu) == 0


def test_json_export():
    fine, coarse = gicar_chains(2)
    data = coarse.to_json(stationary_measure(coarse))
    assert data["mu_inf"][0] == {"num": 1, "den": 4}
    assert len(data["P"]) == 6


@pytest.mark.parametrize("m", range(2, 7))
def test_random_tail_map_same_rate(m):
    rng = np.random.default_rng(m)
    fine = build_fine_chain(build_gicar_partition(m, random_tail_map(m, rng)))
    coarse = coarse_grain(fine)
    assert entropy_rate(fine) == pytest.approx(closed_form_rate(m), abs=1e-12)
    assert entropy_rate(coarse) == pytest.approx(closed_form_rate(m), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 5),
    data=st.data(),
)
def test_stationary_random_positive_chains(n, data):
    rows = []
    for _ in range(n):
        w = data.draw(st.lists(st.integers(1, 9), min_size=n, max_size=n))
        rows.append([F(v, sum(w)) for v in w])
    chain = FiniteMarkovChain.from_matrix(rows)
    mu = stationary_measure(chain)
    assert stationary_residual(chain, mu) == 0 and sum(mu) == 1
    assert structure_checks(chain).primitive
    rate = entropy_rate(chain, mu)
    assert 0 <= rate <= math.log(n) + 1e-12
    # path entropy is subadditive in N and grows by at most the max row entropy
    s3, s4 = finite_n_entropy(chain, 3), finite_n_entropy(chain, 4)
    assert s4 - s3 <= max(chain.row_entropies()) + 1e-12
