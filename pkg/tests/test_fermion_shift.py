import itertools
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alf_entropy.fermion_shift import (
    GicarPartition,
    MatrixUnit,
    brute_force_correlation,
    build_gicar_partition,
    canonical_tail,
    car_generators,
    gauge_charge,
    gicar_decomposition,
    jw_dense,
    matrix_unit_product,
    pad_to_window,
    path_flat_index,
    random_tail_map,
    refined_correlation_symbolic,
    refined_path_probability,
    refined_unit,
    shift_matrix_unit,
    tracial_value,
    valid_paths,
)
from alf_entropy.partitions import verify_unity
from alf_entropy.quantum_core import CapExceededError, ValidationError, shannon_entropy, von_neumann_entropy

from oracles import gicar_pairs, jw_annihilators, path_distribution


def oracle_unit(u: MatrixUnit, gens) -> np.ndarray:
    """Dense matrix unit built from the annihilators ``gens[k]`` standing for site ``k + 1``.

    Site factors: ``E11 = a*a``, ``E22 = a a*``, ``E21 = V a``, ``E12 = V a*``,
    with ``V`` the product of ``2 a*a - 1`` over all earlier sites of the chain.
    """
    eye = np.eye(gens[0].shape[0])
    out = eye.astype(complex)
    m = u.interval[0]
    for pos, (f, s) in enumerate(zip(u.phi, u.psi)):
        site = m - 1 + pos
        a = gens[site]
        v = eye.copy()
        for k in range(site):
            v = v @ (2 * gens[k].conj().T @ gens[k] - eye)
        factor = {
            (1, 1): a.conj().T @ a,
            (2, 2): a @ a.conj().T,
            (2, 1): v @ a,
            (1, 2): v @ a.conj().T,
        }[(f, s)]
        out = out @ factor
    for s in u.parity_sites:
        out = (2 * gens[s - 1].conj().T @ gens[s - 1] - eye) @ out
    return u.coeff * out


def rand_unit(rng, n_sites):
    m = int(rng.integers(1, n_sites + 1))
    n = int(rng.integers(m, n_sites + 1))
    ln = n - m + 1
    return MatrixUnit(
        (m, n),
        tuple(int(v) for v in rng.integers(1, 3, ln)),
        tuple(int(v) for v in rng.integers(1, 3, ln)),
        complex(rng.standard_normal(), rng.standard_normal()),
    )


# --- symbolic algebra ---------------------------------------------------------


def test_product_rules():
    e = MatrixUnit((1, 2), (1, 2), (1, 2))
    assert matrix_unit_product(e, e) == e
    f = MatrixUnit((1, 2), (2, 2), (1, 1))
    assert matrix_unit_product(e, f) is None
    u = MatrixUnit((1, 2), (2, 1), (1, 2), 3.0)
    assert matrix_unit_product(u.adjoint(), u) == MatrixUnit((1, 2), (1, 2), (1, 2), 9.0)
    with pytest.raises(ValidationError):
        matrix_unit_product(e, MatrixUnit((1, 3), (1, 1, 1), (1, 1, 1)))


def test_pad_to_window():
    u = MatrixUnit((1, 2), (1, 2), (2, 1))
    assert pad_to_window(u, (1, 2)) == [u]
    padded = pad_to_window(u, (1, 3))
    assert [(p.phi, p.psi) for p in padded] == [((1, 2, 1), (2, 1, 1)), ((1, 2, 2), (2, 1, 2))]
    assert len(pad_to_window(u, (1, 4))) == 4
    dense = sum(jw_dense(p, 4) for p in pad_to_window(u, (1, 4)))
    assert np.allclose(dense, jw_dense(u, 4), atol=1e-15)


def test_shift_examples():
    u = MatrixUnit((1, 2), (1, 2), (2, 1))
    assert shift_matrix_unit(u) == MatrixUnit((2, 3), (1, 2), (2, 1))
    assert shift_matrix_unit(shift_matrix_unit(u)).interval == (3, 4)
    odd = MatrixUnit((1, 2), (1, 2), (1, 1))
    assert gauge_charge(odd) == -1
    assert shift_matrix_unit(odd).marked


def test_gauge_charge_and_trace():
    assert gauge_charge(MatrixUnit((1, 2), (1, 1), (1, 1))) == 0
    assert gauge_charge(MatrixUnit((1, 2), (2, 1), (1, 1))) == -1
    assert tracial_value(MatrixUnit((1, 3), (1, 2, 1), (1, 2, 1))) == pytest.approx(1 / 8)
    assert tracial_value(MatrixUnit((1, 2), (1, 2), (2, 1))) == 0
    for u in build_gicar_partition(4).units():
        assert gauge_charge(u) == 0


def test_jw_occupation_unit():
    e = jw_dense(MatrixUnit((1, 1), (1,), (1,)), 1)
    a = car_generators(1)[0]
    assert np.allclose(e, a.conj().T @ a)
    assert np.allclose(e, np.diag([1, 0]))


def test_generators_match_oracle():
    for n in range(1, 6):
        for ours, ref in zip(car_generators(n), jw_annihilators(n)):
            assert np.array_equal(ours, ref)


@pytest.mark.parametrize("n", range(1, 9))
def test_car_relations(n):
    gens = car_generators(n)
    eye = np.eye(2**n)
    for k, l in itertools.product(range(n), repeat=2):
        a, b = gens[k], gens[l]
        assert np.abs(a @ b + b @ a).max() <= 1e-12
        assert np.abs(a.conj().T @ b + b @ a.conj().T - (k == l) * eye).max() <= 1e-12


def test_gicar_decomposition():
    assert gicar_decomposition(2) == [1, 2, 1]
    blocks = gicar_decomposition(4)
    assert blocks == [1, 4, 6, 4, 1]
    assert sum(b * b for b in blocks) == comb(8, 4) == 70
    n = 5
    for s in range(n + 1):
        count = sum(1 for phi in itertools.product((1, 2), repeat=n) if sum(phi) == n + s)
        assert count == comb(n, s)


def test_matrix_units_agree_with_oracle_1000(rng):
    worst = 0.0
    for _ in range(1000):
        n_sites = int(rng.integers(1, 7))
        gens = jw_annihilators(n_sites + 1)
        u = rand_unit(rng, n_sites)
        du = jw_dense(u, n_sites + 1)
        worst = max(worst, np.abs(du - oracle_unit(u, gens)).max())
        worst = max(worst, np.abs(jw_dense(u.adjoint(), n_sites + 1) - du.conj().T).max())
        worst = max(worst, abs(tracial_value(u) - np.trace(jw_dense(u, n_sites)) / 2**n_sites))
        phi2 = u.psi if rng.random() < 0.5 else tuple(int(v) for v in rng.integers(1, 3, u.length))
        v = MatrixUnit(u.interval, phi2, tuple(int(t) for t in rng.integers(1, 3, u.length)), 0.5)
        prod = matrix_unit_product(u, v)
        dprod = 0 * du if prod is None else jw_dense(prod, n_sites + 1)
        worst = max(worst, np.abs(du @ jw_dense(v, n_sites + 1) - dprod).max())
        # shift: the defining formula with every a_k replaced by a_{k+1}
        shifted = oracle_unit(u, gens[1:])
        worst = max(worst, np.abs(jw_dense(shift_matrix_unit(u), n_sites + 1) - shifted).max())
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_shift_is_homomorphism(seed):
    rng = np.random.default_rng(seed)
    u = rand_unit(rng, 4)
    v = MatrixUnit(u.interval, u.psi, tuple(int(t) for t in rng.integers(1, 3, u.length)))
    prod = matrix_unit_product(u, v)
    lhs = jw_dense(shift_matrix_unit(u), 5) @ jw_dense(shift_matrix_unit(v), 5)
    assert np.allclose(lhs, jw_dense(shift_matrix_unit(prod), 5), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_trace_is_shift_invariant_and_tracial(seed):
    rng = np.random.default_rng(seed)
    u, v = rand_unit(rng, 3), rand_unit(rng, 3)
    du, dv = jw_dense(u, 4), jw_dense(v, 4)
    assert np.trace(du @ dv) == pytest.approx(np.trace(dv @ du), abs=1e-12)
    assert tracial_value(shift_matrix_unit(u)) == pytest.approx(tracial_value(u), abs=1e-14)


# --- GICAR partitions -----------------------------------------------------------


def test_partition_sizes():
    for m in range(2, 8):
        assert build_gicar_partition(m).size == 2 ** (m + 1) - 2
    assert build_gicar_partition(2).size == 6


def test_partition_matches_oracle_enumeration():
    for m in range(2, 6):
        assert list(build_gicar_partition(m).pairs) == gicar_pairs(m)


def test_all_ones_psi_single_element():
    p = build_gicar_partition(4)
    ones = (1, 1, 1, 1)
    hits = [(phi, psi) for phi, psi in p.pairs if psi == ones]
    assert hits == [((1, 1, 1, 1), ones)]
    assert p.coeff_sq(*hits[0]) == 1


def test_canonical_tail():
    assert canonical_tail(1, (1, 2, 2), 3) == (2, 2)
    assert canonical_tail(2, (1, 2, 1), 3) == (1, 1)
    assert canonical_tail(2, (1, 1, 1), 3) is None


@pytest.mark.parametrize("m", range(2, 7))
def test_unitality_exact_and_dense(m):
    p = build_gicar_partition(m)
    for psi in itertools.product((1, 2), repeat=m):
        assert sum((p.coeff_sq(phi, q) for phi, q in p.pairs if q == psi), Fraction(0)) == 1
    if m <= 4:
        ok, dev = verify_unity(p.dense_elements(), 1e-12)
        assert ok, dev


def test_partition_rejects_bad_tails():
    with pytest.raises(ValidationError):
        GicarPartition(2, {(1, (1, 2)): (1,)})  # not gauge invariant
    with pytest.raises(ValidationError):
        GicarPartition(2, {(1, (1, 1)): (1,)})  # unitality fails elsewhere


def test_random_tail_map_valid(rng):
    for m in range(2, 7):
        p = build_gicar_partition(m, random_tail_map(m, rng))
        assert p.size == 2 ** (m + 1) - 2


# --- refinements ----------------------------------------------------------------


def test_path_probability_base_and_mismatch():
    p = build_gicar_partition(3)
    for i, (phi, psi) in enumerate(p.pairs):
        assert refined_path_probability(p, [i]) == p.coeff_sq(phi, psi) / 8
    i = next(i for i in range(p.size) if not p.matches(0, i))
    assert refined_path_probability(p, [0, i]) == 0


@pytest.mark.parametrize("n", range(0, 5))
def test_path_distribution_sums_to_one(n):
    sym = refined_correlation_symbolic(build_gicar_partition(2), n)
    assert sum(sym.values()) == 1


@pytest.mark.parametrize("m,n", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
def test_symbolic_matches_enumeration_oracle(m, n):
    sym = refined_correlation_symbolic(build_gicar_partition(m), n)
    assert sym == path_distribution(m, n)


def test_refined_unit_coefficients():
    p = build_gicar_partition(2)
    for path in valid_paths(p, 2):
        u = refined_unit(p, path)
        assert u is not None and not u.marked
        assert abs(u.coeff) ** 2 == pytest.approx(float(refined_path_probability(p, path)) * 2**4)
    bad = (0, next(j for j in range(p.size) if not p.matches(0, j)))
    assert refined_unit(p, bad) is None


@pytest.mark.parametrize("n", [1, 2])
def test_dense_rho_is_diagonal_with_path_weights(n):
    p = build_gicar_partition(2)
    rho = brute_force_correlation(p, n)
    sym = refined_correlation_symbolic(p, n)
    diag = np.zeros(rho.shape[0])
    for path, prob in sym.items():
        diag[path_flat_index(p, path)] = float(prob)
    assert np.abs(rho - np.diag(np.diag(rho))).max() <= 1e-12
    assert np.abs(np.diag(rho).real - diag).max() <= 1e-12
    assert np.trace(rho).real == pytest.approx(1, abs=1e-12)
    probs = [float(v) for v in sym.values()]
    assert von_neumann_entropy(rho) == pytest.approx(shannon_entropy(probs), abs=1e-10)


def test_brute_force_cap():
    with pytest.raises(CapExceededError):
        brute_force_correlation(build_gicar_partition(4), 2)
    with pytest.raises(CapExceededError):
        valid_paths(build_gicar_partition(4), 6, cap=100)
