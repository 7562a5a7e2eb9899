"""Dense linear algebra for density matrices.

Entropies are in nats. Matrices are plain ``numpy`` arrays; validation
helpers raise :class:`ValidationError` naming the violated invariant.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGEN_TOL = 1e-12
ENTROPY_CLIP = 1e-14
PROBABILITY_SUM_TOL = 1e-10
DEFAULT_DENSE_CAP = 4096


class ValidationError(ValueError):
    """Input violates a documented invariant."""


class CapExceededError(ValueError):
    """A dense dimension would exceed the configured cap."""


def check_dense_dim(dim: int, cap: int = DEFAULT_DENSE_CAP, what: str = "dense dimension") -> None:
    if dim > cap:
        raise CapExceededError(f"{what} {dim} exceeds cap {cap}")


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def _check_structure(rho, herm_tol, trace_tol) -> np.ndarray:
    rho = as_matrix(rho)
    if rho.shape[0] != rho.shape[1]:
        raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
    dev = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
    if dev > herm_tol:
        raise ValidationError(f"hermiticity violated: max |A - A^*| = {dev:.3e} > {herm_tol:g}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise ValidationError(f"unit trace violated: trace = {tr.real:.15g}")
    return rho


def _check_positive(vals: np.ndarray, eig_tol: float) -> None:
    low = float(vals.min())
    if low < -eig_tol:
        raise ValidationError(f"positivity violated: smallest eigenvalue {low:.3e}")


def validate_density_matrix(rho, herm_tol=HERMITIAN_TOL, trace_tol=TRACE_TOL, eig_tol=EIGEN_TOL) -> np.ndarray:
    """Return ``rho`` as a complex array after checking it is a density matrix.

    Raises
    ------
    ValidationError
        If ``rho`` is not square, not Hermitian, not unit trace, or has an
        eigenvalue below ``-eig_tol``. The message names the failed check.
    """
    rho = _check_structure(rho, herm_tol, trace_tol)
    _check_positive(np.linalg.eigvalsh(rho), eig_tol)
    return rho


def spectrum(rho, validate: bool = True) -> np.ndarray:
    """Eigenvalues of a density matrix, sorted descending.

    Ties keep their original eigensolver index (stable sort).
    """
    rho = _check_structure(rho, HERMITIAN_TOL, TRACE_TOL) if validate else as_matrix(rho)
    vals = np.linalg.eigvalsh(rho)
    if validate:
        _check_positive(vals, EIGEN_TOL)
    order = np.argsort(-vals, kind="stable")
    return vals[order]


def _entropy_of_probabilities(p: np.ndarray) -> float:
    p = p[p > ENTROPY_CLIP]
    return float(-np.sum(p * np.log(p)))


def von_neumann_entropy(rho, validate: bool = True) -> float:
    """``-Tr rho ln rho`` in nats.

    Eigenvalues at or below ``ENTROPY_CLIP`` contribute zero, so tiny
    negative roundoff never produces NaN.
    """
    vals = spectrum(rho, validate=validate)
    return _entropy_of_probabilities(vals)


def shannon_entropy(p: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValidationError("probability vector must be one-dimensional")
    if p.size and p.min() < -EIGEN_TOL:
        raise ValidationError(f"negative probability {p.min():.3e}")
    if abs(p.sum() - 1.0) > PROBABILITY_SUM_TOL:
        raise ValidationError(f"probabilities sum to {p.sum():.15g}, not 1")
    return _entropy_of_probabilities(p)


def binary_entropy(p: float) -> float:
    return shannon_entropy([p, 1.0 - p])


def tensor_product(*factors) -> np.ndarray:
    """Kronecker product, first factor slowest (row-major block convention)."""
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, as_matrix(f))
    return out


def partial_trace(rho, dims: Sequence[int], keep: Sequence[int], validate: bool = True) -> np.ndarray:
    """Reduce ``rho`` on ``prod(dims)`` to the tensor factors listed in ``keep``.

    Factors are ordered as in :func:`tensor_product`; kept factors appear in
    increasing index order in the result.
    """
    rho = validate_density_matrix(rho) if validate else as_matrix(rho)
    dims = [int(n) for n in dims]
    if any(n < 1 for n in dims):
        raise ValidationError(f"factor dimensions must be positive, got {dims}")
    if int(np.prod(dims)) != rho.shape[0]:
        raise ValidationError(f"dims {dims} multiply to {int(np.prod(dims))}, matrix has dim {rho.shape[0]}")
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValidationError("keep must name at least one factor")
    if keep[0] < 0 or keep[-1] >= len(dims):
        raise ValidationError(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = rho.reshape(dims + dims)
    # Contract each traced row axis with its column axis.
    row_labels = list(range(n))
    col_labels = [i + n if i in keep else i for i in range(n)]
    out_labels = keep + [i + n for i in keep]
    reduced = np.einsum(t, row_labels + col_labels, out_labels)
    dk = int(np.prod([dims[i] for i in keep]))
    return reduced.reshape(dk, dk)


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim


def pure_state(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-ensemble density matrix of the given rank (full rank by default)."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real
