"""Shift dynamics on a quantum spin chain with a product reference state.

Sites are numbered from 1. A partition living on ``[1, M]`` refined over
``N`` time steps lives on the window ``[1, M + N - 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .partitions import (
    UNITY_TOL,
    OperationalPartition,
    gram_correlation,
    verify_unity,
)
from .quantum_core import (
    DEFAULT_DENSE_CAP,
    CapExceededError,
    ValidationError,
    partial_trace,
    tensor_product,
    validate_density_matrix,
    von_neumann_entropy,
)

SANDWICH_TOL = 1e-8
# Largest number of complex entries held when materialising refined elements.
STORAGE_CAP = 2**26


@dataclass(frozen=True, eq=False)
class SpinChainSystem:
    """Spin chain with single-site dimension ``d`` and product state ``site_state``^(x Z)."""

    site_state: np.ndarray

    def __post_init__(self):
        rho = validate_density_matrix(self.site_state)
        if rho.shape[0] < 2:
            raise ValidationError("single-site dimension must be at least 2")
        rho = rho.copy()
        rho.setflags(write=False)
        object.__setattr__(self, "site_state", rho)

    @classmethod
    def from_spectrum(cls, spectrum) -> "SpinChainSystem":
        p = np.asarray(spectrum, dtype=float)
        return cls(np.diag(p).astype(complex))

    @classmethod
    def maximally_mixed(cls, d: int) -> "SpinChainSystem":
        return cls(np.eye(d, dtype=complex) / d)

    @property
    def d(self) -> int:
        return self.site_state.shape[0]

    @property
    def entropy_density(self) -> float:
        """Mean entropy per site; for a product state this is the site entropy."""
        return von_neumann_entropy(self.site_state, validate=False)

    def restriction(self, n_sites: int) -> np.ndarray:
        """Density matrix of the state on ``n_sites`` consecutive sites."""
        return tensor_product(*([self.site_state] * n_sites))


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """A dense operator supported on the sites ``window = (a, b)``."""

    window: tuple[int, int]
    matrix: np.ndarray
    d: int

    def __post_init__(self):
        a, b = self.window
        if b < a:
            raise ValidationError(f"empty window {self.window}")
        m = np.asarray(self.matrix, dtype=complex)
        n = self.d ** (b - a + 1)
        if m.shape != (n, n):
            raise ValidationError(f"operator on {b - a + 1} sites must be {n}x{n}, got {m.shape}")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True, eq=False)
class LocalPartition:
    """Partition of unity whose elements live on the sites ``[1, M]``.

    ``factors`` optionally gives each element as an elementary tensor of
    single-site operators, shape ``(k, M, d, d)``; it enables the factorized
    correlation path.
    """

    d: int
    M: int
    elements: np.ndarray
    factors: np.ndarray | None = field(default=None)

    def __post_init__(self):
        elems = np.asarray(self.elements, dtype=complex)
        n = self.d**self.M
        if elems.ndim != 3 or elems.shape[1:] != (n, n):
            raise ValidationError(f"elements must have shape (k, {n}, {n}), got {elems.shape}")
        ok, dev = verify_unity(OperationalPartition(elems), UNITY_TOL)
        if not ok:
            raise ValidationError(f"partition of unity violated: max deviation {dev:.3e}")
        elems.setflags(write=False)
        object.__setattr__(self, "elements", elems)
        if self.factors is not None:
            f = np.asarray(self.factors, dtype=complex)
            if f.shape != (elems.shape[0], self.M, self.d, self.d):
                raise ValidationError(f"factors must have shape (k, M, d, d), got {f.shape}")
            rebuilt = np.stack([tensor_product(*fk) for fk in f])
            if np.max(np.abs(rebuilt - elems)) > 1e-12:
                raise ValidationError("factors do not reproduce the partition elements")
            f.setflags(write=False)
            object.__setattr__(self, "factors", f)

    @property
    def size(self) -> int:
        return self.elements.shape[0]

    @classmethod
    def from_partition(cls, x: OperationalPartition, d: int) -> "LocalPartition":
        m = round(np.log(x.ambient_dim) / np.log(d))
        if d**m != x.ambient_dim:
            raise ValidationError(f"ambient dim {x.ambient_dim} is not a power of d={d}")
        return cls(d, m, x.elements)

    def as_partition(self) -> OperationalPartition:
        return OperationalPartition(self.elements)


def fourier_basis(d: int) -> np.ndarray:
    """Columns ``f_j = d^{-1/2} sum_k exp(2 pi i j k / d) e_k`` with ``j, k = 1..d``."""
    idx = np.arange(1, d + 1)
    return np.exp(2j * np.pi * np.outer(idx, idx) / d) / np.sqrt(d)


def fourier_partition(d: int) -> LocalPartition:
    """Two-site projective partition ``{p_i (x) q_j}``: standard basis then Fourier basis.

    Elements are ordered with ``i`` outer and ``j`` inner.
    """
    if d < 2:
        raise ValidationError("Fourier partition needs d >= 2")
    f = fourier_basis(d)
    p = [np.diag(np.eye(d)[i]).astype(complex) for i in range(d)]
    q = [np.outer(f[:, j], f[:, j].conj()) for j in range(d)]
    factors = np.array([[p[i], q[j]] for i in range(d) for j in range(d)])
    elements = np.stack([np.kron(a, b) for a, b in factors])
    return LocalPartition(d, 2, elements, factors)


def identity_local_partition(d: int, M: int = 1) -> LocalPartition:
    eye = np.eye(d, dtype=complex)
    return LocalPartition(d, M, np.eye(d**M, dtype=complex)[None], np.array([[eye] * M]))


def shift_embed(x: LocalOperator, steps: int, ambient_window: tuple[int, int]) -> LocalOperator:
    """Apply the shift ``steps`` times and embed into ``ambient_window`` with identities."""
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    a, b = x.window[0] + steps, x.window[1] + steps
    lo, hi = ambient_window
    if a < lo or b > hi:
        raise ValidationError(f"shifted support [{a}, {b}] escapes window [{lo}, {hi}]")
    d = x.d
    mat = np.kron(np.kron(np.eye(d ** (a - lo)), x.matrix), np.eye(d ** (hi - b)))
    return LocalOperator((lo, hi), mat, d)


def refined_window(M: int, n_steps: int) -> tuple[int, int]:
    return (1, M + n_steps - 1)


def _check_caps(x: LocalPartition, n_steps: int, cap_dense: int, cap_corr: int) -> tuple[int, int]:
    if n_steps < 1:
        raise ValidationError("number of refinement steps must be at least 1")
    dim = x.d ** (x.M + n_steps - 1)
    k = x.size**n_steps
    if dim > cap_dense or k > cap_corr:
        raise CapExceededError(
            f"N={n_steps}: ambient dim {dim} (cap_dense {cap_dense}), "
            f"refined size {k} (cap_corr {cap_corr})"
        )
    return dim, k


def refine(
    x: LocalPartition,
    n_steps: int,
    cap_dense: int = DEFAULT_DENSE_CAP,
    cap_corr: int = DEFAULT_DENSE_CAP,
) -> OperationalPartition:
    """N-step refinement with elements ``T^{N-1}(x_{j_{N-1}}) ... T(x_{j_1}) x_{j_0}``.

    Elements act on ``[1, M + N - 1]`` and are indexed by ``(j_0, ..., j_{N-1})``
    in lexicographic order, ``j_0`` slowest.
    """
    dim, k = _check_caps(x, n_steps, cap_dense, cap_corr)
    if k * dim * dim > STORAGE_CAP:
        raise CapExceededError(f"N={n_steps}: {k} refined elements of dim {dim} exceed storage cap")
    window = refined_window(x.M, n_steps)
    shifted = [
        np.stack([shift_embed(LocalOperator((1, x.M), e, x.d), n, window).matrix for e in x.elements])
        for n in range(n_steps)
    ]
    out = shifted[0]
    for n in range(1, n_steps):
        out = np.einsum("bij,ajk->abik", shifted[n], out).reshape(-1, dim, dim)
    return OperationalPartition(out)


def _site_operators(x: LocalPartition, n_steps: int) -> list[np.ndarray]:
    """Per-site factors of every refined element, each of shape ``(k^N, d, d)``."""
    n_sites = x.M + n_steps - 1
    d, k = x.d, x.size
    eye = np.eye(d, dtype=complex)
    sites = [np.broadcast_to(eye, (1, d, d)) for _ in range(n_sites)]
    for n in range(n_steps):
        count = sites[0].shape[0]
        new = []
        for s in range(n_sites):
            offset = s - n
            if 0 <= offset < x.M:
                # later time step multiplies from the left
                op = np.einsum("bij,ajk->abik", x.factors[:, offset], sites[s])
            else:
                op = np.broadcast_to(sites[s][:, None], (count, k, d, d))
            new.append(op.reshape(count * k, d, d))
        sites = new
    return sites


def refined_correlation(
    system: SpinChainSystem,
    x: LocalPartition,
    n_steps: int,
    method: str = "auto",
    cap_dense: int = DEFAULT_DENSE_CAP,
    cap_corr: int = DEFAULT_DENSE_CAP,
) -> np.ndarray:
    """N-step correlation matrix ``rho_N(i, j) = omega(xi_j^* xi_i)``.

    ``method`` is ``"dense"`` (full matrices on the refined window),
    ``"factorized"`` (products of single-site traces; needs ``x.factors``)
    or ``"auto"`` (factorized when available).
    """
    if x.d != system.d:
        raise ValidationError(f"partition site dim {x.d} != system site dim {system.d}")
    if method == "auto":
        method = "factorized" if x.factors is not None else "dense"
    if method == "factorized":
        if x.factors is None:
            raise ValidationError("factorized path needs a partition given as elementary tensors")
        if n_steps < 1:
            raise ValidationError("number of refinement steps must be at least 1")
        k = x.size**n_steps
        if k > cap_corr:
            raise CapExceededError(f"N={n_steps}: refined size {k} (cap_corr {cap_corr})")
        sigma = system.site_state
        rho = np.ones((k, k), dtype=complex)
        for ops in _site_operators(x, n_steps):
            rho *= gram_correlation(np.ascontiguousarray(ops), sigma)
        rho = (rho + rho.conj().T) / 2
    elif method == "dense":
        xi = refine(x, n_steps, cap_dense, cap_corr)
        omega = system.restriction(x.M + n_steps - 1)
        rho = gram_correlation(xi.elements, omega)
    else:
        raise ValueError(f"unknown method {method!r}")
    validate_density_matrix(rho, herm_tol=1e-12, trace_tol=1e-10 * n_steps, eig_tol=1e-10)
    return rho


def reduced_refined_entropy(system: SpinChainSystem, n_steps: int) -> float:
    """Closed form ``(N - 1)(ln d + S(site_state))`` of the split-off reduced matrix."""
    if n_steps < 2:
        raise ValidationError("the reduced refined matrix needs N >= 2")
    return (n_steps - 1) * (np.log(system.d) + system.entropy_density)


def split_fourier_correlation(rho_n: np.ndarray, d: int, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``rho_N`` into the reduced matrix (without ``i_0``, ``k_{N-1}``) and the remainder."""
    dims = [d] * (2 * n_steps)
    last = 2 * n_steps - 1
    middle = list(range(1, last))
    reduced = partial_trace(rho_n, dims, middle, validate=False)
    remainder = partial_trace(rho_n, dims, [0, last], validate=False)
    return reduced, remainder


class SplitBound(NamedTuple):
    s_rho_n: float
    s_reduced: float
    s_reduced_dense: float
    s_remainder: float
    s_remainder_bound: float
    satisfied: bool


def split_bound_check(system: SpinChainSystem, n_steps: int, method: str = "auto") -> SplitBound:
    """Check ``S(rho_N) >= S(reduced) - 2 ln d`` for the Fourier partition."""
    if n_steps < 2:
        raise ValidationError("the split needs N >= 2")
    x = fourier_partition(system.d)
    rho = refined_correlation(system, x, n_steps, method=method)
    s_rho = von_neumann_entropy(rho, validate=False)
    reduced, remainder = split_fourier_correlation(rho, system.d, n_steps)
    s_red_closed = reduced_refined_entropy(system, n_steps)
    bound = 2 * np.log(system.d)
    return SplitBound(
        s_rho_n=s_rho,
        s_reduced=s_red_closed,
        s_reduced_dense=von_neumann_entropy(reduced, validate=False),
        s_remainder=von_neumann_entropy(remainder, validate=False),
        s_remainder_bound=float(bound),
        satisfied=bool(s_rho >= s_red_closed - bound - 1e-9),
    )


def window_upper_bound(system: SpinChainSystem, M: int, n_steps: int) -> float:
    """``S(omega_window) + ln dim`` on the refined window ``[1, M + N - 1]``."""
    n_sites = M + n_steps - 1
    return n_sites * (system.entropy_density + np.log(system.d))


class RateRow(NamedTuple):
    N: int
    entropy: float
    per_step: float
    increment: float


def entropy_rate_report(
    system: SpinChainSystem,
    x: LocalPartition,
    n_max: int,
    method: str = "auto",
    cap_dense: int = DEFAULT_DENSE_CAP,
    cap_corr: int = DEFAULT_DENSE_CAP,
) -> list[RateRow]:
    """Exact ``S(rho_N)`` for ``N = 1..n_max``; no limit is extrapolated."""
    rows, prev = [], 0.0
    for n in range(1, n_max + 1):
        s = von_neumann_entropy(refined_correlation(system, x, n, method, cap_dense, cap_corr), validate=False)
        rows.append(RateRow(n, s, s / n, s - prev))
        prev = s
    return rows
