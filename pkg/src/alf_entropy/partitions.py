"""Operational partitions of unity and their correlation matrices."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .quantum_core import (
    ValidationError,
    as_matrix,
    validate_density_matrix,
    von_neumann_entropy,
)

UNITY_TOL = 1e-10
LEMMA_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class OperationalPartition:
    """Ordered operators ``x_i`` on a common space with ``sum x_i^* x_i = 1``.

    ``elements`` is stored as a read-only ``(k, n, n)`` complex array.
    Construction checks shapes only; call :func:`verify_unity` (or
    :meth:`validate`) to check the unity condition.
    """

    elements: np.ndarray

    def __post_init__(self):
        elems = self.elements
        if isinstance(elems, np.ndarray) and elems.ndim == 3:
            arr = np.array(elems, dtype=complex)
        else:
            mats = [as_matrix(e) for e in elems]
            if not mats:
                raise ValidationError("a partition needs at least one element")
            shapes = {m.shape for m in mats}
            if len(shapes) != 1:
                raise ValidationError(f"ragged partition element shapes {sorted(shapes)}")
            arr = np.stack(mats)
        if arr.shape[0] < 1:
            raise ValidationError("a partition needs at least one element")
        if arr.shape[1] != arr.shape[2]:
            raise ValidationError(f"partition elements must be square, got {arr.shape[1:]}")
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    @property
    def ambient_dim(self) -> int:
        return self.elements.shape[1]

    @property
    def size(self) -> int:
        return self.elements.shape[0]

    def __len__(self):
        return self.size

    def __getitem__(self, i):
        return self.elements[i]

    def validate(self, tol: float = UNITY_TOL) -> "OperationalPartition":
        ok, dev = verify_unity(self, tol)
        if not ok:
            raise ValidationError(f"partition of unity violated: max deviation {dev:.3e} > {tol:g}")
        return self


class UnityCheck(NamedTuple):
    ok: bool
    deviation: float


class LemmaBound(NamedTuple):
    s_rho_x: float
    bound: float
    satisfied: bool


def _as_partition(x) -> OperationalPartition:
    return x if isinstance(x, OperationalPartition) else OperationalPartition(x)


def unity_deviation(x) -> float:
    x = _as_partition(x)
    total = np.einsum("kji,kjl->il", x.elements.conj(), x.elements)
    return float(np.max(np.abs(total - np.eye(x.ambient_dim))))


def verify_unity(x, tol: float = UNITY_TOL) -> UnityCheck:
    """Check ``sum_i x_i^* x_i = 1`` entrywise; the deviation is reported either way."""
    dev = unity_deviation(x)
    return UnityCheck(dev <= tol, dev)


def compose(x, y) -> OperationalPartition:
    """Ordered composition: elements ``x_i y_j`` with ``i`` outer, ``j`` inner."""
    x, y = _as_partition(x), _as_partition(y)
    if x.ambient_dim != y.ambient_dim:
        raise ValidationError(f"cannot compose partitions on dims {x.ambient_dim} and {y.ambient_dim}")
    prods = np.einsum("iab,jbc->ijac", x.elements, y.elements)
    return OperationalPartition(prods.reshape(-1, x.ambient_dim, x.ambient_dim))


def gram_correlation(elements: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """``rho[i, j] = Tr(omega x_j^* x_i)`` for a stack of operators, no validation."""
    k = elements.shape[0]
    left = (elements @ omega).reshape(k, -1)
    right = elements.conj().reshape(k, -1)
    rho = left @ right.T
    return (rho + rho.conj().T) / 2


def correlation_matrix(omega, x, validate: bool = True) -> np.ndarray:
    """The ``k x k`` correlation matrix with entries ``Tr(omega x_j^* x_i)``."""
    x = _as_partition(x)
    omega = validate_density_matrix(omega) if validate else as_matrix(omega)
    if omega.shape[0] != x.ambient_dim:
        raise ValidationError(f"state dim {omega.shape[0]} does not match partition dim {x.ambient_dim}")
    rho = gram_correlation(x.elements, omega)
    if validate:
        validate_density_matrix(rho, herm_tol=UNITY_TOL, trace_tol=UNITY_TOL, eig_tol=UNITY_TOL)
    return rho


def lemma_bound(omega, x) -> LemmaBound:
    """Compare ``S(rho_X)`` with ``S(omega) + ln dim``."""
    x = _as_partition(x)
    omega = validate_density_matrix(omega)
    s_x = von_neumann_entropy(correlation_matrix(omega, x), validate=False)
    bound = von_neumann_entropy(omega, validate=False) + np.log(x.ambient_dim)
    return LemmaBound(s_x, float(bound), bool(s_x <= bound + LEMMA_SLACK))


def normalize_operators(ops) -> OperationalPartition:
    """Turn any operators with invertible ``S = sum G_i^* G_i`` into a partition via ``G_i S^{-1/2}``."""
    ops = np.asarray(ops, dtype=complex)
    s = np.einsum("kji,kjl->il", ops.conj(), ops)
    vals, vecs = np.linalg.eigh((s + s.conj().T) / 2)
    if vals.min() <= 0:
        raise ValidationError("operators do not span: sum G^* G is singular")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.conj().T
    return OperationalPartition(ops @ inv_sqrt)


def random_partition(dim: int, size: int, rng: np.random.Generator) -> OperationalPartition:
    """Random size-``size`` partition on ``C^dim`` from complex Gaussian operators."""
    g = rng.standard_normal((size, dim, dim)) + 1j * rng.standard_normal((size, dim, dim))
    return normalize_operators(g)


def identity_partition(dim: int) -> OperationalPartition:
    return OperationalPartition(np.eye(dim, dtype=complex)[None])


# ---------------------------------------------------------------------------
# operator-list files: {"ambient_dim": n, "elements": [[[re, im], ...], ...]}
# each element is n*n [re, im] pairs in row-major order


def partition_to_json(x) -> dict:
    x = _as_partition(x)
    return {
        "ambient_dim": x.ambient_dim,
        "elements": [[[float(z.real), float(z.imag)] for z in e.ravel()] for e in x.elements],
    }


def partition_from_json(data: dict) -> OperationalPartition:
    try:
        n = int(data["ambient_dim"])
        raw = data["elements"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"operator-list file needs 'ambient_dim' and 'elements': {exc}") from None
    mats = []
    for idx, elem in enumerate(raw):
        arr = np.asarray(elem, dtype=float)
        # accept either a flat list of pairs or nested rows of pairs
        if arr.shape == (n * n, 2):
            arr = arr.reshape(n, n, 2)
        if arr.shape != (n, n, 2):
            raise ValidationError(f"element {idx} has shape {arr.shape}, expected {n * n} [re, im] pairs")
        mats.append(arr[..., 0] + 1j * arr[..., 1])
    return OperationalPartition(mats)


def load_partition(path: str | Path) -> OperationalPartition:
    with open(path) as fh:
        return partition_from_json(json.load(fh))


def save_partition(x, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(partition_to_json(x), fh)


def compose_all(parts: Sequence) -> OperationalPartition:
    out = _as_partition(parts[0])
    for p in parts[1:]:
        out = compose(out, p)
    return out
