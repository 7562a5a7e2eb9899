"""Shift on the Fermion chain: matrix units, gauge invariance and GICAR partitions.

Matrix units ``E^{[m,n]}_{phi psi}`` are handled symbolically; strings use the
symbols 1 and 2. The dense realisation goes through explicit CAR generators
``a_k`` in the Jordan-Wigner representation, with local basis order
(occupied, empty) so that ``E_11 = a^* a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .quantum_core import DEFAULT_DENSE_CAP, CapExceededError, ValidationError

DEFAULT_PATH_CAP = 2**16
_HALF = Fraction(1, 2)


@dataclass(frozen=True)
class MatrixUnit:
    """``coeff * Z_{j1} Z_{j2} ... E^{[m,n]}_{phi psi}``.

    ``parity_sites`` lists sites carrying a left factor ``Z_j = 2 a_j^* a_j - 1``.
    It is empty for every unit produced by gauge-invariant operations; a
    non-empty value marks the prefix that the shift creates on units with
    nonzero gauge charge.
    """

    interval: tuple[int, int]
    phi: tuple[int, ...]
    psi: tuple[int, ...]
    coeff: complex = 1.0
    parity_sites: tuple[int, ...] = field(default=())

    def __post_init__(self):
        m, n = self.interval
        if m < 1 or n < m:
            raise ValidationError(f"invalid interval {self.interval}")
        length = n - m + 1
        phi, psi = tuple(int(v) for v in self.phi), tuple(int(v) for v in self.psi)
        if len(phi) != length or len(psi) != length:
            raise ValidationError(f"strings must have length {length} for interval {self.interval}")
        if not set(phi + psi) <= {1, 2}:
            raise ValidationError("matrix unit strings use the symbols 1 and 2 only")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "parity_sites", tuple(sorted(self.parity_sites)))

    @property
    def length(self) -> int:
        return self.interval[1] - self.interval[0] + 1

    @property
    def marked(self) -> bool:
        return bool(self.parity_sites)

    def adjoint(self) -> "MatrixUnit":
        if self.marked:
            raise ValidationError("adjoint of a parity-marked unit is not a matrix unit")
        return MatrixUnit(self.interval, self.psi, self.phi, np.conj(self.coeff))

    def scaled(self, c: complex) -> "MatrixUnit":
        return MatrixUnit(self.interval, self.phi, self.psi, self.coeff * c, self.parity_sites)


def gauge_charge(u: MatrixUnit) -> int:
    """``sum(psi) - sum(phi)``; the gauge automorphism multiplies ``u`` by ``lambda**charge``."""
    return sum(u.psi) - sum(u.phi)


def matrix_unit_product(u: MatrixUnit, v: MatrixUnit) -> MatrixUnit | None:
    """``E_{phi psi} E_{phi' psi'} = delta_{psi phi'} E_{phi psi'}``; ``None`` encodes zero."""
    if u.interval != v.interval:
        raise ValidationError(f"interval mismatch {u.interval} vs {v.interval}; pad first")
    if u.marked or v.marked:
        raise ValidationError("parity-marked units are not closed under the matrix-unit product")
    if u.psi != v.phi:
        return None
    return MatrixUnit(u.interval, u.phi, v.psi, u.coeff * v.coeff)


def pad_to_window(u: MatrixUnit, window: tuple[int, int]) -> list[MatrixUnit]:
    """Expand ``u`` on a larger window, writing each added identity as ``E_11 + E_22``."""
    lo, hi = window
    m, n = u.interval
    if lo > m or hi < n:
        raise ValidationError(f"window {window} does not contain {u.interval}")
    left, right = m - lo, hi - n
    out = []
    for pad in itertools.product((1, 2), repeat=left + right):
        head, tail = pad[:left], pad[left:]
        out.append(MatrixUnit(window, head + u.phi + tail, head + u.psi + tail, u.coeff, u.parity_sites))
    return out


def shift_matrix_unit(u: MatrixUnit) -> MatrixUnit:
    """Image under the shift ``a_k -> a_{k+1}``.

    Each off-diagonal factor ``E_12``/``E_21`` picks up ``Z_1`` from its parity
    string, so the result is ``Z_1^{charge} E^{[m+1,n+1]}``. Gauge-invariant
    units map to plain matrix units.
    """
    sites = [s + 1 for s in u.parity_sites]
    if gauge_charge(u) % 2:
        sites = [1] + sites
    m, n = u.interval
    return MatrixUnit((m + 1, n + 1), u.phi, u.psi, u.coeff, tuple(sites))


def tracial_value(u: MatrixUnit) -> complex:
    """Normalized trace: ``coeff * delta_{phi psi} * 2**(-length)`` for unmarked units."""
    if u.phi != u.psi:
        return 0.0
    val = complex(u.coeff) * 2.0 ** (-u.length)
    m, _ = u.interval
    for s in u.parity_sites:
        if not m <= s <= u.interval[1]:
            return 0.0  # Z on an untouched site is traceless
        val *= 1 if u.phi[s - m] == 1 else -1
    return val


def gicar_decomposition(n: int) -> list[int]:
    """Block sizes ``C(n, s)`` of the gauge-invariant algebra on ``n`` sites."""
    if n < 1:
        raise ValidationError("n must be positive")
    return [comb(n, s) for s in range(n + 1)]


# ---------------------------------------------------------------------------
# dense Jordan-Wigner realisation

_Z = np.diag([1.0, -1.0]).astype(complex)
_LOWER = np.array([[0, 0], [1, 0]], dtype=complex)  # |empty><occupied|


@lru_cache(maxsize=16)
def car_generators(n_sites: int) -> tuple[np.ndarray, ...]:
    """Annihilators ``a_1 .. a_n`` on ``2**n`` dimensions (read-only)."""
    check = 2**n_sites
    if check > DEFAULT_DENSE_CAP:
        raise CapExceededError(f"2^{n_sites} = {check} exceeds dense cap {DEFAULT_DENSE_CAP}")
    out = []
    for k in range(n_sites):
        ops = [_Z] * k + [_LOWER] + [np.eye(2)] * (n_sites - k - 1)
        a = np.ones((1, 1), dtype=complex)
        for op in ops:
            a = np.kron(a, op)
        a.setflags(write=False)
        out.append(a)
    return tuple(out)


def _site_units(gens) -> list[dict]:
    """``E^{(k)}_{ab}`` for each site from the generators via the parity strings ``V_k``."""
    dim = gens[0].shape[0]
    eye = np.eye(dim, dtype=complex)
    units, v = [], eye
    for a in gens:
        ad = a.conj().T
        units.append({(2, 1): v @ a, (1, 2): v @ ad, (1, 1): ad @ a, (2, 2): a @ ad})
        v = v @ (2 * ad @ a - eye)
    return units


@lru_cache(maxsize=16)
def _cached_site_units(n_sites: int) -> list[dict]:
    return _site_units(car_generators(n_sites))


def build_from_generators(u: MatrixUnit, gens) -> np.ndarray:
    """Realise ``u`` from a list of annihilators, ``gens[j - 1]`` playing ``a_j``.

    Passing the shifted list ``(a_2, a_3, ...)`` realises the image of ``u``
    under the shift directly from the defining substitution.
    """
    n = max([u.interval[1]] + list(u.parity_sites))
    if n > len(gens):
        raise ValidationError(f"unit on {u.interval} needs {n} generators, got {len(gens)}")
    gens = list(gens)
    return _assemble(u, _site_units(gens), gens[0].shape[0])


def _assemble(u: MatrixUnit, units, dim: int) -> np.ndarray:
    m, n = u.interval
    out = np.eye(dim, dtype=complex)
    for k in range(m, n + 1):
        out = out @ units[k - 1][(u.phi[k - m], u.psi[k - m])]
    for s in reversed(u.parity_sites):
        z = 2 * units[s - 1][(1, 1)] - np.eye(dim)
        out = z @ out
    return u.coeff * out


def jw_dense(u: MatrixUnit, n_sites: int, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense ``2**n_sites`` matrix of ``u`` built from CAR generators."""
    if 2**n_sites > cap:
        raise CapExceededError(f"2^{n_sites} exceeds dense cap {cap}")
    top = max([u.interval[1]] + list(u.parity_sites))
    if top > n_sites:
        raise ValidationError(f"unit reaches site {top} beyond {n_sites} sites")
    return _assemble(u, _cached_site_units(n_sites), 2**n_sites)


# ---------------------------------------------------------------------------
# GICAR partitions


def _count2(s) -> int:
    return sum(1 for v in s if v == 2)


def required_tail_twos(phi1: int, psi) -> int:
    """Number of 2s the tail ``(phi_2..phi_M)`` must hold for gauge invariance."""
    return _count2(psi) + 1 - phi1


def canonical_tail(phi1: int, psi, M: int) -> tuple[int, ...] | None:
    """Tail with the required 2s first, then 1s; ``None`` if no tail is gauge-compatible."""
    t = required_tail_twos(phi1, psi)
    if not 0 <= t <= M - 1:
        return None
    return (2,) * t + (1,) * (M - 1 - t)


def random_tail_map(M: int, rng: np.random.Generator) -> dict:
    """A random valid tail map, for checking independence from the canonical choice."""
    tails = {}
    for psi in itertools.product((1, 2), repeat=M):
        for phi1 in (1, 2):
            t = required_tail_twos(phi1, psi)
            if 0 <= t <= M - 1:
                pos = rng.choice(M - 1, size=t, replace=False)
                tail = [1] * (M - 1)
                for p in pos:
                    tail[p] = 2
                tails[(phi1, psi)] = tuple(tail)
    return tails


@dataclass(frozen=True, eq=False)
class GicarPartition:
    """Gauge-invariant partition ``{c_{phi psi} E^{[1,M]}_{phi psi} : (phi, psi) in I_0}``.

    ``tails`` maps ``(phi_1, psi)`` to ``(phi_2, ..., phi_M)``; keys absent
    from it have no element. Elements are ordered by ``(psi, phi_1)`` with
    ``psi`` read as a binary string.
    """

    M: int
    tails: dict

    def __post_init__(self):
        if self.M < 2:
            raise ValidationError("GICAR partition needs M >= 2")
        for (phi1, psi), tail in self.tails.items():
            phi = (phi1,) + tuple(tail)
            if len(psi) != self.M or len(phi) != self.M:
                raise ValidationError(f"entry {(phi1, psi)} has wrong length for M={self.M}")
            if sum(phi) != sum(psi):
                raise ValidationError(f"entry {(phi, psi)} is not gauge invariant")
        keys = sorted(self.tails, key=lambda key: (key[1], key[0]))
        pairs = tuple(((k[0],) + tuple(self.tails[k]), tuple(k[1])) for k in keys)
        object.__setattr__(self, "_pairs", pairs)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(pairs)})
        # unitality: sum over phi of |c|^2 is one for every psi
        for psi in itertools.product((1, 2), repeat=self.M):
            total = sum(self.coeff_sq(phi, q) for phi, q in pairs if q == psi)
            if total != 1:
                raise ValidationError(f"unitality fails at psi={psi}: sum |c|^2 = {total}")

    @property
    def pairs(self) -> tuple:
        """Index set ``I_0`` as ordered ``(phi, psi)`` pairs."""
        return self._pairs

    @property
    def size(self) -> int:
        return len(self._pairs)

    def index(self, phi, psi) -> int:
        return self._index[(tuple(phi), tuple(psi))]

    def coeff_sq(self, phi, psi) -> Fraction:
        """``|c_{phi psi}|^2``: 1 on the all-1 and all-2 ``psi``, 1/2 otherwise."""
        return Fraction(1) if len(set(psi)) == 1 else _HALF

    def coeff(self, phi, psi) -> float:
        return float(np.sqrt(float(self.coeff_sq(phi, psi))))

    def units(self) -> list[MatrixUnit]:
        return [MatrixUnit((1, self.M), phi, psi, self.coeff(phi, psi)) for phi, psi in self._pairs]

    def dense_elements(self, n_sites: int | None = None) -> np.ndarray:
        n_sites = self.M if n_sites is None else n_sites
        return np.stack([jw_dense(u, n_sites) for u in self.units()])

    def successors(self, i: int) -> list[int]:
        """Elements that may follow element ``i`` in a refinement (matching rule)."""
        phi, _ = self._pairs[i]
        head = phi[1:]
        out = []
        for last in (1, 2):
            psi2 = head + (last,)
            for phi1 in (1, 2):
                j = self._index_of(phi1, psi2)
                if j is not None:
                    out.append(j)
        return sorted(out)

    def _index_of(self, phi1: int, psi) -> int | None:
        tail = self.tails.get((phi1, tuple(psi)))
        if tail is None:
            return None
        return self._index[((phi1,) + tuple(tail), tuple(psi))]

    def matches(self, i: int, j: int) -> bool:
        return self._pairs[i][0][1:] == self._pairs[j][1][:-1]


def build_gicar_partition(M: int, tails: dict | None = None) -> GicarPartition:
    """GICAR partition with the canonical tail map (or the given one)."""
    if M < 2:
        raise ValidationError("GICAR partition needs M >= 2")
    if tails is None:
        tails = {}
        for psi in itertools.product((1, 2), repeat=M):
            for phi1 in (1, 2):
                tail = canonical_tail(phi1, psi, M)
                if tail is not None:
                    tails[(phi1, psi)] = tail
    return GicarPartition(M, dict(tails))


def refined_path_probability(p: GicarPartition, path) -> Fraction:
    """Exact probability ``2^-(M+N) prod |c|^2`` of a path of ``N + 1`` elements; 0 if unmatched."""
    path = list(path)
    if not path:
        raise ValidationError("path needs at least one element")
    for a, b in zip(path, path[1:]):
        if not p.matches(a, b):
            return Fraction(0)
    prob = Fraction(1, 2 ** (p.M + len(path) - 1))
    for i in path:
        phi, psi = p.pairs[i]
        prob *= p.coeff_sq(phi, psi)
    return prob


def valid_paths(p: GicarPartition, n_steps: int, cap: int = DEFAULT_PATH_CAP):
    """All matched index paths of length ``n_steps + 1`` in lexicographic order."""
    paths = [(i,) for i in range(p.size)]
    for _ in range(n_steps):
        paths = [q + (j,) for q in paths for j in p.successors(q[-1])]
        if len(paths) > cap:
            raise CapExceededError(f"more than {cap} refined paths")
    return paths


def refined_correlation_symbolic(p: GicarPartition, n_steps: int, cap: int = DEFAULT_PATH_CAP) -> dict:
    """Diagonal of ``rho_N`` as ``{path: Fraction}``; all off-diagonal entries vanish."""
    return {path: refined_path_probability(p, path) for path in valid_paths(p, n_steps, cap)}


def refined_unit(p: GicarPartition, path) -> MatrixUnit | None:
    """Symbolic refined element ``T^N(x_{j_N}) ... T(x_{j_1}) x_{j_0}`` on ``[1, M + N]``."""
    units = p.units()
    n = len(path) - 1
    window = (1, p.M + n)
    acc = None
    for step, j in enumerate(path):
        u = units[j]
        for _ in range(step):
            u = shift_matrix_unit(u)
        terms = pad_to_window(u, window)
        if acc is None:
            acc = terms
            continue
        # later steps multiply from the left
        acc = [w for t in terms for s in acc if (w := matrix_unit_product(t, s)) is not None]
    if not acc:
        return None
    if len(acc) != 1:
        raise AssertionError(f"refined element for {path} is a sum of {len(acc)} units")
    return acc[0]


def brute_force_correlation(
    p: GicarPartition,
    n_steps: int,
    cap_dense: int = DEFAULT_DENSE_CAP,
    cap_corr: int = DEFAULT_DENSE_CAP,
) -> np.ndarray:
    """Dense ``rho_N`` over all ``k^(N+1)`` index tuples, via JW matrices on ``M + N`` sites.

    Entry ``(i, j)`` is ``2^-(M+N) Tr(xi_j^* xi_i)``; tuples are ordered
    lexicographically with ``j_0`` slowest.
    """
    n_sites = p.M + n_steps
    dim = 2**n_sites
    k = p.size ** (n_steps + 1)
    if dim > cap_dense or k > cap_corr:
        raise CapExceededError(f"dense oracle needs dim {dim} (cap {cap_dense}) and {k} elements (cap {cap_corr})")
    units = p.units()
    shifted = []
    for step in range(n_steps + 1):
        mats = []
        for u in units:
            for _ in range(step):
                u = shift_matrix_unit(u)
            mats.append(jw_dense(u, n_sites, cap_dense))
        shifted.append(np.stack(mats))
    xi = shifted[0]
    for step in range(1, n_steps + 1):
        xi = np.einsum("bij,ajk->abik", shifted[step], xi).reshape(-1, dim, dim)
    flat = xi.reshape(k, -1)
    rho = flat @ flat.conj().T / dim
    return (rho + rho.conj().T) / 2


def path_flat_index(p: GicarPartition, path) -> int:
    return int(np.ravel_multi_index(tuple(path), (p.size,) * len(path)))
