"""Finite Markov chains with exact rational transition data.

Transition matrices are stored sparsely as one ``{column: Fraction}`` dict
per row. Probabilities stay exact; entropies are evaluated in floating
point only at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .fermion_shift import GicarPartition, build_gicar_partition

EXACT_SOLVE_CAP = 2**10
_SMALL_DENSE = 64
ITERATION_TOL = 1e-13


class ChainError(ValueError):
    """A chain fails a structural requirement (reducible, not lumpable, ...)."""


@dataclass(frozen=True, eq=False)
class FiniteMarkovChain:
    """Row-stochastic chain on labelled states with an initial measure."""

    states: tuple
    P: tuple  # tuple of {col: Fraction}
    mu0: tuple

    def __post_init__(self):
        n = len(self.states)
        if len(self.P) != n or len(self.mu0) != n:
            raise ChainError("states, P rows and mu0 must have equal length")
        rows = []
        for i, row in enumerate(self.P):
            row = {int(j): Fraction(v) for j, v in dict(row).items() if v != 0}
            if any(v < 0 for v in row.values()) or any(not 0 <= j < n for j in row):
                raise ChainError(f"row {i} has a negative entry or bad column")
            if sum(row.values()) != 1:
                raise ChainError(f"row {i} sums to {sum(row.values())}, not 1")
            rows.append(row)
        mu0 = tuple(Fraction(v) for v in self.mu0)
        if any(v < 0 for v in mu0) or sum(mu0) != 1:
            raise ChainError("initial measure must be a probability vector")
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "P", tuple(rows))
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @classmethod
    def from_matrix(cls, P, mu0=None, states=None) -> "FiniteMarkovChain":
        rows = [{j: Fraction(v) for j, v in enumerate(r) if v != 0} for r in P]
        n = len(rows)
        mu0 = [Fraction(1, n)] * n if mu0 is None else mu0
        return cls(tuple(range(n)) if states is None else tuple(states), tuple(rows), tuple(mu0))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, state: Hashable) -> int:
        return self._index[state]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_states, self.n_states))
        for i, row in enumerate(self.P):
            for j, v in row.items():
                out[i, j] = float(v)
        return out

    def step(self, mu: Sequence[Fraction]) -> list[Fraction]:
        out = [Fraction(0)] * self.n_states
        for i, m in enumerate(mu):
            if m:
                for j, v in self.P[i].items():
                    out[j] += m * v
        return out

    def row_entropies(self) -> list[float]:
        """Shannon entropy ``-sum_b P_ab ln P_ab`` of each row."""
        return [-sum(float(v) * math.log(v) for v in row.values()) for row in self.P]

    def to_json(self, stationary=None) -> dict:
        def frac(v: Fraction) -> dict:
            return {"num": v.numerator, "den": v.denominator}

        data = {
            "states": [_jsonable(s) for s in self.states],
            "P": [[{"to": j, "p": frac(v)} for j, v in sorted(row.items())] for row in self.P],
            "mu0": [frac(v) for v in self.mu0],
        }
        if stationary is not None:
            data["mu_inf"] = [frac(Fraction(v)) for v in stationary]
        return data


def _jsonable(label):
    if isinstance(label, tuple):
        return [_jsonable(v) for v in label]
    return label


# ---------------------------------------------------------------------------
# the GICAR chains


def build_fine_chain(partition: GicarPartition | int) -> FiniteMarkovChain:
    """Chain on partition elements: ``P(a -> b) = |c_b|^2 / 2`` when ``b`` matches ``a``.

    States are ``(phi, psi)`` pairs in the partition's element order; the
    initial measure is ``2^-M |c|^2``.
    """
    p = build_gicar_partition(partition) if isinstance(partition, int) else partition
    rows = []
    for i in range(p.size):
        rows.append({j: _half_coeff(p, j) for j in p.successors(i)})
    mu0 = tuple(p.coeff_sq(phi, psi) / 2**p.M for phi, psi in p.pairs)
    return FiniteMarkovChain(p.pairs, tuple(rows), mu0)


def _half_coeff(p: GicarPartition, j: int) -> Fraction:
    phi, psi = p.pairs[j]
    return p.coeff_sq(phi, psi) / 2


def _M_of(fine: FiniteMarkovChain) -> int:
    return len(fine.states[0][0])


def classify_states(fine: FiniteMarkovChain) -> tuple[frozenset, frozenset]:
    """Split states into ``A3`` (tail ``phi_2..phi_M`` constant) and ``A4`` (the rest)."""
    a3 = frozenset(i for i, (phi, _) in enumerate(fine.states) if len(set(phi[1:])) == 1)
    a4 = frozenset(range(fine.n_states)) - a3
    return a3, a4


def coarse_label(state) -> tuple[int, int, int]:
    """Coarse class ``(s, p, q)`` of a fine state: ``p = phi_1``, ``q = psi_M``, ``s`` = number of 2s."""
    phi, psi = state
    return (sum(psi) - len(psi), phi[0], psi[-1])


def coarse_classes(fine: FiniteMarkovChain) -> dict:
    classes: dict = {}
    for i, st in enumerate(fine.states):
        classes.setdefault(coarse_label(st), []).append(i)
    return {k: classes[k] for k in sorted(classes)}


class LumpCheck(NamedTuple):
    lumpable: bool
    witness: tuple | None  # (a, a', class index) with differing row sums


def check_lumpable(fine: FiniteMarkovChain, classes: Sequence[Sequence[int]]) -> LumpCheck:
    """Exact strong-lumpability test for a partition of the state indices."""
    classes = [list(c) for c in classes]
    owner = {}
    for ci, c in enumerate(classes):
        for a in c:
            if a in owner:
                raise ChainError(f"state {a} appears in two classes")
            owner[a] = ci
    if len(owner) != fine.n_states:
        raise ChainError("classes do not cover every state")

    def sums(a):
        out = [Fraction(0)] * len(classes)
        for b, v in fine.P[a].items():
            out[owner[b]] += v
        return out

    for c in classes:
        ref = sums(c[0])
        for a in c[1:]:
            other = sums(a)
            for c2, (x, y) in enumerate(zip(ref, other)):
                if x != y:
                    return LumpCheck(False, (c[0], a, c2))
    return LumpCheck(True, None)


def lump(fine: FiniteMarkovChain, classes: dict) -> FiniteMarkovChain:
    """Quotient chain on the given labelled classes; raises if not lumpable."""
    labels, members = list(classes), list(classes.values())
    check = check_lumpable(fine, members)
    if not check.lumpable:
        raise ChainError(f"partition is not lumpable, witness {check.witness}")
    owner = {a: ci for ci, c in enumerate(members) for a in c}
    rows = []
    for c in members:
        row: dict = {}
        for b, v in fine.P[c[0]].items():
            row[owner[b]] = row.get(owner[b], Fraction(0)) + v
        rows.append(row)
    mu0 = tuple(sum((fine.mu0[a] for a in c), Fraction(0)) for c in members)
    return FiniteMarkovChain(tuple(labels), tuple(rows), mu0)


def coarse_grain(fine: FiniteMarkovChain) -> FiniteMarkovChain:
    """Coarse chain on the classes ``E^s_{pq}``, ordered by ``(s, p, q)``."""
    return lump(fine, coarse_classes(fine))


# ---------------------------------------------------------------------------
# structure and stationary measure


def _graph(chain: FiniteMarkovChain) -> csr_matrix:
    rows, cols = [], []
    for i, row in enumerate(chain.P):
        for j in row:
            rows.append(i)
            cols.append(j)
    n = chain.n_states
    return csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def strongly_connected_components(chain: FiniteMarkovChain) -> list[list[int]]:
    n_comp, labels = connected_components(_graph(chain), directed=True, connection="strong")
    comps = [[] for _ in range(n_comp)]
    for i, c in enumerate(labels):
        comps[c].append(i)
    return sorted(comps)


def period(chain: FiniteMarkovChain) -> int:
    """Period of an irreducible chain (gcd of level differences along edges)."""
    level = {0: 0}
    queue = [0]
    for a in queue:
        for b in chain.P[a]:
            if b not in level:
                level[b] = level[a] + 1
                queue.append(b)
    g = 0
    for a, row in enumerate(chain.P):
        for b in row:
            g = math.gcd(g, level[a] + 1 - level[b])
    return g


class Structure(NamedTuple):
    irreducible: bool
    primitive: bool
    positive_diagonal: bool


def structure_checks(chain: FiniteMarkovChain) -> Structure:
    """Irreducibility by strong connectivity; primitivity as irreducible with period 1."""
    irreducible = len(strongly_connected_components(chain)) == 1
    positive_diag = any(i in row for i, row in enumerate(chain.P))
    primitive = irreducible and (positive_diag or period(chain) == 1)
    return Structure(irreducible, primitive, positive_diag)


def closed_classes(chain: FiniteMarkovChain) -> list[list[int]]:
    """Strongly connected components with no transition leaving them."""
    comps = strongly_connected_components(chain)
    out = []
    for comp in comps:
        members = set(comp)
        if all(j in members for a in comp for j in chain.P[a]):
            out.append(comp)
    return out


def _require_unichain(chain: FiniteMarkovChain) -> None:
    closed = closed_classes(chain)
    if len(closed) != 1:
        comps = strongly_connected_components(chain)
        raise ChainError(
            f"no unique invariant measure: {len(closed)} closed classes; "
            f"strongly connected components: {comps}"
        )


def _exact_solve(chain: FiniteMarkovChain) -> list[Fraction]:
    """Gaussian elimination on ``(P^T - I) mu = 0`` with the last row replaced by ``sum mu = 1``."""
    n = chain.n_states
    a = [[Fraction(0)] * (n + 1) for _ in range(n)]
    for i, row in enumerate(chain.P):
        for j, v in row.items():
            a[j][i] += v
    for i in range(n):
        a[i][i] -= 1
    a[n - 1] = [Fraction(1)] * n + [Fraction(1)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        pv = a[col][col]
        a[col] = [v / pv for v in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [a[i][n] for i in range(n)]


def _float_solve(chain: FiniteMarkovChain) -> np.ndarray:
    n = chain.n_states
    a = chain.dense().T - np.eye(n)
    a[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(a, b)


def stationary_residual(chain: FiniteMarkovChain, mu) -> Fraction | float:
    """``|| mu P - mu ||_1``, exact when ``mu`` is rational."""
    nxt = chain.step(mu)
    return sum(abs(x - y) for x, y in zip(nxt, mu))


def stationary_measure(chain: FiniteMarkovChain, denominator_limit: int = 10**9) -> list:
    """Unique invariant measure of a chain with a single closed class.

    Irreducible chains qualify; transient states get zero mass.

    Small chains are solved by exact elimination. Larger ones are solved in
    floating point, rounded to nearby rationals and accepted only if
    ``mu P = mu`` holds exactly; otherwise exact elimination runs (up to
    ``EXACT_SOLVE_CAP`` states) before falling back to a float iteration
    with ``||mu P - mu||_1 <= 1e-13``.
    """
    _require_unichain(chain)
    n = chain.n_states
    if n <= _SMALL_DENSE:
        return _exact_solve(chain)
    approx = _float_solve(chain)
    guess = [Fraction(float(v)).limit_denominator(denominator_limit) for v in approx]
    if sum(guess) == 1 and all(v >= 0 for v in guess) and stationary_residual(chain, guess) == 0:
        return guess
    if n <= EXACT_SOLVE_CAP:
        return _exact_solve(chain)
    P = chain.dense()
    mu = np.clip(approx, 0, None)
    mu /= mu.sum()
    for _ in range(100000):
        nxt = mu @ P
        if np.abs(nxt - mu).sum() <= ITERATION_TOL:
            return list(nxt / nxt.sum())
        mu = 0.5 * (mu + nxt)  # lazy step avoids periodic oscillation
    raise ChainError("stationary iteration did not reach the residual tolerance")


def class_mass(mu, members) -> Fraction:
    return sum((mu[i] for i in members), Fraction(0))


# ---------------------------------------------------------------------------
# entropies


def entropy_rate(chain: FiniteMarkovChain, mu=None) -> float:
    """``-sum_a mu_inf(a) sum_b P_ab ln P_ab``.

    Needs a single closed class, not primitivity: the Cesaro averages of
    ``mu_n`` converge to ``mu_inf`` for such chains, so the rate is well
    defined.
    """
    mu = stationary_measure(chain) if mu is None else mu
    return float(sum(float(m) * h for m, h in zip(mu, chain.row_entropies())))


def _common_denominator(chain: FiniteMarkovChain) -> int:
    den = 1
    for row in chain.P:
        for v in row.values():
            den = math.lcm(den, v.denominator)
    return den


def finite_n_entropy(chain: FiniteMarkovChain, n_steps: int) -> float:
    """Shannon entropy of the path distribution ``(a_0, ..., a_N)``.

    Uses ``H(mu_0) + sum_{n<N} sum_a mu_n(a) H(P_a.)``. The measures
    ``mu_n`` are propagated exactly as integer vectors over the common
    denominator ``D0 * L**n``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    h0 = -sum(float(m) * math.log(m) for m in chain.mu0 if m)
    row_h = chain.row_entropies()
    big_l = _common_denominator(chain)
    den = 1
    for m in chain.mu0:
        den = math.lcm(den, m.denominator)
    vec = [m.numerator * (den // m.denominator) for m in chain.mu0]
    int_rows = [[(j, v.numerator * (big_l // v.denominator)) for j, v in row.items()] for row in chain.P]
    live = [i for i, h in enumerate(row_h) if h > 0]
    total = h0
    for _ in range(n_steps):
        # integer division is correctly rounded; accumulate sum_a mu_n(a) H_a
        total += sum(vec[i] / den * row_h[i] for i in live if vec[i])
        nxt = [0] * chain.n_states
        for i, v in enumerate(vec):
            if v:
                for j, w in int_rows[i]:
                    nxt[j] += v * w
        vec = nxt
        den *= big_l
    return total


def path_entropy_bruteforce(chain: FiniteMarkovChain, n_steps: int) -> float:
    """Shannon entropy of the path distribution by explicit enumeration."""
    total = 0.0
    paths = [((i,), m) for i, m in enumerate(chain.mu0) if m]
    for _ in range(n_steps):
        paths = [(p + (j,), m * v) for p, m in paths for j, v in chain.P[p[-1]].items()]
    for _, m in paths:
        total -= float(m) * math.log(m)
    return total


def closed_form_rate(M: int) -> float:
    """``(2 - 1/M) ln 2``."""
    if M < 2:
        raise ValueError("M must be at least 2")
    return (2 - 1 / M) * math.log(2)


def coarse_path_probabilities(fine: FiniteMarkovChain, coarse: FiniteMarkovChain, max_len: int):
    """Yield ``(class path, coarse probability, summed fine probability)`` for every class path
    of length ``1..max_len`` with a nonzero value on either side."""
    members = [[fine.index(s) for s in fine.states if coarse_label(s) == lab] for lab in coarse.states]
    n_c = coarse.n_states

    def extend(path, coarse_p, fine_vec):
        yield path, coarse_p, sum(fine_vec.values(), Fraction(0))
        if len(path) == max_len:
            return
        last = path[-1]
        for c2 in range(n_c):
            cp = coarse_p * coarse.P[last].get(c2, Fraction(0))
            nv: dict = {}
            allowed = set(members[c2])
            for a, m in fine_vec.items():
                for b, v in fine.P[a].items():
                    if b in allowed:
                        nv[b] = nv.get(b, Fraction(0)) + m * v
            if cp == 0 and not any(nv.values()):
                continue
            yield from extend(path + (c2,), cp, nv)

    for c in range(n_c):
        vec = {a: fine.mu0[a] for a in members[c] if fine.mu0[a]}
        yield from extend((c,), coarse.mu0[c], vec)


def successor_labels(coarse: FiniteMarkovChain, label) -> set:
    i = coarse.index(label)
    return {coarse.states[j] for j in coarse.P[i]}


def expected_coarse_successors(M: int, label) -> set | None:
    """Successor classes from the published transition tables.

    The boundary rows are checked first so that ``M = 2`` resolves to them.
    The source ``E^{M-1}_{12}`` of the upper boundary row is the mirror
    image of ``E^1_{21}`` in the lower one.
    """
    s, p, q = label
    if label in {(0, 1, 1), (1, 2, 1), (1, 2, 2)}:
        return {(0, 1, 1), (1, 1, 2), (1, 2, 2)}
    if label in {(M, 2, 2), (M - 1, 1, 1), (M - 1, 1, 2)}:
        return {(M, 2, 2), (M - 1, 1, 1), (M - 1, 2, 1)}
    if (2 <= s <= M - 2) or (s == 1 and p == 1) or (s == M - 1 and p == 2):
        if p == 1:
            return {(s, 1, 1), (s, 2, 1), (s + 1, 1, 2), (s + 1, 2, 2)}
        return {(s - 1, 1, 1), (s - 1, 2, 1), (s, 1, 2), (s, 2, 2)}
    return None


def coarse_in_a3(M: int, label) -> bool:
    """Whether a coarse class consists of ``A3`` states (constant tail)."""
    s, p, _ = label
    return s + 1 - p in (0, M - 1)


def gicar_chains(M: int, tails: dict | None = None) -> tuple[FiniteMarkovChain, FiniteMarkovChain]:
    fine = build_fine_chain(build_gicar_partition(M, tails))
    return fine, coarse_grain(fine)

