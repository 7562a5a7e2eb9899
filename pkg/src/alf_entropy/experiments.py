"""Experiment runners behind the command line: spin, fermion and verify."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import fermion_shift as fs
from . import markov_reduction as mr
from . import partitions as pt
from . import spin_shift as ss
from .quantum_core import (
    DEFAULT_DENSE_CAP,
    CapExceededError,
    ValidationError,
    binary_entropy,
    random_density_matrix,
    shannon_entropy,
    von_neumann_entropy,
)

CSV_DIGITS = 12


@dataclass
class ExperimentConfig:
    mode: str = "spin"  # spin | fermion | verify
    d: int = 2
    site_spectrum: tuple[float, ...] | None = None  # uniform when None
    partition: str = "fourier"  # "fourier" or a path to an operator-list file
    M: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    n_max: int = 4
    fermion_mode: str = "symbolic"  # symbolic | dense | both
    cap_dense: int = DEFAULT_DENSE_CAP
    cap_paths: int = fs.DEFAULT_PATH_CAP
    tol: float = 1e-8
    seed: int = 0
    output_path: str | None = None
    output_format: str = "csv"

    def __post_init__(self):
        if self.mode not in ("spin", "fermion", "verify"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.fermion_mode not in ("symbolic", "dense", "both"):
            raise ValidationError(f"unknown fermion mode {self.fermion_mode!r}")
        if self.output_format not in ("csv", "json"):
            raise ValidationError(f"unknown output format {self.output_format!r}")
        if self.d < 2:
            raise ValidationError("d must be at least 2")
        if self.site_spectrum is None:
            self.site_spectrum = tuple([1.0 / self.d] * self.d)
        probs = tuple(float(v) for v in self.site_spectrum)
        if len(probs) != self.d:
            raise ValidationError(f"site spectrum has {len(probs)} entries, d = {self.d}")
        if min(probs) < 0 or abs(sum(probs) - 1) > 1e-10:
            raise ValidationError("site spectrum must be a probability vector")
        self.site_spectrum = probs
        self.M = tuple(int(m) for m in self.M)
        if any(m < 2 for m in self.M):
            raise ValidationError("every M must be at least 2")
        if self.n_max < 1:
            raise ValidationError("N_max must be at least 1")
        if self.cap_dense < 4 or self.cap_paths < 1:
            raise ValidationError("caps are below the smallest feasible sizes")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ResultTable:
    """Rows of named values; boolean columns ending in ``_ok`` are pass flags."""

    title: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)}")
        self.rows.append(row)

    @property
    def flag_columns(self) -> list[str]:
        return [c for c in self.columns if c.endswith("_ok")]

    def failures(self) -> list[tuple[int, str]]:
        return [(i, c) for i, r in enumerate(self.rows) for c in self.flag_columns if r.get(c) is False]

    @property
    def passed(self) -> bool:
        return not self.failures()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_csv_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        data = {
            "title": self.title,
            "columns": self.columns,
            "rows": [{c: _json_cell(r.get(c)) for c in self.columns} for r in self.rows],
            "passed": self.passed,
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    def render(self, fmt: str) -> str:
        return self.to_csv() if fmt == "csv" else self.to_json()

    def write(self, path: str | Path, fmt: str) -> None:
        Path(path).write_text(self.render(fmt))


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (Fraction, float, np.floating)):
        return format(float(v), f".{CSV_DIGITS}g")
    return str(v)


def _json_cell(v):
    if isinstance(v, Fraction):
        return {"num": v.numerator, "den": v.denominator}
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------------------
# spin


def _spin_partition(config: ExperimentConfig) -> ss.LocalPartition:
    if config.partition == "fourier":
        return ss.fourier_partition(config.d)
    return ss.LocalPartition.from_partition(pt.load_partition(config.partition), config.d)


def _spin_feasible(x: ss.LocalPartition, config: ExperimentConfig) -> None:
    for n in range(1, config.n_max + 1):
        k = x.size**n
        dim = x.d ** (x.M + n - 1)
        dense_needed = x.factors is None
        if k > config.cap_dense or (dense_needed and dim > config.cap_dense):
            raise CapExceededError(
                f"smallest infeasible N is {n}: refined size {k}, ambient dim {dim}, cap {config.cap_dense}"
            )
        if dense_needed and k * dim * dim > ss.STORAGE_CAP:
            raise CapExceededError(f"smallest infeasible N is {n}: {k} elements of dim {dim} exceed storage")


def run_spin(config: ExperimentConfig) -> ResultTable:
    """Finite-N entropies for the spin shift with closed forms and bound sandwich."""
    system = ss.SpinChainSystem.from_spectrum(config.site_spectrum)
    x = _spin_partition(config)
    _spin_feasible(x, config)
    fourier = config.partition == "fourier"
    log_d = math.log(config.d)
    sigma = system.entropy_density
    table = ResultTable(
        "spin",
        [
            "N", "S_rho_N", "S_per_step", "increment",
            "S_reduced_closed", "S_reduced_dense", "lower_bound", "lower_per_step",
            "upper_bound", "rate_bound", "reduced_ok", "lower_ok", "upper_ok",
        ],
    )
    prev = 0.0
    for n in range(1, config.n_max + 1):
        rho = ss.refined_correlation(system, x, n, "auto", config.cap_dense, config.cap_dense)
        s = von_neumann_entropy(rho, validate=False)
        upper = ss.window_upper_bound(system, x.M, n)
        row = dict(
            N=n, S_rho_N=s, S_per_step=s / n, increment=s - prev,
            upper_bound=upper, rate_bound=sigma + log_d,
            upper_ok=bool(s <= upper + config.tol),
        )
        if fourier and n >= 2:
            closed = ss.reduced_refined_entropy(system, n)
            reduced, _ = ss.split_fourier_correlation(rho, config.d, n)
            dense = von_neumann_entropy(reduced, validate=False)
            lower = closed - 2 * log_d
            row.update(
                S_reduced_closed=closed, S_reduced_dense=dense,
                lower_bound=lower, lower_per_step=lower / n,
                reduced_ok=bool(abs(dense - closed) <= config.tol),
                lower_ok=bool(s >= lower - config.tol),
            )
        table.add(**row)
        prev = s
    return table


# ---------------------------------------------------------------------------
# fermion


def dense_symbolic_agreement(p: fs.GicarPartition, n_steps: int, cap_dense: int, cap_paths: int) -> dict:
    """Compare the dense oracle ``rho_N`` with the symbolic diagonal and the chain entropy."""
    rho = fs.brute_force_correlation(p, n_steps, cap_dense, cap_dense)
    sym = fs.refined_correlation_symbolic(p, n_steps, cap_paths)
    diag = np.zeros(rho.shape[0])
    for path, prob in sym.items():
        diag[fs.path_flat_index(p, path)] = float(prob)
    off = rho - np.diag(np.diag(rho))
    s_dense = von_neumann_entropy(rho, validate=False)
    s_chain = mr.finite_n_entropy(mr.build_fine_chain(p), n_steps)
    return {
        "offdiag": float(np.abs(off).max()),
        "diag_err": float(np.abs(np.diag(rho).real - diag).max()),
        "s_dense": s_dense,
        "s_chain": s_chain,
        "s_paths": shannon_entropy(np.array([float(v) for v in sym.values()])),
    }


def run_fermion(config: ExperimentConfig) -> ResultTable:
    """Per-M entropy rates of the GICAR chains against ``(2 - 1/M) ln 2``."""
    table = ResultTable(
        "fermion",
        [
            "M", "fine_states", "coarse_states", "mu_A3", "mu_A4", "rate_fine", "rate_coarse",
            "closed_form", "upper_bound", "dense_max_N", "dense_max_offdiag", "dense_max_entropy_err",
            "rate_ok", "below_bound_ok", "mu_ok", "counts_ok", "lumpable_ok", "primitive_ok", "dense_ok",
        ],
    )
    upper = 2 * math.log(2)
    for m in config.M:
        p = fs.build_gicar_partition(m)
        fine = mr.build_fine_chain(p)
        coarse = mr.coarse_grain(fine)
        mu_f = mr.stationary_measure(fine)
        mu_c = mr.stationary_measure(coarse)
        a3, a4 = mr.classify_states(fine)
        mu3, mu4 = mr.class_mass(mu_f, a3), mr.class_mass(mu_f, a4)
        rf, rc = mr.entropy_rate(fine, mu_f), mr.entropy_rate(coarse, mu_c)
        closed = mr.closed_form_rate(m)
        st = mr.structure_checks(coarse)
        row = dict(
            M=m, fine_states=fine.n_states, coarse_states=coarse.n_states,
            mu_A3=mu3, mu_A4=mu4, rate_fine=rf, rate_coarse=rc,
            closed_form=closed, upper_bound=upper,
            rate_ok=bool(abs(rf - closed) <= 1e-10 and abs(rc - closed) <= 1e-10),
            below_bound_ok=bool(rf < upper),
            mu_ok=bool(mu3 == Fraction(2, m) and mu4 == Fraction(m - 2, m)),
            counts_ok=bool(fine.n_states == 2 ** (m + 1) - 2 and coarse.n_states == 4 * m - 2),
            lumpable_ok=mr.check_lumpable(fine, list(mr.coarse_classes(fine).values())).lumpable,
            primitive_ok=bool(st.irreducible and st.primitive),
        )
        if config.fermion_mode in ("dense", "both"):
            worst_off, worst_s, max_n = 0.0, 0.0, 0
            for n in range(1, config.n_max + 1):
                if 2 ** (m + n) > config.cap_dense or p.size ** (n + 1) > config.cap_dense:
                    break
                res = dense_symbolic_agreement(p, n, config.cap_dense, config.cap_paths)
                worst_off = max(worst_off, res["offdiag"], res["diag_err"])
                worst_s = max(worst_s, abs(res["s_dense"] - res["s_chain"]))
                max_n = n
            row.update(
                dense_max_N=max_n, dense_max_offdiag=worst_off, dense_max_entropy_err=worst_s,
                dense_ok=bool(max_n > 0 and worst_off <= 1e-12 and worst_s <= 1e-8) if max_n else None,
            )
        table.add(**row)
    return table


def fermion_chain_report(M: int) -> dict:
    """Fine and coarse chain descriptions with exact stationary measures."""
    fine, coarse = mr.gicar_chains(M)
    return {
        "M": M,
        "fine": fine.to_json(mr.stationary_measure(fine)),
        "coarse": coarse.to_json(mr.stationary_measure(coarse)),
    }


# ---------------------------------------------------------------------------
# verify


def _suite(table: ResultTable, name: str, passed: bool, deviation: float, detail: str = "") -> None:
    table.add(suite=name, suite_ok=bool(passed), worst_deviation=float(deviation), detail=detail)


def lemma_suite(seed: int, trials: int = 50) -> tuple[bool, float, int]:
    """Random ``(omega, X)`` pairs; returns (all satisfied, worst S(rho_X) - bound, count)."""
    rng = np.random.default_rng(seed)
    worst, ok = -np.inf, True
    for _ in range(trials):
        dim = int(rng.integers(2, 9))
        size = int(rng.integers(1, 9))
        rank = int(rng.integers(1, dim + 1))
        omega = random_density_matrix(dim, rng, rank)
        res = pt.lemma_bound(omega, pt.random_partition(dim, size, rng))
        worst = max(worst, res.s_rho_x - res.bound)
        ok &= res.satisfied
    return bool(ok), float(worst), trials


def car_relation_deviation(n_sites: int) -> float:
    gens = fs.car_generators(n_sites)
    eye = np.eye(2**n_sites)
    worst = 0.0
    for k, l in itertools.product(range(n_sites), repeat=2):
        a, b = gens[k], gens[l]
        worst = max(
            worst,
            float(np.abs(a @ b + b @ a).max()),
            float(np.abs(a.conj().T @ b + b @ a.conj().T - (k == l) * eye).max()),
        )
    return worst


def random_matrix_unit(rng: np.random.Generator, n_sites: int) -> fs.MatrixUnit:
    m = int(rng.integers(1, n_sites + 1))
    n = int(rng.integers(m, n_sites + 1))
    length = n - m + 1
    phi = tuple(int(v) for v in rng.integers(1, 3, length))
    psi = tuple(int(v) for v in rng.integers(1, 3, length))
    coeff = complex(rng.standard_normal(), rng.standard_normal())
    return fs.MatrixUnit((m, n), phi, psi, coeff)


def matrix_unit_suite(rng: np.random.Generator, count: int, max_sites: int = 8) -> float:
    """Worst dense/symbolic disagreement over products, adjoints, traces and shifts."""
    worst = 0.0
    for _ in range(count):
        n_sites = int(rng.integers(1, max_sites + 1))
        u = random_matrix_unit(rng, n_sites)
        du = fs.jw_dense(u, n_sites)
        # adjoint and trace
        worst = max(worst, float(np.abs(fs.jw_dense(u.adjoint(), n_sites) - du.conj().T).max()))
        worst = max(worst, abs(fs.tracial_value(u) - np.trace(du) / 2**n_sites))
        # product with a unit on the same interval, half the time matching
        length = u.length
        phi2 = u.psi if rng.random() < 0.5 else tuple(int(v) for v in rng.integers(1, 3, length))
        v = fs.MatrixUnit(u.interval, phi2, tuple(int(t) for t in rng.integers(1, 3, length)), 1.0)
        prod = fs.matrix_unit_product(u, v)
        dprod = np.zeros_like(du) if prod is None else fs.jw_dense(prod, n_sites)
        worst = max(worst, float(np.abs(du @ fs.jw_dense(v, n_sites) - dprod).max()))
        # shift: substitute a_j -> a_{j+1} in the defining formulas
        if n_sites < max_sites:
            gens = fs.car_generators(n_sites + 1)
            direct = fs.build_from_generators(u, gens[1:])
            worst = max(worst, float(np.abs(fs.jw_dense(fs.shift_matrix_unit(u), n_sites + 1) - direct).max()))
    return worst


def run_verify(config: ExperimentConfig) -> ResultTable:
    """Run every invariant suite; one row per suite."""
    table = ResultTable("verify", ["suite", "suite_ok", "worst_deviation", "detail"])
    seeds = [config.seed + i for i in range(10)]

    # lemma bound across 10 seeds
    results = [lemma_suite(s) for s in seeds]
    _suite(table, "lemma_bound", all(r[0] for r in results), max(r[1] for r in results),
           f"{sum(r[2] for r in results)} random pairs over seeds {seeds[0]}..{seeds[-1]}")

    # unitality of the built-in partitions and an optional file
    devs = [pt.unity_deviation(ss.fourier_partition(config.d).as_partition())]
    devs += [pt.unity_deviation(fs.build_gicar_partition(m).dense_elements()) for m in (2, 3, 4)]
    detail = "fourier, gicar M=2..4"
    if config.partition != "fourier":
        devs.append(pt.unity_deviation(pt.load_partition(config.partition)))
        detail += f", file {config.partition}"
    _suite(table, "unitality", max(devs) <= pt.UNITY_TOL, max(devs), detail)

    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(2, 9))
        x = pt.random_partition(dim, int(rng.integers(1, 9)), rng)
        rho = pt.correlation_matrix(random_density_matrix(dim, rng), x)
        worst = max(worst, abs(np.trace(rho).real - 1))
        y, z = pt.random_partition(dim, 2, rng), pt.random_partition(dim, 3, rng)
        lhs = pt.compose(pt.compose(x, y), z).elements
        rhs = pt.compose(x, pt.compose(y, z)).elements
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    _suite(table, "correlation_and_compose", worst <= 1e-10, worst, "trace of rho_X, associativity")

    # spin closed form and sandwich
    system = ss.SpinChainSystem.from_spectrum((0.3, 0.7))
    h = binary_entropy(0.3)
    dev_closed, sandwich_ok, dev_factor = 0.0, True, 0.0
    x = ss.fourier_partition(2)
    for n in range(2, 5):
        chk = ss.split_bound_check(system, n, method="dense")
        dev_closed = max(dev_closed, abs(chk.s_reduced_dense - (n - 1) * (math.log(2) + h)))
        sandwich_ok &= chk.satisfied and chk.s_rho_n <= ss.window_upper_bound(system, 2, n) + 1e-8
        dense = ss.refined_correlation(system, x, n, "dense")
        dev_factor = max(dev_factor, float(np.abs(dense - ss.refined_correlation(system, x, n, "factorized")).max()))
    _suite(table, "spin_closed_form", dev_closed <= 1e-8, dev_closed, "d=2, spectrum (0.3, 0.7), N=2..4")
    _suite(table, "spin_sandwich", sandwich_ok, 0.0, "split-off lower bound and window upper bound")
    _suite(table, "spin_factorized_vs_dense", dev_factor <= 1e-10, dev_factor, "Fourier, N=2..4")

    # CAR relations and symbolic matrix units
    dev = max(car_relation_deviation(n) for n in range(1, 9))
    _suite(table, "car_relations", dev <= 1e-12, dev, "1..8 sites")
    dev = matrix_unit_suite(rng, 200)
    _suite(table, "matrix_units", dev <= 1e-12, dev, "200 random units, <= 8 sites")

    # Markov reduction
    lump_ok, resid_ok, struct_ok, rate_dev, mu_ok = True, True, True, 0.0, True
    for m in range(2, 9):
        fine, coarse = mr.gicar_chains(m)
        if m <= 6:
            lump_ok &= mr.check_lumpable(fine, list(mr.coarse_classes(fine).values())).lumpable
        mu_f = mr.stationary_measure(fine)
        mu_c = mr.stationary_measure(coarse)
        resid_ok &= mr.stationary_residual(fine, mu_f) == 0 and mr.stationary_residual(coarse, mu_c) == 0
        st = mr.structure_checks(coarse)
        struct_ok &= st.irreducible and st.primitive
        a3, _ = mr.classify_states(fine)
        mu_ok &= mr.class_mass(mu_f, a3) == Fraction(2, m)
        closed = mr.closed_form_rate(m)
        rate_dev = max(rate_dev, abs(mr.entropy_rate(fine, mu_f) - closed), abs(mr.entropy_rate(coarse, mu_c) - closed))
    _suite(table, "lumpability", lump_ok, 0.0, "exact row sums, M=2..6")
    _suite(table, "stationary_residual", resid_ok and mu_ok, 0.0, "exact mu P = mu and mu(A3) = 2/M, M=2..8")
    _suite(table, "structure", struct_ok, 0.0, "coarse chain irreducible and primitive, M=2..8")
    _suite(table, "fermion_closed_form", rate_dev <= 1e-10, rate_dev, "fine and coarse rates, M=2..8")

    # dense oracle for the refined correlation matrix
    worst, worst_s = 0.0, 0.0
    p = fs.build_gicar_partition(2)
    for n in (1, 2):
        res = dense_symbolic_agreement(p, n, config.cap_dense, config.cap_paths)
        worst = max(worst, res["offdiag"], res["diag_err"])
        worst_s = max(worst_s, abs(res["s_dense"] - res["s_chain"]))
    _suite(table, "fermion_dense_oracle", worst <= 1e-12 and worst_s <= 1e-8, max(worst, worst_s), "M=2, N=1,2")
    return table


RUNNERS = {"spin": run_spin, "fermion": run_fermion, "verify": run_verify}


def run(config: ExperimentConfig) -> ResultTable:
    return RUNNERS[config.mode](config)
