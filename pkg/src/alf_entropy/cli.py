"""Command-line entry point: ``alf-entropy {spin,fermion,verify}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .experiments import ExperimentConfig, run
from .quantum_core import CapExceededError, ValidationError

OUT_DIR_ENV = "ALF_ENTROPY_OUT_DIR"

log = logging.getLogger("alf_entropy")

# config-file keys mapped onto ExperimentConfig fields
_KEY_ALIASES = {
    "spectrum": "site_spectrum",
    "n_max": "n_max",
    "N_max": "n_max",
    "out": "output_path",
    "format": "output_format",
}


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key).replace("-", "_")
        if key not in ExperimentConfig.field_names():
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_PARSERS = {
    "d": int,
    "site_spectrum": _floats,
    "M": _ints,
    "n_max": int,
    "cap_dense": int,
    "cap_paths": int,
    "tol": float,
    "seed": int,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--d", type=int, help="site dimension (spin)")
    common.add_argument("--spectrum", help="site-state eigenvalues, e.g. '0.3,0.7'")
    common.add_argument("--partition", help="'fourier' or a JSON operator-list file")
    common.add_argument("--M", help="tail lengths for the fermion sweep, e.g. '2,3,4'")
    common.add_argument("--N-max", dest="n_max", type=int, help="largest refinement length")
    common.add_argument("--mode", dest="fermion_mode", choices=["symbolic", "dense", "both"])
    common.add_argument("--cap-dense", type=int, help="cap on dense dimensions and refined sizes")
    common.add_argument("--cap-paths", type=int, help="cap on enumerated symbolic paths")
    common.add_argument("--tol", type=float, help="tolerance for the pass flags")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="output_path", help="output file")
    common.add_argument("--format", dest="output_format", choices=["csv", "json"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="alf-entropy", description="Finite-size dynamical entropy experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("spin", parents=[common], help="Fourier or file partitions on the spin shift")
    sub.add_parser("fermion", parents=[common], help="GICAR chains on the fermion shift")
    sub.add_parser("verify", parents=[common], help="run every invariant suite")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    flags = vars(args)
    if flags.get("spectrum") is not None:
        values["site_spectrum"] = flags["spectrum"]
    for name in ExperimentConfig.field_names():
        if name in flags and flags[name] is not None:
            values[name] = flags[name]
    values["mode"] = args.command
    for key, parse in _PARSERS.items():
        if isinstance(values.get(key), str):
            values[key] = parse(values[key])
    if "d" in values and "site_spectrum" not in values:
        values["site_spectrum"] = None
    if values.get("output_path") is None and os.environ.get(OUT_DIR_ENV):
        fmt = values.get("output_format", "csv")
        values["output_path"] = str(Path(os.environ[OUT_DIR_ENV]) / f"{args.command}.{fmt}")
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = config_from_args(args)
        table = run(config)
    except (ValidationError, CapExceededError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if config.output_path:
        Path(config.output_path).parent.mkdir(parents=True, exist_ok=True)
        table.write(config.output_path, config.output_format)
        log.info("wrote %s", config.output_path)
    else:
        sys.stdout.write(table.render(config.output_format))
    for row, col in table.failures():
        key = table.rows[row].get("suite", table.rows[row].get("N", table.rows[row].get("M")))
        print(f"FAIL {table.title} {key}: {col}", file=sys.stderr)
    return 0 if table.passed else 1


if __name__ == "__main__":
    sys.exit(main())
