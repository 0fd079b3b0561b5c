"""Command line entry point: ``python3 -m hcwave <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .. import fem
from ..coefficients import periodic_inclusion
from ..homogenize import solve_cell_problems, voigt_reuss_bounds
from ..mesh import build_mesh
from .config import ConfigError, ExperimentConfig, load_config
from .runners import (
    run_fine_reference,
    run_highcontrast_limit,
    run_homogenization_error,
    run_lod_convergence,
    write_energy,
    write_snapshots,
)


def _config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = str(args.out)
    if args.config is None:
        return ExperimentConfig(**overrides)
    return load_config(args.config, **overrides)


def _outdir(config: ExperimentConfig) -> Path:
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve_fine(args, config):
    out = _outdir(config)
    run = run_fine_reference(config)
    paths = write_snapshots(run, config, out)
    write_energy(run, config, out / "energy.csv")
    for p in paths:
        print(f"wrote {p}")
    if config.f.is_zero:
        print(f"max relative energy drift {run.energy.max_relative_drift():.3e}")


def cmd_homogenize(args, config):
    out = _outdir(config)
    cell = build_mesh(config.dim, config.cell_n)
    coeff = periodic_inclusion(cell, 1.0, config.a0_value(), inclusion=config.inclusion)
    _, ahat = solve_cell_problems(cell, coeff, perforated=args.perforated)
    lower, upper = voigt_reuss_bounds(coeff)
    path = out / ("homogenized_perforated.csv" if args.perforated else "homogenized.csv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# {config.echo()}; perforated={str(args.perforated).lower()}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i in range(ahat.dim):
            for j in range(ahat.dim):
                w.writerow([i, j, repr(float(ahat.entries[i, j]))])
    print(np.array2string(ahat.entries, precision=8))
    print(f"harmonic mean {lower:.6g}, arithmetic mean {upper:.6g}")
    print(f"wrote {path}")


def cmd_hom_error(args, config):
    out = _outdir(config)
    report = run_homogenization_error(config)
    report.write_errors(out / "hom_errors.csv")
    for row in report.rows:
        print("eps={:<10g} a0={:<10g} {:<12s} {:.4e}".format(*row[:4]))
    print(f"wrote {out / 'hom_errors.csv'}")


def cmd_limit(args, config):
    out = _outdir(config)
    rep = run_highcontrast_limit(config)
    rep.write(out / "limit.csv")
    for lab in rep.labels:
        print(f"{lab:<10s} ||u(T) - (u0 + T v0)|| = {rep.final_distance(lab):.4e}")
    print(f"wrote {out / 'limit.csv'}")


def cmd_lod(args, config):
    out = _outdir(config)
    report = run_lod_convergence(config, threads=args.threads)
    report.write_errors(out / "errors.csv")
    report.write_rates(out / "rates.csv")
    report.write_pairwise_rates(out / "pairwise_rates.csv")
    for row in report.rows:
        print("H={:<10g} k={:<3d} {:<12s} {:.4e}".format(*row[:4]))
    for norm, k, rate in report.rates():
        print(f"rate {norm:<12s} k={k}: {rate:.3f}")
    print(f"wrote {out / 'errors.csv'} and {out / 'rates.csv'}")


COMMANDS = {
    "solve-fine": (cmd_solve_fine, "fine FEM reference run; writes snapshots and energy"),
    "homogenize": (cmd_homogenize, "solve the cell problems and print the effective tensor"),
    "hom-error": (cmd_hom_error, "homogenization error over the eps and a0 grids"),
    "limit-1d": (cmd_limit, "high-contrast 1D limit comparison"),
    "lod-converge": (cmd_lod, "LOD convergence study with rates"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for (H, k) cells")
    common.add_argument("--seed", type=int, help="checkerboard seed (overrides coeff.seed)")
    parser = argparse.ArgumentParser(prog="hcwave", description="High-contrast wave equation solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "homogenize":
            p.add_argument("--perforated", action="store_true", help="remove the inclusion from the cell")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        config = _config(args)
        start = time.perf_counter()
        COMMANDS[args.command][0](args, config)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.perf_counter() - start:.2f} s")
    return 0
