"""Command-line surface and experiment orchestration.

Subcommands: simulate, filter, baseline, sweep, validate.  Every output
file begins with a comment line carrying the toolkit version and the
config hash; CSVs use comma separators, '.' decimals, '\\n' line ends,
UTF-8.  Exit status is 0 only when every requested check passes.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bootstrap_pf, kalman_filter, ks_monte_carlo
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import convergence_sweep, radius_sweep
from .filtering import run_filter
from .models import TimeSchedule, builtin_model, validate_assumptions
from .pde import build_grid
from .sde import paths_to_csv, simulate

log = logging.getLogger("yyfilter")


def _header(cfg: ExperimentConfig) -> str:
    return f"# yyfilter {__version__} config_hash={cfg.config_hash}\n"


def _write(cfg: ExperimentConfig, out_dir: Path, name: str, body: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / name
    target.write_text(_header(cfg) + body, encoding="utf-8", newline="\n")
    log.info("wrote %s", target)
    return target


def _setup(cfg: ExperimentConfig):
    model = builtin_model(cfg.model_name, dim=cfg.dim)
    grid = build_grid(model.dim, cfg.grid_radius, cfg.grid_points)
    schedule = TimeSchedule(cfg.terminal, cfg.steps)
    return model, grid, schedule


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> int:
    model, _, schedule = _setup(cfg)
    for seed in cfg.seeds:
        xs, ys = simulate(model, schedule, substeps=cfg.substeps, seed=seed)
        _write(cfg, out_dir, f"paths_s{seed}.csv", paths_to_csv(xs, ys))
    return 0


def cmd_filter(cfg: ExperimentConfig, out_dir: Path) -> int:
    model, grid, schedule = _setup(cfg)
    phis = cfg.test_functions()
    for seed in cfg.seeds:
        _, ys = simulate(model, schedule, substeps=cfg.substeps, seed=seed)
        out = run_filter(model, grid, schedule, ys, phis, substeps=cfg.substeps)
        _write(cfg, out_dir, f"filter_s{seed}.csv", out.to_csv())
    return 0


def cmd_baseline(cfg: ExperimentConfig, out_dir: Path) -> int:
    model, _, schedule = _setup(cfg)
    phis = cfg.test_functions()
    for seed in cfg.seeds:
        _, ys = simulate(model, schedule, substeps=cfg.substeps, seed=seed)
        if cfg.baseline == "kalman":
            res = kalman_filter(model, schedule, ys)
        elif cfg.baseline == "bootstrap_pf":
            res = bootstrap_pf(model, schedule, ys, phis, cfg.particles, seed=seed)
        else:
            res = ks_monte_carlo(
                model, schedule, ys, phis, cfg.particles, substeps=cfg.substeps, seed=seed
            )
        _write(cfg, out_dir, f"{cfg.baseline}_s{seed}.csv", res.to_csv())
    return 0


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, workers: int) -> int:
    model, grid, schedule = _setup(cfg)
    phi = cfg.test_functions()[0]
    if cfg.sweep_axis == "dt":
        result = convergence_sweep(
            model,
            grid,
            cfg.terminal,
            cfg.sweep_values,
            cfg.seeds,
            oracle=cfg.oracle,
            phi=phi,
            substeps=cfg.substeps,
            oracle_particles=cfg.particles,
            workers=workers,
        )
        lo, hi = cfg.slope_band
        flags = {
            "slope_in_band": bool(
                not np.isnan(result.slope) and lo <= result.slope <= hi
            ),
            "monotone": bool(
                np.all(np.diff(result.mean_err) <= result.stderr[:-1] + result.stderr[1:])
            ),
        }
    else:
        result = radius_sweep(
            model,
            schedule,
            cfg.sweep_values,
            cfg.sweep_dx,
            cfg.seeds,
            phi=phi,
            substeps=cfg.substeps,
            workers=workers,
        )
        flags = {
            "error_monotone_in_R": bool(
                np.all(np.diff(result.mean_err) <= result.stderr[:-1] + result.stderr[1:])
            ),
            "tail_monotone_in_R": bool(
                np.all(np.diff(result.extras["tail_mass"]) <= 1e-12)
            ),
        }

    _write(cfg, out_dir, "sweep.csv", result.to_csv())
    long_rows = ["axis,value,mean_err,stderr"]
    for v, m, s in zip(result.values, result.mean_err, result.stderr):
        long_rows.append(f"{result.axis},{float(v)!r},{float(m)!r},{float(s)!r}")
    _write(cfg, out_dir, "sweep_long.csv", "\n".join(long_rows) + "\n")
    summary = result.summary_json(**flags)
    _write(cfg, out_dir, "summary.json", summary + "\n")
    log.info("sweep summary: %s", summary)
    return 0 if json.loads(summary)["pass"] else 1


def cmd_validate(cfg: ExperimentConfig, out_dir: Path) -> int:
    model, _, _ = _setup(cfg)
    report = validate_assumptions(
        model, cfg.grid_radius, seed=cfg.seed_base, test_functions=cfg.test_functions()
    )
    body = str(report) + "\n"
    _write(cfg, out_dir, "validation.txt", body)
    print(report)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="yyfilter",
        description="Grid-based nonlinear filtering toolkit",
    )
    parser.add_argument("command", choices=["simulate", "filter", "baseline", "sweep", "validate"])
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: YYF_WORKERS or 1)")
    parser.add_argument("--seed-base", type=int, default=None, help="override seed base")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed_base is not None:
        cfg.seed_base = args.seed_base
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("YYF_WORKERS", cfg.workers))
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)

    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "filter":
            return cmd_filter(cfg, out_dir)
        if args.command == "baseline":
            return cmd_baseline(cfg, out_dir)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, workers)
        return cmd_validate(cfg, out_dir)
    except Exception as exc:  # surface module errors as clean nonzero exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
