"""Experiment configuration: INI-style key/value files with sections.

Example::

    [model]
    name = linear1d

    [grid]
    radius = 6.0
    points = 241

    [schedule]
    terminal = 1.0
    steps = 1000

    [filter]
    substeps = 4
    test_functions = x1

    [run]
    seeds = 50
    seed_base = 0

    [sweep]
    axis = dt
    values = 0.02, 0.01, 0.005, 0.0025
    oracle = kalman

    [output]
    directory = out

Only [model], [grid], and [schedule] are required; every applied default
is echoed to the log.  Validation happens before any compute and errors
name the offending field.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

from .models import (
    TestFunction,
    _REGISTRY_NAMES,
    coordinate,
    coordinate_product,
    squared_coordinate,
)

log = logging.getLogger("yyfilter")


class ConfigError(ValueError):
    """Config file failed to parse or validate."""


def parse_test_function(label: str) -> TestFunction:
    """Resolve labels like x1, x2^2, x1*x3 into test functions."""
    label = label.strip()
    if "*" in label:
        a, b = label.split("*")
        return coordinate_product(_coord_index(a), _coord_index(b))
    if label.endswith("^2"):
        return squared_coordinate(_coord_index(label[:-2]))
    return coordinate(_coord_index(label))


def _coord_index(token: str) -> int:
    token = token.strip()
    if not token.startswith("x") or not token[1:].isdigit():
        raise ConfigError(f"unknown test function label {token!r}; use x1, x2^2, x1*x2, ...")
    return int(token[1:]) - 1


@dataclass
class ExperimentConfig:
    model_name: str
    dim: Optional[int]
    grid_radius: float
    grid_points: int
    terminal: float
    steps: int
    substeps: int
    test_function_labels: tuple
    baseline: str
    particles: int
    sweep_axis: str
    sweep_values: tuple
    sweep_dx: float
    oracle: str
    slope_band: tuple
    seed_base: int
    seed_count: int
    output_dir: str
    workers: int
    raw_dump: str = field(repr=False, default="")

    @property
    def seeds(self):
        return list(range(self.seed_base, self.seed_base + self.seed_count))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_dump.encode()).hexdigest()[:16]

    def test_functions(self):
        return [parse_test_function(lb) for lb in self.test_function_labels]


def _get(parser, section, key, default=None, echo=True):
    if parser.has_option(section, key):
        return parser.get(section, key)
    if default is not None and echo:
        log.info("config: [%s] %s not set; using default %r", section, key, default)
    return default


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.ParsingError as exc:
        lines = "; ".join(f"line {ln}: {txt.strip()}" for ln, txt in exc.errors)
        raise ConfigError(f"{path}: parse error at {lines}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    name = _get(parser, "model", "name", echo=False)
    if name is None:
        raise ConfigError("field [model] name is required")
    if name not in _REGISTRY_NAMES:
        raise ConfigError(
            f"field [model] name: unknown model {name!r}; "
            f"valid names: {', '.join(_REGISTRY_NAMES)}"
        )
    dim = _get(parser, "model", "dim", echo=False)

    def need_float(section, key):
        raw = _get(parser, section, key, echo=False)
        if raw is None:
            raise ConfigError(f"field [{section}] {key} is required")
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"field [{section}] {key}: not a number: {raw!r}") from None

    def need_int(section, key):
        v = need_float(section, key)
        if v != int(v):
            raise ConfigError(f"field [{section}] {key} must be an integer")
        return int(v)

    radius = need_float("grid", "radius")
    points = need_int("grid", "points")
    terminal = need_float("schedule", "terminal")
    steps = need_int("schedule", "steps")

    if steps < 1:
        raise ConfigError("field [schedule] steps: K must be >= 1")
    if terminal <= 0:
        raise ConfigError("field [schedule] terminal must be positive")
    if radius <= 1:
        raise ConfigError("field [grid] radius must exceed 1 (mollifier support)")
    if points < 5 or points % 2 == 0:
        raise ConfigError("field [grid] points must be an odd integer >= 5")

    substeps = int(_get(parser, "filter", "substeps", "4"))
    if substeps < 1:
        raise ConfigError("field [filter] substeps must be >= 1")
    labels = tuple(
        s.strip()
        for s in _get(parser, "filter", "test_functions", "x1").split(",")
        if s.strip()
    )
    for lb in labels:
        parse_test_function(lb)

    baseline = _get(parser, "baseline", "method", "kalman")
    if baseline not in ("kalman", "bootstrap_pf", "ks_monte_carlo"):
        raise ConfigError(f"field [baseline] method: unknown baseline {baseline!r}")
    particles = int(_get(parser, "baseline", "particles", "10000"))
    if particles < 2:
        raise ConfigError("field [baseline] particles must be >= 2")

    sweep_axis = _get(parser, "sweep", "axis", "dt")
    if sweep_axis not in ("dt", "R"):
        raise ConfigError(f"field [sweep] axis must be dt or R, got {sweep_axis!r}")
    sweep_values = tuple(
        float(s) for s in _get(parser, "sweep", "values", "0.02, 0.01, 0.005").split(",")
    )
    sweep_dx = float(_get(parser, "sweep", "dx", "0.05"))
    oracle = _get(parser, "sweep", "oracle", "kalman")
    if oracle not in ("kalman", "fine_oracle", "bootstrap_pf"):
        raise ConfigError(f"field [sweep] oracle: unknown oracle {oracle!r}")
    band = tuple(
        float(s) for s in _get(parser, "sweep", "slope_band", "0.35, 0.65").split(",")
    )
    if len(band) != 2 or band[0] >= band[1]:
        raise ConfigError("field [sweep] slope_band must be two increasing numbers")

    seed_base = int(_get(parser, "run", "seed_base", "0"))
    seed_count = int(_get(parser, "run", "seeds", "50"))
    if seed_count < 1:
        raise ConfigError("field [run] seeds must be >= 1")
    output_dir = _get(parser, "output", "directory", "out")
    workers = int(_get(parser, "run", "workers", "1", echo=False))

    resolved = {
        "model.name": name,
        "model.dim": dim or "",
        "grid.radius": radius,
        "grid.points": points,
        "schedule.terminal": terminal,
        "schedule.steps": steps,
        "filter.substeps": substeps,
        "filter.test_functions": ",".join(labels),
        "baseline.method": baseline,
        "baseline.particles": particles,
        "sweep.axis": sweep_axis,
        "sweep.values": ",".join(repr(v) for v in sweep_values),
        "sweep.dx": sweep_dx,
        "sweep.oracle": oracle,
        "sweep.slope_band": ",".join(repr(v) for v in band),
        "run.seed_base": seed_base,
        "run.seeds": seed_count,
        "output.directory": output_dir,
    }
    raw_dump = "\n".join(f"{k}={v}" for k, v in sorted(resolved.items()))

    return ExperimentConfig(
        model_name=name,
        dim=int(dim) if dim else None,
        grid_radius=radius,
        grid_points=points,
        terminal=terminal,
        steps=steps,
        substeps=substeps,
        test_function_labels=labels,
        baseline=baseline,
        particles=particles,
        sweep_axis=sweep_axis,
        sweep_values=sweep_values,
        sweep_dx=sweep_dx,
        oracle=oracle,
        slope_band=band,
        seed_base=seed_base,
        seed_count=seed_count,
        output_dir=output_dir,
        workers=workers,
        raw_dump=raw_dump,
    )
