"""Online stage: the per-knot recursion of semigroup propagation,
exponential observation updates, and normalized readouts.

Each step advances the field by the deterministic semigroup over one
knot interval, multiplies by exp(h^T dY), records the ratio estimates,
and renormalizes so the stored mantissa field always has unit mass (the
true scale lives in log_scale).  Estimates are recorded at tau_k right
after the exponential update; the ratio makes them invariant to any
positive rescaling of the initial density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .models import FilterModel, TestFunction, TimeSchedule
from .pde import (
    DensityField,
    DiscreteGenerator,
    Grid,
    assemble_generator,
    discretize_initial,
    exp_update,
    propagate,
)
from .sde import ObservationPath, observation_increments


class MassCollapseError(RuntimeError):
    """Field mass underflowed or clamping removed too much mass."""


@dataclass(frozen=True)
class FilterOutput:
    """Per-knot estimates and diagnostics of one filter run."""

    schedule: TimeSchedule
    labels: tuple
    estimates: np.ndarray  # (K+1, n_phi)
    mass_mantissa: np.ndarray  # (K+1,)
    mass_log_scale: np.ndarray  # (K+1,)
    clamped_mass: np.ndarray  # (K+1,)
    min_value: np.ndarray  # (K+1,)

    def column(self, label: str) -> np.ndarray:
        return self.estimates[:, self.labels.index(label)]

    def to_csv(self) -> str:
        header = ["t", *self.labels, "mass_log_scale", "clamped_mass"]
        lines = [",".join(header)]
        knots = self.schedule.knots
        for k in range(len(knots)):
            row = [repr(float(knots[k]))]
            row += [repr(float(v)) for v in self.estimates[k]]
            row.append(repr(float(self.mass_log_scale[k])))
            row.append(repr(float(self.clamped_mass[k])))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def estimate(field: DensityField, phi: TestFunction) -> float:
    """Normalized readout: integral of phi against the field over its mass.

    Both integrals share the field's log_scale, so the ratio is a plain
    mantissa division.
    """
    w = field.grid.trap_weights
    mass = float(np.dot(w, field.values))
    if mass <= 0:
        raise MassCollapseError("field has zero mass; estimate undefined")
    return float(np.dot(w, phi(field.grid.coords) * field.values)) / mass


def run_filter(
    model: FilterModel,
    grid: Grid,
    schedule: TimeSchedule,
    obs: ObservationPath,
    test_functions: Sequence[TestFunction],
    substeps: int = 4,
    renormalize: bool = True,
    generator: Optional[DiscreteGenerator] = None,
    field_hook: Optional[Callable[[int, str, DensityField], None]] = None,
    clamp_tolerance: float = 1e-8,
) -> FilterOutput:
    """Run the two-stage recursion over the whole observation path.

    For k = 1..K: propagate by dt, multiply by exp(h^T dY_k), record the
    ratio estimates, and fold the mantissa mass into log_scale.  Row 0
    holds the initial-density readouts.  `field_hook(k, stage, field)`,
    if given, is called with stage "propagated" (the pre-update field at
    tau_k) and "updated" (post-update); it must not mutate the field.

    Raises MassCollapseError if the mantissa mass drops below 1e-300
    before renormalization or if a propagation step clamps more than
    `clamp_tolerance` of the field mass.
    """
    if obs.schedule.steps != schedule.steps or obs.schedule.terminal != schedule.terminal:
        raise ValueError("observation path is on a different schedule")
    gen = generator if generator is not None else assemble_generator(model, grid)
    field = discretize_initial(model, grid)
    w = grid.trap_weights
    phi_nodes = [np.asarray(phi(grid.coords), dtype=float) for phi in test_functions]

    K = schedule.steps
    n_phi = len(test_functions)
    est = np.empty((K + 1, n_phi))
    mass_m = np.empty(K + 1)
    mass_ls = np.empty(K + 1)
    clamped = np.zeros(K + 1)
    min_val = np.zeros(K + 1)

    def record(k, fld):
        m = float(np.dot(w, fld.values))
        if m < 1e-300:
            raise MassCollapseError(f"field mass collapsed at knot {k}")
        for j, pv in enumerate(phi_nodes):
            est[k, j] = float(np.dot(w, pv * fld.values)) / m
        mass_m[k] = m
        mass_ls[k] = fld.log_scale
        clamped[k] = fld.clamped_mass
        min_val[k] = float(fld.values.min())
        return m

    mass = record(0, field)
    increments = observation_increments(obs)
    dt = schedule.dt

    for k in range(1, K + 1):
        field = propagate(gen, field, dt, substeps)
        if field.clamped_mass > clamp_tolerance * mass:
            raise MassCollapseError(
                f"clamped negative mass {field.clamped_mass:.3e} exceeds "
                f"{clamp_tolerance:g} of field mass at knot {k}"
            )
        if field_hook is not None:
            field_hook(k, "propagated", field)
        field = exp_update(field, model, increments[k - 1])
        if field_hook is not None:
            field_hook(k, "updated", field)
        mass = record(k, field)
        if renormalize:
            field = DensityField(
                grid, field.values / mass, field.log_scale + np.log(mass), field.clamped_mass
            )
            mass = 1.0

    return FilterOutput(
        schedule=schedule,
        labels=tuple(phi.label for phi in test_functions),
        estimates=est,
        mass_mantissa=mass_m,
        mass_log_scale=mass_ls,
        clamped_mass=clamped,
        min_value=min_val,
    )
