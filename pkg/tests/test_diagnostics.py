import dataclasses
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import norm

from yyfilter.diagnostics import (
    SweepResult,
    convergence_sweep,
    exp_moment_step_check,
    l4_stability_check,
    moment,
    moment_growth_check,
    quartic_growth_profile,
    radius_sweep,
    tail_mass,
)
from yyfilter.models import (
    AssumptionProfile,
    FilterModel,
    TimeSchedule,
    builtin_model,
    coordinate,
    _std_normal_density,
    _unit_diffusion,
)
from yyfilter.pde import DensityField, build_grid, discretize_initial


def _zero_vec(points):
    return np.zeros_like(points)


def _const_half_obs(points):
    return np.full_like(points, 0.5)


# ---------------------------------------------------------------------------
# tail_mass and moment
# ---------------------------------------------------------------------------


def test_tail_mass_field_inside_probe(grid_1d_fine):
    xs = grid_1d_fine.coords[:, 0]
    vals = np.where(np.abs(xs) < 0.5, 1.0, 0.0)
    assert tail_mass(DensityField(grid_1d_fine, vals), 1.0) == 0.0


def test_tail_mass_uniform_half():
    g = build_grid(1, 6.0, 241)
    field = DensityField(g, np.ones(g.n_nodes))
    assert tail_mass(field, 3.0) == pytest.approx(0.5, abs=g.spacing)


def test_tail_mass_standard_normal(linear1d, grid_1d_fine):
    field = discretize_initial(linear1d, grid_1d_fine)
    expected = 2 * norm.cdf(-1.0)
    assert tail_mass(field, 1.0) == pytest.approx(expected, abs=1e-3)


def test_tail_mass_probe_validation(grid_1d_fine):
    field = DensityField(grid_1d_fine, np.ones(grid_1d_fine.n_nodes))
    with pytest.raises(ValueError):
        tail_mass(field, 7.0)
    with pytest.raises(ValueError):
        tail_mass(field, 0.0)


def test_moment_point_mass(grid_1d_fine):
    vals = np.zeros(grid_1d_fine.n_nodes)
    vals[grid_1d_fine.n_nodes // 2] = 1.0  # the origin node
    assert moment(DensityField(grid_1d_fine, vals), 2) == 0.0


def test_moment_uniform_third():
    g = build_grid(1, 1.0, 2001)
    field = DensityField(g, np.ones(g.n_nodes))
    assert moment(field, 2) == pytest.approx(1.0 / 3.0, abs=1e-5)


def test_moment_standard_normal(linear1d, grid_1d_fine):
    field = discretize_initial(linear1d, grid_1d_fine)
    assert moment(field, 2) == pytest.approx(1.0, abs=1e-3)


def test_moment_validation(grid_1d_fine):
    field = DensityField(grid_1d_fine, np.ones(grid_1d_fine.n_nodes))
    with pytest.raises(ValueError):
        moment(field, 3)


# ---------------------------------------------------------------------------
# moment growth / L4 stability
# ---------------------------------------------------------------------------


PURE_DIFFUSION = FilterModel(
    name="pure_diffusion",
    dim=1,
    drift=_zero_vec,
    diffusion=_unit_diffusion,
    observation=_zero_vec,
    initial_density=_std_normal_density,
    assumptions=AssumptionProfile(1.0, 1.0, 2, 1, 1.0),
)


def test_moment_growth_pure_diffusion_passes():
    grid = build_grid(1, 8.0, 161)
    schedule = TimeSchedule(0.5, 10)
    report = moment_growth_check(PURE_DIFFUSION, grid, schedule, list(range(10)), order=2)
    assert report.passed
    # second moment of the heat flow adds t: ratio (2 + T) / 2 at T = 0.5
    expected = math.log((2 + 0.5) / 2) / 0.5
    assert report.exponents[1] == pytest.approx(expected, rel=0.05)


def test_moment_growth_linear1d_finite():
    m = builtin_model("linear1d")
    grid = build_grid(1, 6.0, 121)
    schedule = TimeSchedule(0.25, 10)
    report = moment_growth_check(m, grid, schedule, list(range(12)), order=2)
    assert report.finite
    assert report.passed


def test_moment_growth_needs_seeds():
    grid = build_grid(1, 6.0, 61)
    with pytest.raises(ValueError):
        moment_growth_check(PURE_DIFFUSION, grid, TimeSchedule(0.1, 2), [1, 2], 2)


def test_l4_stability_linear1d():
    m = builtin_model("linear1d")
    grid = build_grid(1, 6.0, 121)
    schedules = [TimeSchedule(0.25, 10), TimeSchedule(0.25, 20)]
    report = l4_stability_check(m, grid, schedules, list(range(10)))
    assert report.passed, report
    assert all(v > 0 for v in report.sup_l4)


def test_l4_stability_validates_halving():
    grid = build_grid(1, 6.0, 61)
    with pytest.raises(ValueError):
        l4_stability_check(
            builtin_model("linear1d"),
            grid,
            [TimeSchedule(0.25, 10), TimeSchedule(0.25, 15)],
            list(range(10)),
        )


def test_single_knot_schedule_trivially_bounded():
    m = builtin_model("linear1d")
    grid = build_grid(1, 6.0, 121)
    report = l4_stability_check(
        m, grid, [TimeSchedule(0.02, 1), TimeSchedule(0.02, 2)], list(range(10))
    )
    assert all(math.isfinite(v) for v in report.sup_l4)


# ---------------------------------------------------------------------------
# one-step exponential moment law
# ---------------------------------------------------------------------------


def test_exp_moment_uninformative_is_exactly_one():
    m = dataclasses.replace(builtin_model("linear1d"), observation=_zero_vec, linear=None)
    grid = build_grid(1, 6.0, 121)
    report = exp_moment_step_check(m, grid, [0.01, 0.001], n_samples=200, seed=0)
    assert_allclose(report.amplification, 1.0, atol=1e-14)
    assert report.passed


def test_exp_moment_constant_observation_closed_form():
    # constant h = c: amplification is exactly exp(8 c^2 dt)
    m = dataclasses.replace(
        builtin_model("linear1d"), observation=_const_half_obs, linear=None
    )
    grid = build_grid(1, 6.0, 121)
    dts = [0.01, 0.001]
    report = exp_moment_step_check(m, grid, dts, n_samples=10_000, seed=3)
    for dt, amp, se in zip(report.dts, report.amplification, report.stderr):
        assert abs(amp - math.exp(8 * 0.25 * dt)) <= 3 * se
    assert report.passed


def test_exp_moment_halving_dt_halves_excess():
    m = dataclasses.replace(
        builtin_model("linear1d"), observation=_const_half_obs, linear=None
    )
    grid = build_grid(1, 6.0, 121)
    report = exp_moment_step_check(m, grid, [0.02, 0.01], n_samples=40_000, seed=5)
    excess = np.array(report.amplification) - 1.0
    se = np.array(report.stderr)
    ratio = excess[0] / excess[1]
    exact = math.expm1(8 * 0.25 * 0.02) / math.expm1(8 * 0.25 * 0.01)
    se_ratio = ratio * math.hypot(se[0] / excess[0], se[1] / excess[1])
    assert abs(ratio - exact) <= 3 * se_ratio


def test_exp_moment_needs_samples():
    grid = build_grid(1, 6.0, 61)
    with pytest.raises(ValueError):
        exp_moment_step_check(builtin_model("linear1d"), grid, [0.01], n_samples=10)


# ---------------------------------------------------------------------------
# quartic growth profile
# ---------------------------------------------------------------------------


def test_quartic_growth_profile_contracting_drift():
    m = dataclasses.replace(builtin_model("linear1d"), observation=_zero_vec, linear=None)
    grid = build_grid(1, 6.0, 241)
    times, vals = quartic_growth_profile(m, grid, 0.5, 50)
    assert vals[0] > 0
    assert np.all(np.isfinite(vals))
    # contraction toward the stationary law raises the L4 norm monotonically
    assert vals[-1] > vals[0]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_convergence_sweep_single_value_flagged(linear1d):
    grid = build_grid(1, 6.0, 61)
    res = convergence_sweep(
        linear1d, grid, 0.2, [0.02], seeds=[0, 1, 2], oracle="kalman", sim_substeps=1
    )
    assert math.isnan(res.slope)
    payload = json.loads(res.summary_json())
    assert payload["slope_defined"] is False
    assert payload["slope"] is None


def test_convergence_sweep_linear_decreasing(linear1d):
    grid = build_grid(1, 6.0, 121)
    res = convergence_sweep(
        linear1d, grid, 0.4, [0.04, 0.02, 0.01], seeds=list(range(6)), oracle="kalman"
    )
    assert res.values[0] > res.values[-1]
    assert np.all(res.mean_err > 0)
    # errors shrink with dt within one standard error
    assert np.all(np.diff(res.mean_err) <= res.stderr[:-1] + res.stderr[1:])
    assert not math.isnan(res.slope)


def test_convergence_sweep_reproducible(linear1d):
    grid = build_grid(1, 6.0, 61)
    kw = dict(oracle="kalman", sim_substeps=1)
    a = convergence_sweep(linear1d, grid, 0.2, [0.04, 0.02], seeds=[3, 4], **kw)
    b = convergence_sweep(linear1d, grid, 0.2, [0.04, 0.02], seeds=[3, 4], **kw)
    assert_array_equal(a.mean_err, b.mean_err)
    assert_array_equal(a.stderr, b.stderr)


def test_convergence_sweep_rejects_bad_grid_of_dts(linear1d):
    grid = build_grid(1, 6.0, 61)
    with pytest.raises(ValueError):
        convergence_sweep(linear1d, grid, 0.2, [0.02, 0.015], seeds=[0], oracle="kalman")


def test_convergence_sweep_oracle_validation():
    m = builtin_model("benes")
    grid = build_grid(1, 6.0, 61)
    with pytest.raises(ValueError, match="linear"):
        convergence_sweep(m, grid, 0.2, [0.02], seeds=[0], oracle="kalman")
    with pytest.raises(ValueError, match="oracle"):
        convergence_sweep(m, grid, 0.2, [0.02], seeds=[0], oracle="bogus")


def test_convergence_sweep_fine_oracle_runs():
    m = builtin_model("benes")
    grid = build_grid(1, 6.0, 61)
    res = convergence_sweep(
        m, grid, 0.1, [0.02, 0.01], seeds=[0, 1], oracle="fine_oracle", sim_substeps=1
    )
    assert np.all(np.isfinite(res.mean_err))


def test_radius_sweep_shapes_and_reference_row(linear1d):
    sched = TimeSchedule(0.25, 25)
    res = radius_sweep(linear1d, sched, [3.0, 4.5, 6.0], dx=0.1, seeds=[0, 1, 2, 3])
    assert res.mean_err[-1] == 0.0  # largest radius vs itself
    assert np.all(np.diff(res.mean_err) <= 1e-15)  # error shrinks toward reference
    tails = res.extras["tail_mass"]
    assert np.all(np.diff(tails) < 0)  # tail mass decays in the probe radius
    assert len(tails) == 3


def test_radius_sweep_validates_spacing(linear1d):
    with pytest.raises(ValueError):
        radius_sweep(linear1d, TimeSchedule(0.1, 5), [3.0, 4.4], dx=0.3, seeds=[0, 1])


def test_sweep_csv_and_json_schema():
    res = SweepResult(
        axis="dt",
        values=np.array([0.02, 0.01]),
        mean_err=np.array([0.2, 0.1]),
        stderr=np.array([0.01, 0.005]),
        n=5,
        slope=1.0,
        slope_halfwidth=0.2,
    )
    lines = res.to_csv().splitlines()
    assert lines[0] == "axis,value,mean_err,stderr,n"
    assert lines[1].startswith("dt,0.02,")
    payload = json.loads(res.summary_json(check_ok=True))
    assert payload["pass"] is True
    assert payload["slope"] == 1.0
