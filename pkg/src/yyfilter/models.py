"""Filtering system definitions and the built-in benchmark registry.

A filtering system couples a hidden diffusion state

    dX_t = f(X_t) dt + g(X_t) dV_t

with an integrated observation process

    dY_t = h(X_t) dt + dW_t,   Y_0 = 0,

where V and W are independent standard Brownian motions and X_0 has
density sigma0.  Models carry their coefficient callbacks plus the
declared regularity constants consumed by :func:`validate_assumptions`.

Coefficient callbacks are batched: they take an ``(n, d)`` array of
points and return ``(n, d)`` (drift, observation), ``(n, d, d)``
(diffusion), or ``(n,)`` (initial density).  Callbacks must be pure and,
implicitly, twice continuously differentiable — the grid engine applies
second-order finite differences to them and this is assumed, not checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri


class RegistryError(KeyError):
    """Unknown benchmark model name."""


class CoefficientError(ValueError):
    """A coefficient callback returned a non-finite or malformed value."""


def as_points(x) -> np.ndarray:
    """Promote a single point to a (1, d) batch; pass batches through."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[None, :]
    return x


@dataclass(frozen=True)
class AssumptionProfile:
    """Declared regularity constants for one filtering system.

    lipschitz       global Lipschitz bound for the drift
    ellipticity     uniform lower eigenvalue bound for g g^T on the domain
    moment_order    highest checked moment of the initial density is 2n
    growth_order    polynomial growth order 2m allowed for test functions
    growth_bound    constant in |phi(x)| <= L (1 + |x|^{2m})
    """

    lipschitz: float
    ellipticity: float
    moment_order: int
    growth_order: int
    growth_bound: float

    def __post_init__(self):
        for name in ("lipschitz", "ellipticity", "growth_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.moment_order < 1:
            raise ValueError("moment_order must be a positive integer")
        if self.growth_order < 1:
            raise ValueError("growth_order must be a positive integer")


@dataclass(frozen=True)
class LinearSystem:
    """Matrices of a linear-Gaussian system: f = F x, g = Gamma, h = H x."""

    drift_matrix: np.ndarray
    diffusion_matrix: np.ndarray
    observation_matrix: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray


@dataclass(frozen=True)
class FilterModel:
    """Coefficient bundle defining one filtering system.

    Immutable after construction and safe to share across workers; the
    callbacks must be pure.  ``diffusion_sq`` recomputes a = g g^T on
    demand (grid code evaluates it once per node set and keeps the
    result, so no callback-level cache is needed).
    """

    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    observation: Callable[[np.ndarray], np.ndarray]
    initial_density: Callable[[np.ndarray], np.ndarray]
    assumptions: AssumptionProfile
    initial_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    linear: Optional[LinearSystem] = None
    sample_radius: float = 8.0

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError("only dimensions 1..3 are supported by the dense-grid path")

    def diffusion_sq(self, points: np.ndarray) -> np.ndarray:
        """a(x) = g(x) g(x)^T evaluated at a batch of points."""
        g = self.diffusion(as_points(points))
        return np.einsum("nij,nkj->nik", g, g)

    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n samples from the initial density."""
        if self.initial_sampler is not None:
            return self.initial_sampler(rng, n)
        return self._rejection_sample(rng, n)

    def _rejection_sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # Envelope: uniform on the cube of half-width sample_radius, with the
        # density bound estimated from a coarse scan and inflated for safety.
        r = self.sample_radius
        axes = [np.linspace(-r, r, 101)] * self.dim
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        bound = 1.5 * float(np.max(self.initial_density(mesh))) + 1e-12
        out = np.empty((n, self.dim))
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 64)
            prop = rng.uniform(-r, r, size=(m, self.dim))
            keep = rng.uniform(0, bound, size=m) < self.initial_density(prop)
            take = min(int(keep.sum()), n - filled)
            out[filled : filled + take] = prop[keep][:take]
            filled += take
        return out


@dataclass(frozen=True)
class TestFunction:
    """A readout phi with its declared polynomial growth envelope."""

    label: str
    fn: Callable[[np.ndarray], np.ndarray]
    growth_order: int = 1
    growth_bound: float = 1.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.fn(as_points(points))


def _const_one(points):
    return np.ones(points.shape[0])


def _coord_fn(points, i):
    return points[:, i]


def _coord_sq_fn(points, i):
    return points[:, i] ** 2


def _coord_prod_fn(points, i, j):
    return points[:, i] * points[:, j]


ONE = TestFunction("1", _const_one, growth_order=1, growth_bound=1.0)


def coordinate(i: int = 0) -> TestFunction:
    """phi(x) = x_i (conditional-mean readout)."""
    return TestFunction(f"x{i + 1}", partial(_coord_fn, i=i), growth_order=1, growth_bound=1.0)


def squared_coordinate(i: int = 0) -> TestFunction:
    """phi(x) = x_i^2 (second-moment readout)."""
    return TestFunction(
        f"x{i + 1}^2", partial(_coord_sq_fn, i=i), growth_order=1, growth_bound=1.0
    )


def coordinate_product(i: int, j: int) -> TestFunction:
    """phi(x) = x_i x_j (covariance readout)."""
    return TestFunction(
        f"x{i + 1}*x{j + 1}", partial(_coord_prod_fn, i=i, j=j), growth_order=1, growth_bound=1.0
    )


@dataclass(frozen=True)
class TimeSchedule:
    """Uniform partition of [0, T] into K steps of size dt = T/K.

    Knots are computed by index multiplication, (k*T)/K, never by
    accumulation, so tau_0 = 0 and tau_K = T exactly and increments
    equal dt up to one rounding ulp.
    """

    terminal: float
    steps: int

    def __post_init__(self):
        if self.terminal <= 0:
            raise ValueError("terminal time must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.terminal / self.steps

    @property
    def knots(self) -> np.ndarray:
        out = np.arange(self.steps + 1) * self.terminal / self.steps
        out[-1] = self.terminal  # index multiplication can misround the endpoint
        return out

    def refined(self, factor: int) -> "TimeSchedule":
        """Same horizon with `factor` times as many steps."""
        return TimeSchedule(self.terminal, self.steps * factor)


# ---------------------------------------------------------------------------
# Built-in benchmark registry.  Coefficient callbacks are module-level
# functions so models pickle cleanly into worker processes.
# ---------------------------------------------------------------------------


def _neg_x(points):
    return -points


def _tanh_drift(points):
    return np.tanh(points)


def _unit_diffusion(points):
    n, d = points.shape
    return np.broadcast_to(np.eye(d), (n, d, d)).copy()


def _identity_obs(points):
    return np.array(points, dtype=float)


def _cubic_obs(points):
    return points**3


def _std_normal_density(points):
    d = points.shape[1]
    return np.exp(-0.5 * np.sum(points**2, axis=1)) / (2 * math.pi) ** (d / 2)


def _std_normal_sampler(rng, n, d=1):
    # Inverse-CDF draw keeps registry sampling exact and reproducible.
    return ndtri(rng.random((n, d)))


_REGISTRY_NAMES = ("linear1d", "linearNd", "benes", "cubic_sensor")


def builtin_model(name: str, dim: Optional[int] = None) -> FilterModel:
    """Look up a benchmark model by name.

    `dim` applies only to "linearNd" (default 2).  Raises RegistryError
    listing the valid names when the name is unknown.
    """
    if name not in _REGISTRY_NAMES:
        raise RegistryError(
            f"unknown model {name!r}; valid names: {', '.join(_REGISTRY_NAMES)}"
        )

    if name == "linear1d":
        d = 1
    elif name == "linearNd":
        d = 2 if dim is None else int(dim)
        if not 2 <= d <= 3:
            raise ValueError("linearNd supports dim in {2, 3}")
    else:
        d = 1
        if dim not in (None, 1):
            raise ValueError(f"{name} is one-dimensional")

    profile = AssumptionProfile(
        lipschitz=1.0, ellipticity=1.0, moment_order=4, growth_order=2, growth_bound=1.0
    )

    if name in ("linear1d", "linearNd"):
        linear = LinearSystem(
            drift_matrix=-np.eye(d),
            diffusion_matrix=np.eye(d),
            observation_matrix=np.eye(d),
            prior_mean=np.zeros(d),
            prior_cov=np.eye(d),
        )
        return FilterModel(
            name=name,
            dim=d,
            drift=_neg_x,
            diffusion=_unit_diffusion,
            observation=_identity_obs,
            initial_density=_std_normal_density,
            assumptions=profile,
            initial_sampler=partial(_std_normal_sampler, d=d),
            linear=linear,
        )
    if name == "benes":
        return FilterModel(
            name=name,
            dim=1,
            drift=_tanh_drift,
            diffusion=_unit_diffusion,
            observation=_identity_obs,
            initial_density=_std_normal_density,
            assumptions=profile,
            initial_sampler=partial(_std_normal_sampler, d=1),
        )
    # cubic_sensor: the x^3 readout is the observation, not a test
    # function, so the growth envelope for phi stays at order 2.
    return FilterModel(
        name=name,
        dim=1,
        drift=_neg_x,
        diffusion=_unit_diffusion,
        observation=_cubic_obs,
        initial_density=_std_normal_density,
        assumptions=profile,
        initial_sampler=partial(_std_normal_sampler, d=1),
    )


def with_observation(model: FilterModel, observation, name_suffix: str = "custom_h") -> FilterModel:
    """Model variant with a replaced observation map (e.g. h == 0)."""
    return replace(model, name=f"{model.name}:{name_suffix}", observation=observation, linear=None)


# ---------------------------------------------------------------------------
# Assumption validation: statistical spot checks, never symbolic.
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    label: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    """Per-assumption spot-check outcomes on a ball of given radius."""

    domain_radius: float
    sampled_lipschitz: float
    sampled_eig_min: float
    moments: np.ndarray
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self):
        lines = [f"validation on |x| <= {self.domain_radius}:"]
        for c in self.checks:
            lines.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.label}: {c.detail}")
        return "\n".join(lines)


def _sample_ball(rng, n, d, radius):
    u = rng.standard_normal((n, d))
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    r = radius * rng.random(n) ** (1.0 / d)
    return u * r[:, None]


def _require_finite(values, name, points):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1))
        idx = int(bad[0, 0]) if bad.size else 0
        raise CoefficientError(f"{name} returned a non-finite value at point {points[idx]}")
    return values


def validate_assumptions(
    model: FilterModel,
    domain_radius: float,
    samples: int = 2000,
    seed: int = 0,
    test_functions: Sequence[TestFunction] = (),
) -> ValidationReport:
    """Spot-check the declared regularity constants by sampling.

    Checks, on the ball of the given radius: the drift difference
    quotient against the declared Lipschitz constant, the smallest
    eigenvalue of g g^T against the declared ellipticity floor, finiteness
    of the numerically integrated initial-density moments up to the
    declared order, and each test function against its growth envelope.
    Failures are reported in the result, not raised; non-finite
    coefficient evaluations raise CoefficientError naming the
    coefficient and the point.
    """
    if domain_radius <= 0:
        raise ValueError("domain_radius must be positive")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = np.random.default_rng(seed)
    d = model.dim
    prof = model.assumptions

    x = _sample_ball(rng, samples, d, domain_radius)
    y = _sample_ball(rng, samples, d, domain_radius)
    # Nearby pairs catch local slope maxima that far pairs average away.
    y_near = x + 1e-3 * _sample_ball(rng, samples, d, 1.0)

    fx = _require_finite(model.drift(x), "drift", x)
    _require_finite(model.observation(x), "observation", x)
    checks = []

    quotients = []
    for yy in (y, y_near):
        fy = _require_finite(model.drift(yy), "drift", yy)
        gap = np.linalg.norm(x - yy, axis=1)
        ok = gap > 1e-12
        quotients.append(np.linalg.norm(fx - fy, axis=1)[ok] / gap[ok])
    sampled_lip = float(np.max(np.concatenate(quotients)))
    checks.append(
        AssumptionCheck(
            "A1 drift Lipschitz",
            sampled_lip <= prof.lipschitz * 1.01,
            f"sampled quotient {sampled_lip:.6g} vs declared {prof.lipschitz}",
        )
    )

    a = _require_finite(model.diffusion_sq(x), "diffusion_sq", x)
    if d == 1:
        eig_min = float(np.min(a[:, 0, 0]))
    else:
        eig_min = float(np.min(np.linalg.eigvalsh(a)[:, 0]))
    checks.append(
        AssumptionCheck(
            "A2 ellipticity",
            eig_min >= prof.ellipticity * 0.99,
            f"sampled min eigenvalue {eig_min:.6g} vs declared floor {prof.ellipticity}",
        )
    )

    # A3: tensor-grid trapezoid moments of the initial density.
    m_axis = 301 if d == 1 else (101 if d == 2 else 41)
    axes = [np.linspace(-domain_radius, domain_radius, m_axis)] * d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    dens = _require_finite(model.initial_density(mesh), "initial_density", mesh)
    dx = axes[0][1] - axes[0][0]
    w1 = np.full(m_axis, dx)
    w1[[0, -1]] = dx / 2
    w = w1
    for _ in range(d - 1):
        w = np.multiply.outer(w, w1)
    w = w.reshape(-1)
    radii = np.linalg.norm(mesh, axis=1)
    moments = np.array(
        [float(np.sum(w * radii ** (2 * k) * dens)) for k in range(1, prof.moment_order + 1)]
    )
    checks.append(
        AssumptionCheck(
            "A3 initial moments",
            bool(np.all(np.isfinite(moments))),
            f"orders 2..{2 * prof.moment_order}: {np.array2string(moments, precision=4)}",
        )
    )

    for phi in test_functions:
        vals = np.abs(_require_finite(phi(x), f"test function {phi.label}", x))
        envelope = phi.growth_bound * (1 + np.linalg.norm(x, axis=1) ** (2 * phi.growth_order))
        ok = bool(np.all(vals <= envelope * 1.01))
        checks.append(
            AssumptionCheck(
                f"A4 growth of {phi.label}",
                ok,
                f"max |phi|/envelope = {float(np.max(vals / envelope)):.4g}",
            )
        )

    return ValidationReport(
        domain_radius=domain_radius,
        sampled_lipschitz=sampled_lip,
        sampled_eig_min=eig_min,
        moments=moments,
        checks=checks,
    )
