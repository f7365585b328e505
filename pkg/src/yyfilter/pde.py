"""Offline grid stage: spatial discretization, generator assembly, and
the semigroup / exponential-update primitives.

The truncation domain is the cube [-R, R]^d with zero Dirichlet boundary
(it contains the ball of radius R; reported radii are inscribed-ball
radii).  The generator discretizes

    A u = 1/2 sum_ij d2(a^ij u)/dx_i dx_j - sum_i d(f_i u)/dx_i - 1/2 |h|^2 u

with second-order central differences in conservative form: derivatives
act on the products a^ij u and f_i u, evaluated at the source node of
each stencil entry.  Time stepping is Crank-Nicolson; in 1D the tridiagonal
systems are solved directly (banded), in 2D/3D by BiCGSTAB with diagonal
preconditioning at relative residual 1e-10.

Fields carry a log-scale factor: a DensityField represents
exp(log_scale) * values, and integrals come back as (mantissa, log_scale)
pairs so the online loop never underflows.  Renormalization policy lives
in the filter loop, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, bicgstab

from .models import FilterModel, TestFunction, as_points


class AssemblyError(ValueError):
    """Generator assembly refused (degenerate diffusion at a node)."""


class SolverError(RuntimeError):
    """Linear solve failed or produced non-finite values."""


class ScaledValue(NamedTuple):
    """A scalar represented as mantissa * exp(log_scale)."""

    mantissa: float
    log_scale: float

    @property
    def value(self) -> float:
        return self.mantissa * math.exp(self.log_scale)


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid on [-R, R]^d.

    Nodes are stored flat in row-major order; `coords` is (N, d),
    `trap_weights` holds the tensor trapezoid quadrature weight of each
    node, and `boundary_mask` marks nodes with any coordinate at +-R.
    """

    dim: int
    radius: float
    points_per_axis: int
    spacing: float
    axis: np.ndarray
    coords: np.ndarray
    boundary_mask: np.ndarray
    trap_weights: np.ndarray
    node_radii: np.ndarray

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask


def build_grid(dim: int, radius: float, points: int) -> Grid:
    """Uniform tensor grid with M nodes per axis, M odd so the origin is a node."""
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if points < 3:
        raise ValueError("points per axis must be >= 3")
    if points % 2 == 0:
        raise ValueError("points per axis must be odd so the origin is a node")

    axis = np.linspace(-radius, radius, points)
    axis[(points - 1) // 2] = 0.0  # exact origin; endpoints are exact already
    spacing = 2 * radius / (points - 1)

    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    coords = np.stack(mesh, axis=-1).reshape(-1, dim)

    idx = np.arange(points)
    edge = (idx == 0) | (idx == points - 1)
    bmask = np.zeros((points,) * dim, dtype=bool)
    for ax in range(dim):
        shape = [1] * dim
        shape[ax] = points
        bmask |= edge.reshape(shape)

    w1 = np.full(points, spacing)
    w1[[0, -1]] = spacing / 2
    w = w1
    for _ in range(dim - 1):
        w = np.multiply.outer(w, w1)

    return Grid(
        dim=dim,
        radius=radius,
        points_per_axis=points,
        spacing=spacing,
        axis=axis,
        coords=coords,
        boundary_mask=bmask.reshape(-1),
        trap_weights=w.reshape(-1),
        node_radii=np.linalg.norm(coords, axis=1),
    )


def mollifier(grid: Grid) -> np.ndarray:
    """Smooth cutoff: 1 on |x| <= R - 1/R, 0 on |x| >= R, C^2 smoothstep between.

    The transition uses s(t) = t^3 (10 - 15 t + 6 t^2) of the normalized
    distance to the boundary; values lie in [0, 1].
    """
    R = grid.radius
    if R <= 1:
        raise ValueError("mollifier requires R > 1 so that R - 1/R > 0")
    t = np.clip((R - grid.node_radii) * R, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


@dataclass(frozen=True)
class DensityField:
    """Grid-sampled nonnegative field representing exp(log_scale) * values.

    `clamped_mass` records the negative mass removed by the most recent
    propagation step (zero for freshly constructed fields).
    """

    grid: Grid
    values: np.ndarray
    log_scale: float = 0.0
    clamped_mass: float = 0.0

    def mass(self) -> ScaledValue:
        return integrate(self, None)

    def represented(self) -> np.ndarray:
        return self.values * math.exp(self.log_scale)

    def to_csv(self) -> str:
        lines = [f"# log_scale={self.log_scale!r}"]
        cols = [f"x_{i + 1}" for i in range(self.grid.dim)] + ["value"]
        lines.append(",".join(cols))
        for pt, v in zip(self.grid.coords, self.values):
            lines.append(",".join([repr(float(c)) for c in pt] + [repr(float(v))]))
        return "\n".join(lines) + "\n"


def discretize_initial(model: FilterModel, grid: Grid) -> DensityField:
    """Initial field sigma0 * S_R on the grid, zero on the boundary."""
    vals = np.asarray(model.initial_density(grid.coords), dtype=float) * mollifier(grid)
    vals[grid.boundary_mask] = 0.0
    if not np.any(vals > 0):
        raise ValueError(
            "initial density vanishes on the whole grid; its support lies "
            "outside the domain — increase the radius R"
        )
    return DensityField(grid, vals, 0.0)


@dataclass(frozen=True)
class DiscreteGenerator:
    """Sparse discretization of the per-step evolution operator.

    Rows for boundary nodes are zero (Dirichlet).  For 1D grids the
    three diagonals are kept alongside the CSR matrix so Crank-Nicolson
    can use a direct banded solve.
    """

    grid: Grid
    matrix: sp.csr_matrix
    tridiag: Optional[tuple] = None  # (lower, diag, upper) for dim == 1


def assemble_generator(model: FilterModel, grid: Grid) -> DiscreteGenerator:
    """Assemble the conservative-form generator on interior nodes.

    Refuses assembly if the diffusion matrix a = g g^T is degenerate
    (smallest eigenvalue <= 0) at any node.
    """
    d = grid.dim
    M = grid.points_per_axis
    N = grid.n_nodes
    dx = grid.spacing

    a = model.diffusion_sq(grid.coords)  # (N, d, d)
    f = np.asarray(model.drift(grid.coords), dtype=float)  # (N, d)
    h = np.asarray(model.observation(grid.coords), dtype=float)  # (N, d)
    if d == 1:
        eig_min = a[:, 0, 0]
    else:
        eig_min = np.linalg.eigvalsh(a)[:, 0]
    bad = np.where(eig_min <= 1e-14)[0]
    if bad.size:
        node = grid.coords[bad[0]]
        raise AssemblyError(
            f"diffusion matrix is degenerate at node {node} "
            f"(min eigenvalue {eig_min[bad[0]]:.3g}); assembly refused"
        )

    strides = np.array([M**k for k in range(d - 1, -1, -1)], dtype=np.int64)
    interior = np.where(grid.interior_mask)[0]

    rows = []
    cols = []
    data = []

    # Diagonal: -sum_i a^ii(x)/dx^2 - |h(x)|^2/2.
    a_diag = a[:, np.arange(d), np.arange(d)]  # (N, d)
    diag = -np.sum(a_diag[interior], axis=1) / dx**2
    diag = diag - 0.5 * np.sum(h[interior] ** 2, axis=1)
    rows.append(interior)
    cols.append(interior)
    data.append(diag)

    # Axis neighbors: second-difference of a^ii u plus central drift flux.
    for ax in range(d):
        for sgn in (1, -1):
            nb = interior + sgn * strides[ax]
            entry = a[nb, ax, ax] / (2 * dx**2) - sgn * f[nb, ax] / (2 * dx)
            rows.append(interior)
            cols.append(nb)
            data.append(entry)

    # Cross terms i < j: full-weight mixed second difference of a^ij u
    # (the 1/2 prefactor cancels against the symmetric (j, i) term).
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1, -1):
                for sj in (1, -1):
                    nb = interior + si * strides[i] + sj * strides[j]
                    entry = si * sj * a[nb, i, j] / (4 * dx**2)
                    rows.append(interior)
                    cols.append(nb)
                    data.append(entry)

    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    ).tocsr()

    tridiag = None
    if d == 1:
        lower = np.zeros(N)
        main = np.zeros(N)
        upper = np.zeros(N)
        main[interior] = diag
        upper[interior + 1] = a[interior + 1, 0, 0] / (2 * dx**2) - f[interior + 1, 0] / (2 * dx)
        lower[interior - 1] = a[interior - 1, 0, 0] / (2 * dx**2) + f[interior - 1, 0] / (2 * dx)
        tridiag = (lower, main, upper)

    return DiscreteGenerator(grid=grid, matrix=mat, tridiag=tridiag)


def _cn_banded_step(gen: DiscreteGenerator, v: np.ndarray, c: float, n_steps: int) -> np.ndarray:
    lower, main, upper = gen.tridiag
    N = v.size
    # solve_banded layout: ab[0] = superdiagonal, ab[1] = diagonal, ab[2] = subdiagonal.
    ab = np.zeros((3, N))
    ab[0, 1:] = -c * upper[1:]
    ab[1] = 1.0 - c * main
    ab[2, :-1] = -c * lower[:-1]
    A = gen.matrix
    for _ in range(n_steps):
        rhs = v + c * (A @ v)
        v = solve_banded((1, 1), ab, rhs, check_finite=False)
    return v


def _cn_krylov_step(gen: DiscreteGenerator, v: np.ndarray, c: float, n_steps: int) -> np.ndarray:
    A = gen.matrix
    N = v.size
    lhs = (sp.identity(N, format="csr") - c * A).tocsr()
    inv_diag = 1.0 / lhs.diagonal()
    precond = LinearOperator((N, N), matvec=lambda x: inv_diag * x)
    for _ in range(n_steps):
        rhs = v + c * (A @ v)
        v, info = bicgstab(lhs, rhs, x0=v, rtol=1e-10, atol=0.0, M=precond, maxiter=2000)
        if info != 0:
            raise SolverError(
                f"implicit solve did not converge (bicgstab info={info}, "
                f"iteration budget 2000)"
            )
    return v


def propagate(
    gen: DiscreteGenerator, field: DensityField, dt: float, substeps: int = 1
) -> DensityField:
    """Advance a field by dt with Crank-Nicolson over `substeps` stages.

    Solves (I - c A) v_{j+1} = (I + c A) v_j with c = dt / (2 substeps).
    Negative undershoot is clamped to zero after the final stage and the
    removed mass is recorded on the result's `clamped_mass`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    c = dt / (2 * substeps)
    v = field.values.astype(float, copy=True)
    if gen.tridiag is not None:
        v = _cn_banded_step(gen, v, c, substeps)
    else:
        v = _cn_krylov_step(gen, v, c, substeps)
    if not np.all(np.isfinite(v)):
        raise SolverError("propagation produced non-finite values")
    neg = v < 0
    clamped = float(-np.sum(v[neg] * field.grid.trap_weights[neg])) if neg.any() else 0.0
    if neg.any():
        v[neg] = 0.0
    v[field.grid.boundary_mask] = 0.0
    return DensityField(field.grid, v, field.log_scale, clamped_mass=clamped)


def exp_update(field: DensityField, model: FilterModel, dy: np.ndarray) -> DensityField:
    """Multiply the field by exp(h(x)^T dy), rescaled to avoid overflow.

    The maximum of the exponent over the field's support moves into
    log_scale, so the stored values never exceed their previous size.
    """
    dy = np.atleast_1d(np.asarray(dy, dtype=float))
    if not np.all(np.isfinite(dy)):
        raise ValueError("observation increment must be finite")
    h = np.asarray(model.observation(field.grid.coords), dtype=float)
    expo = h @ dy
    support = field.values > 0
    shift = float(np.max(expo[support])) if support.any() else 0.0
    vals = field.values * np.exp(expo - shift)
    return DensityField(field.grid, vals, field.log_scale + shift, field.clamped_mass)


def integrate(field: DensityField, weight=None) -> ScaledValue:
    """Trapezoid integral of weight * field over the grid.

    `weight` may be None (constant 1), a TestFunction, or a raw batched
    callable.  The result is (mantissa, log_scale) with the field's
    log-scale passed through untouched.
    """
    if weight is None:
        w = field.values
    else:
        fn = weight.fn if isinstance(weight, TestFunction) else weight
        w = np.asarray(fn(field.grid.coords), dtype=float) * field.values
    return ScaledValue(float(np.dot(field.grid.trap_weights, w)), field.log_scale)
