"""Crank-Nicolson solver for d_t q = div(c(x) grad q) with Dirichlet data.

The semidiscrete operator is the flux-form stencil from the grid module,
assembled once as sparse matrices split into interior and boundary
columns.  Each step solves the symmetric positive definite system
(I - dt/2 A) v = rhs: by a prefactored banded Cholesky in 1D, by
conjugate gradients (relative residual 1e-10, warm started) in 2D.

The same matrices drive the discrete adjoint in the reconstruction
module, so the forward map and its transpose agree to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse

from .grid import Grid, GridError, TimeGrid, divergence_flux


class SolverError(RuntimeError):
    """Linear-solver stall or non-finite state during time stepping."""


@dataclass
class HeatProblem:
    """Conductivity, boundary data, initial state and positivity floor.

    g maps a time to a full-length nodal array; only its boundary entries
    are read.  verification_mode admits manufactured data violating the
    positivity floor (g = 0 and the like) and skips those checks.
    """

    c: np.ndarray
    g: Callable[[float], np.ndarray]
    q0: np.ndarray
    r: float = 1.0
    verification_mode: bool = False

    def validate(self, grid: Grid):
        c = np.asarray(self.c, dtype=float)
        q0 = np.asarray(self.q0, dtype=float)
        if c.shape != (grid.n_nodes,) or q0.shape != (grid.n_nodes,):
            raise GridError("c and q0 must be nodal fields on the grid")
        if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
            raise GridError("conductivity must be finite and positive")
        if not np.all(np.isfinite(q0)):
            raise GridError("q0 must be finite")
        if not self.verification_mode:
            if not (self.r > 0.0):
                raise GridError("positivity floor r must be > 0")
            if np.any(q0 < self.r - 1e-12):
                raise GridError("q0 violates the positivity floor")
        g0 = np.asarray(self.g(0.0), dtype=float)
        bnd = grid.boundary_mask
        if np.max(np.abs(q0[bnd] - g0[bnd])) > 1e-12:
            raise GridError("q0 and g(0) disagree on the boundary")


@dataclass
class SpaceTimeField:
    """values[time_index][node] over a full time grid."""

    values: np.ndarray
    grid: Grid
    timegrid: TimeGrid

    def __post_init__(self):
        expect = (self.timegrid.steps + 1, self.grid.n_nodes)
        if self.values.shape != expect:
            raise GridError(f"field shape {self.values.shape} != {expect}")

    def at_time(self, t: float) -> np.ndarray:
        return self.values[self.timegrid.index_of(t)]

    def window_values(self, window: TimeGrid) -> np.ndarray:
        """Rows of this field on the nodes of a sub-window."""
        off = self.timegrid.index_of(window.t0)
        if abs(window.dt - self.timegrid.dt) > 1e-14:
            raise GridError("window must share the step size")
        return self.values[off : off + window.steps + 1]


def flux_matrices(c: np.ndarray, grid: Grid):
    """Sparse interior rows of the flux-form operator.

    Returns (A_int, B_bd, interior_idx, boundary_idx): A_int acts on
    interior values, B_bd on boundary values, and for any full field f
    with interior part v and boundary part b,

        divergence_flux(c, f)[interior] == A_int v + B_bd b

    up to round-off (interior rows share the face-mean formula exactly).
    """
    c = np.asarray(c, dtype=float)
    cg = grid.reshape(c)
    idx = np.arange(grid.n_nodes).reshape(grid.shape)
    rows, cols, vals = [], [], []
    inv_h2 = 1.0 / grid.h**2
    for a in range(grid.dimension):
        ia = np.moveaxis(idx, a, 0)
        ca = np.moveaxis(cg, a, 0)
        i0 = ia[:-1].ravel()
        i1 = ia[1:].ravel()
        cf = (0.5 * (ca[:-1] + ca[1:])).ravel() * inv_h2
        rows.extend([i0, i0, i1, i1])
        cols.extend([i1, i0, i0, i1])
        vals.extend([cf, -cf, cf, -cf])
    A = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    ).tocsr()
    interior = np.flatnonzero(grid.interior_mask)
    boundary = np.flatnonzero(grid.boundary_mask)
    rows_int = A[interior]
    return (
        rows_int[:, interior].tocsr(),
        rows_int[:, boundary].tocsr(),
        interior,
        boundary,
    )


def _cg(matvec, b, x0, rtol, maxiter):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    for _ in range(maxiter):
        if np.sqrt(rs) <= rtol * bnorm:
            return x
        Ap = matvec(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(f"conjugate gradients stalled after {maxiter} iterations")


class CrankNicolsonStepper:
    """One-step map of the CN scheme for fixed conductivity.

    Exposes the pieces (A matvec, boundary matvec, B solve) so the
    reconstruction adjoint can transpose the exact discrete forward map.
    """

    def __init__(self, c: np.ndarray, grid: Grid, dt: float):
        self.grid = grid
        self.dt = dt
        self.A, self.Bbd, self.interior, self.boundary = flux_matrices(c, grid)
        n = self.A.shape[0]
        self.n_unknowns = n
        eye = scipy.sparse.identity(n, format="csr")
        self.B = (eye - 0.5 * dt * self.A).tocsr()
        if grid.dimension == 1:
            # symmetric tridiagonal; prefactor the banded Cholesky
            ab = np.zeros((2, n))
            ab[1] = self.B.diagonal()
            ab[0, 1:] = self.B.diagonal(1)
            self.chol = scipy.linalg.cholesky_banded(ab)
        else:
            self.chol = None
            self.maxiter = 10 * n

    def solve_B(self, rhs: np.ndarray, x0: np.ndarray) -> np.ndarray:
        if self.chol is not None:
            return scipy.linalg.cho_solve_banded((self.chol, False), rhs)
        return _cg(self.B.dot, rhs, x0, rtol=1e-10, maxiter=self.maxiter)

    def boundary_rhs(self, g_full: np.ndarray) -> np.ndarray:
        return self.Bbd @ g_full[self.boundary]

    def step(self, v: np.ndarray, b_old: np.ndarray, b_new: np.ndarray) -> np.ndarray:
        rhs = v + 0.5 * self.dt * (self.A @ v + b_old + b_new)
        return self.solve_B(rhs, v)


def solve_heat(problem: HeatProblem, grid: Grid, timegrid: TimeGrid) -> SpaceTimeField:
    problem.validate(grid)
    c = np.asarray(problem.c, dtype=float)
    stepper = CrankNicolsonStepper(c, grid, timegrid.dt)
    interior, boundary = stepper.interior, stepper.boundary

    values = np.empty((timegrid.steps + 1, grid.n_nodes))
    g_now = np.asarray(problem.g(timegrid.times[0]), dtype=float)
    state = np.asarray(problem.q0, dtype=float).copy()
    state[boundary] = g_now[boundary]
    values[0] = state

    v = state[interior].copy()
    b_now = stepper.boundary_rhs(g_now)
    for j in range(1, timegrid.steps + 1):
        t = timegrid.times[j]
        g_next = np.asarray(problem.g(t), dtype=float)
        if not problem.verification_mode and np.any(
            g_next[boundary] < problem.r - 1e-12
        ):
            raise GridError(f"boundary data violates the positivity floor at t={t}")
        b_next = stepper.boundary_rhs(g_next)
        v = stepper.step(v, b_now, b_next)
        row = np.empty(grid.n_nodes)
        row[interior] = v
        row[boundary] = g_next[boundary]
        values[j] = row
        b_now = b_next
    if not np.all(np.isfinite(values)):
        raise SolverError("non-finite state produced by time stepping")
    return SpaceTimeField(values=values, grid=grid, timegrid=timegrid)


def time_derivative(field: SpaceTimeField) -> SpaceTimeField:
    """Centered time differences, second-order one-sided at the ends.
    A field vanishing on the boundary stays exactly zero there."""
    v = field.values
    if v.shape[0] < 3:
        raise GridError("need at least 3 time slices")
    dt = field.timegrid.dt
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    return SpaceTimeField(values=out, grid=field.grid, timegrid=field.timegrid)


@dataclass
class SnapshotPackage:
    """T' slice of a field with its derived interior quantities."""

    t_prime: float
    q: np.ndarray
    grad_q: np.ndarray
    lap_q: np.ndarray
    grad_lap_q: np.ndarray
    divflux_q: np.ndarray


def snapshot_package(field: SpaceTimeField, grid: Grid, window: TimeGrid,
                     c: np.ndarray) -> SnapshotPackage:
    from .grid import discrete_gradient, discrete_laplacian

    t_prime = window.t_mid
    q = field.at_time(t_prime)
    lap = discrete_laplacian(q, grid)
    return SnapshotPackage(
        t_prime=t_prime,
        q=q.copy(),
        grad_q=discrete_gradient(q, grid),
        lap_q=lap,
        grad_lap_q=discrete_gradient(lap, grid),
        divflux_q=divergence_flux(np.asarray(c, dtype=float), q, grid),
    )


def dump_field_csv(field: SpaceTimeField, path):
    with open(path, "w", newline="") as fh:
        fh.write("t_index,node,value\n")
        for j in range(field.values.shape[0]):
            row = field.values[j]
            for i in range(row.shape[0]):
                fh.write(f"{j},{i},{row[i]:.17g}\n")
