"""Uniform tensor-product grids on the unit interval / unit square.

Fields live on nodes and are stored as flat float arrays of length
(n+1)**dim; in 2D the node (ix, iy) sits at flat index ix*(n+1)+iy.
All discrete calculus (gradient, laplacian, conductivity flux form,
trapezoid quadrature, boundary traces) is centralized here so that
every consumer differentiates and integrates the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# face name -> (axis, side); side 0 is the low end of the axis
_FACES = {
    1: {"left": (0, 0), "right": (0, 1)},
    2: {"west": (0, 0), "east": (0, 1), "south": (1, 0), "north": (1, 1)},
}


class GridError(ValueError):
    """Raised for malformed grid parameters or invalid fields."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with an even number of steps.

    The even-step requirement makes the interval midpoint an exact grid
    node, which the weighted snapshot checks rely on.
    """

    t0: float
    t_end: float
    steps: int
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.t_end > self.t0 >= 0.0):
            raise GridError(f"need t_end > t0 >= 0, got ({self.t0}, {self.t_end})")
        if self.steps < 2 or self.steps % 2 != 0:
            raise GridError(f"steps must be even and >= 2, got {self.steps}")
        object.__setattr__(
            self, "times", np.linspace(self.t0, self.t_end, self.steps + 1)
        )

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.steps

    @property
    def midpoint_index(self) -> int:
        return self.steps // 2

    @property
    def t_mid(self) -> float:
        # linspace midpoint of an even grid; pin the analytic value
        return 0.5 * (self.t0 + self.t_end)

    def index_of(self, t: float) -> int:
        i = int(round((t - self.t0) / self.dt))
        if i < 0 or i > self.steps or abs(self.times[i] - t) > 1e-12:
            raise GridError(f"t={t} is not a node of this time grid")
        return i

    def window(self, t0: float) -> tuple["TimeGrid", int]:
        """Sub-grid from t0 to t_end sharing the step size.

        Returns the window grid and the offset of its first node in this
        grid. The window must again have an even number of steps.
        """
        offset = self.index_of(t0)
        return TimeGrid(self.times[offset], self.t_end, self.steps - offset), offset


class Grid:
    """Nodes of [0,1]^dim at spacing h = 1/n, with a flagged observation
    boundary (gamma0) given as a list of face names."""

    def __init__(self, dimension: int, n: int, gamma0_faces: tuple[str, ...]):
        if dimension not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {dimension}")
        if n < 4:
            raise GridError(f"need at least 4 cells per axis, got n={n}")
        known = _FACES[dimension]
        if not gamma0_faces:
            raise GridError("gamma0_faces must name at least one face")
        for f in gamma0_faces:
            if f not in known:
                raise GridError(f"unknown face {f!r} for dimension {dimension}")
        if len(set(gamma0_faces)) != len(gamma0_faces):
            raise GridError("duplicate face in gamma0_faces")
        if set(gamma0_faces) == set(known):
            raise GridError("gamma0 must be a strict subset of the boundary")

        self.dimension = dimension
        self.n = n
        self.h = 1.0 / n
        self.gamma0_faces = tuple(gamma0_faces)
        self.shape = (n + 1,) * dimension
        self.n_nodes = (n + 1) ** dimension

        axis = np.linspace(0.0, 1.0, n + 1)
        if dimension == 1:
            self.coords = axis[:, None]
        else:
            xx, yy = np.meshgrid(axis, axis, indexing="ij")
            self.coords = np.column_stack([xx.ravel(), yy.ravel()])

        idx = np.arange(self.n_nodes).reshape(self.shape)
        bmask = np.zeros(self.shape, dtype=bool)
        for a in range(dimension):
            bmask[(slice(None),) * a + (0,)] = True
            bmask[(slice(None),) * a + (n,)] = True
        self.boundary_mask = bmask.ravel()
        self.interior_mask = ~self.boundary_mask

        self.face_names = tuple(known)
        self._face_nodes = {}
        self._face_normals = {}
        for name, (a, side) in known.items():
            sl = (slice(None),) * a + (n if side else 0,)
            self._face_nodes[name] = idx[sl].ravel().copy()
            nu = np.zeros(dimension)
            nu[a] = 1.0 if side else -1.0
            self._face_normals[name] = nu

        g0 = np.zeros(self.n_nodes, dtype=bool)
        for f in gamma0_faces:
            g0[self._face_nodes[f]] = True
        self.gamma0_mask = g0

        # outward normal per boundary node; a corner keeps the normal of
        # the first face that lists it (boundary integrals iterate faces
        # and use face normals, so corners are never read ambiguously)
        nrm = np.zeros((self.n_nodes, dimension))
        for name in reversed(self.face_names):
            nrm[self._face_nodes[name]] = self._face_normals[name]
        self.node_normals = nrm

    # -- structure queries ------------------------------------------------

    def face_nodes(self, face: str) -> np.ndarray:
        """Flat indices of the nodes of one closed face, in axis order."""
        return self._face_nodes[face]

    def face_normal(self, face: str) -> np.ndarray:
        return self._face_normals[face]

    def face_axis_weights(self, face: str) -> np.ndarray:
        """Trapezoid weights along one face (scalar 1.0 in 1D)."""
        if self.dimension == 1:
            return np.ones(1)
        return _axis_weights(self.n, self.h)

    def reshape(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat).reshape(self.shape)

    def node_index(self, *multi: int) -> int:
        return int(np.ravel_multi_index(multi, self.shape))

    def __repr__(self):
        return (
            f"Grid(dim={self.dimension}, n={self.n}, "
            f"gamma0={list(self.gamma0_faces)})"
        )


def build_grid(dimension: int, n: int, gamma0_faces) -> Grid:
    return Grid(dimension, n, tuple(gamma0_faces))


# -- stencils -------------------------------------------------------------


def _axis_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _d1(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered first derivative, second-order one-sided at the ends."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _d2(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered second derivative; one-sided 4-point closure at the ends
    (first-order there, which is all the boundary snapshots need).

    The interior stencil is written as a difference of first differences
    so that divergence_flux with unit conductivity reproduces it bit for
    bit, not just to round-off.
    """
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    d = v[1:] - v[:-1]
    out[1:-1] = (d[1:] - d[:-1]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def _flux_axis(c: np.ndarray, values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """d/dx (c d/dx) along one axis: conservative face-mean form at
    interior nodes, c*f'' + c'*f' with one-sided stencils at the ends.

    With c identically 1 this reproduces _d2 exactly at every node, so
    the laplacian really is the unit-conductivity special case.
    """
    cm = np.moveaxis(c, axis, 0)
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    cf = 0.5 * (cm[1:] + cm[:-1])  # conductivity on cell faces
    flux = cf * (v[1:] - v[:-1])
    out[1:-1] = (flux[1:] - flux[:-1]) / h**2

    def closure(i0, i1, i2, i3, sgn):
        d1 = sgn * (-3.0 * v[i0] + 4.0 * v[i1] - v[i2]) / (2.0 * h)
        dc = sgn * (-3.0 * cm[i0] + 4.0 * cm[i1] - cm[i2]) / (2.0 * h)
        d2 = (2.0 * v[i0] - 5.0 * v[i1] + 4.0 * v[i2] - v[i3]) / h**2
        return cm[i0] * d2 + dc * d1

    out[0] = closure(0, 1, 2, 3, 1.0)
    out[-1] = closure(-1, -2, -3, -4, -1.0)
    return np.moveaxis(out, 0, axis)


def discrete_gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Nodal gradient, shape (n_nodes, dim)."""
    v = grid.reshape(f)
    comps = [_d1(v, a, grid.h).ravel() for a in range(grid.dimension)]
    return np.column_stack(comps)


def discrete_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    v = grid.reshape(f)
    out = np.zeros(grid.shape)
    for a in range(grid.dimension):
        out += _d2(v, a, grid.h)
    return out.ravel()


def divergence_flux(c: np.ndarray, f: np.ndarray, grid: Grid,
                    positive: bool = True) -> np.ndarray:
    """div(c grad f) on nodes. c must be strictly positive unless the
    caller opts out (coefficient differences are sign-indefinite)."""
    c = np.asarray(c, dtype=float)
    if c.shape != (grid.n_nodes,):
        raise GridError(f"conductivity shape {c.shape} != ({grid.n_nodes},)")
    if not np.all(np.isfinite(c)) or (positive and np.any(c <= 0.0)):
        raise GridError("conductivity must be finite and strictly positive")
    cv = grid.reshape(c)
    v = grid.reshape(f)
    out = np.zeros(grid.shape)
    for a in range(grid.dimension):
        out += _flux_axis(cv, v, a, grid.h)
    return out.ravel()


def discrete_divergence(vec: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence of a nodal vector field (n_nodes, dim), same stencils
    as discrete_gradient componentwise."""
    out = np.zeros(grid.shape)
    for a in range(grid.dimension):
        out += _d1(grid.reshape(vec[:, a]), a, grid.h)
    return out.ravel()


def normal_derivative(f: np.ndarray, grid: Grid, face: str) -> np.ndarray:
    """Outward normal derivative on the nodes of one face."""
    axis, side = _FACES[grid.dimension][face]
    v = np.moveaxis(grid.reshape(f), axis, 0)
    if side:
        vals = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * grid.h)
    else:
        vals = -(-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * grid.h)
    return np.atleast_1d(np.asarray(vals)).ravel()


# -- quadrature -----------------------------------------------------------


def space_weights(grid: Grid) -> np.ndarray:
    w = _axis_weights(grid.n, grid.h)
    if grid.dimension == 1:
        return w
    return np.multiply.outer(w, w).ravel()


def quadrature_space(f: np.ndarray, grid: Grid) -> float:
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise GridError("non-finite values in quadrature")
    return float(space_weights(grid) @ f)


def quadrature_spacetime(values: np.ndarray, grid: Grid, tg: TimeGrid) -> float:
    """Trapezoid in time of trapezoid in space; values has shape
    (steps+1, n_nodes)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (tg.steps + 1, grid.n_nodes):
        raise GridError(
            f"space-time shape {values.shape} != ({tg.steps + 1}, {grid.n_nodes})"
        )
    if not np.all(np.isfinite(values)):
        raise GridError("non-finite values in quadrature")
    slice_ints = values @ space_weights(grid)
    tw = np.full(tg.steps + 1, tg.dt)
    tw[0] = tw[-1] = 0.5 * tg.dt
    return float(tw @ slice_ints)


def boundary_quadrature(trace_by_face: dict, grid: Grid) -> float:
    """Sum of per-face trapezoid integrals; trace_by_face maps face name
    to nodal values along that face."""
    total = 0.0
    for face, vals in trace_by_face.items():
        w = grid.face_axis_weights(face)
        total += float(w @ np.asarray(vals, dtype=float))
    return total
