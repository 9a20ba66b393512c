"""Measurement extraction and the weighted norms used by every estimate.

The measured data are the normal flux of the time derivative on the
observation boundary over the window (t0, T), plus one interior snapshot
at the window midpoint T' (the field, its gradient, laplacian and
gradient of laplacian).

Space-time integrals over the window use interior time nodes with
uniform weight dt: the weighted integrands vanish at the endpoints by
construction, and the plain integrals share the same measure so that
weighted/plain comparisons are like for like.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import SpaceTimeField, snapshot_package, time_derivative
from .grid import Grid, GridError, TimeGrid, normal_derivative, space_weights
from .weights import WeightSet


@dataclass
class ObservationSet:
    """flux[face] has shape (window interior nodes, face nodes); the
    snapshots are nodal fields at T'."""

    faces: tuple
    flux: dict
    q: np.ndarray
    grad_q: np.ndarray
    lap_q: np.ndarray
    grad_lap_q: np.ndarray
    t_prime: float

    def validate(self):
        for face, arr in self.flux.items():
            if not np.all(np.isfinite(arr)):
                raise GridError(f"non-finite flux trace on face {face!r}")
        for name in ("q", "grad_q", "lap_q", "grad_lap_q"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise GridError(f"non-finite snapshot {name}")


def extract_observations(field: SpaceTimeField, grid: Grid, window: TimeGrid,
                         c: np.ndarray) -> ObservationSet:
    y = time_derivative(field)
    off = field.timegrid.index_of(window.t0)
    flux = {}
    for face in grid.gamma0_faces:
        rows = []
        for j in range(1, window.steps):
            rows.append(normal_derivative(y.values[off + j], grid, face))
        flux[face] = np.array(rows)
    snap = snapshot_package(field, grid, window, c)
    obs = ObservationSet(
        faces=tuple(grid.gamma0_faces),
        flux=flux,
        q=snap.q,
        grad_q=snap.grad_q,
        lap_q=snap.lap_q,
        grad_lap_q=snap.grad_lap_q,
        t_prime=snap.t_prime,
    )
    obs.validate()
    return obs


def observation_difference(a: ObservationSet, b: ObservationSet) -> ObservationSet:
    if a.faces != b.faces:
        raise GridError("observation sets cover different faces")
    return ObservationSet(
        faces=a.faces,
        flux={f: a.flux[f] - b.flux[f] for f in a.faces},
        q=a.q - b.q,
        grad_q=a.grad_q - b.grad_q,
        lap_q=a.lap_q - b.lap_q,
        grad_lap_q=a.grad_lap_q - b.grad_lap_q,
        t_prime=a.t_prime,
    )


# -- weighted norms -------------------------------------------------------


def _square(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:  # vector field: sum of squared components
        return np.sum(field**2, axis=1)
    return field**2


def _check_finite(integrand: np.ndarray, what: str):
    if not np.all(np.isfinite(integrand)):
        where = np.argwhere(~np.isfinite(integrand))[0]
        raise GridError(f"non-finite {what} integrand at index {tuple(where)}")


def weighted_norm_space(field: np.ndarray, ws: WeightSet, k: float) -> float:
    """integral of phi^k e^{-2s(eta - eta_ref)} |field|^2 at the T' slice."""
    vals = _square(field) * ws.weight_tprime(k)
    _check_finite(vals, "weighted space")
    return float(space_weights(ws.grid) @ vals)


def weighted_norm_spacetime(values: np.ndarray, ws: WeightSet, k: float) -> float:
    """Same weight over the whole window; values is (steps+1, nodes) on the
    window or a static field broadcast in time."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1 or (values.ndim == 2 and values.shape[0] == ws.grid.n_nodes
                            and values.shape[1] == ws.grid.dimension):
        sq = _square(values)[None, :]
    elif values.ndim == 3:  # time-dependent vector field
        if values.shape != (ws.timegrid.steps + 1, ws.grid.n_nodes,
                            ws.grid.dimension):
            raise GridError(f"window vector field has shape {values.shape}")
        sq = np.sum(values[1:-1] ** 2, axis=2)
    else:
        if values.shape != (ws.timegrid.steps + 1, ws.grid.n_nodes):
            raise GridError(f"window field has shape {values.shape}")
        sq = values[1:-1] ** 2
    vals = sq * ws.weight_st(k)
    _check_finite(vals, "weighted space-time")
    slice_ints = vals @ space_weights(ws.grid)
    return float(ws.timegrid.dt * slice_ints.sum())


def weighted_boundary_norm(trace_by_face: dict, ws: WeightSet,
                           normal_beta_factor: bool = False) -> float:
    """integral over (t0,T) x gamma0 of phi e^{-2s(eta-eta_ref)} |trace|^2,
    optionally carrying the d_nu(beta) factor the two-sided stability
    check puts on its observation term."""
    grid = ws.grid
    total = 0.0
    for face, trace in trace_by_face.items():
        nodes = grid.face_nodes(face)
        trace = np.asarray(trace, dtype=float)
        if trace.shape != (ws.timegrid.steps - 1, nodes.size):
            raise GridError(
                f"trace on face {face!r} has shape {trace.shape}, expected "
                f"({ws.timegrid.steps - 1}, {nodes.size})"
            )
        factor = np.exp(ws.log_weight(1.0)[:, nodes])
        if normal_beta_factor:
            factor = factor * ws.normal_beta(face)[None, :]
        vals = factor * trace**2
        _check_finite(vals, "weighted boundary")
        w_face = grid.face_axis_weights(face)
        total += float(ws.timegrid.dt * np.sum(vals @ w_face))
    return total


# -- plain (unweighted) companions ---------------------------------------


def norm_space_plain(field: np.ndarray, grid: Grid) -> float:
    vals = _square(field)
    _check_finite(vals, "space")
    return float(space_weights(grid) @ vals)


def norm_spacetime_plain(values: np.ndarray, grid: Grid, window: TimeGrid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape != (window.steps + 1, grid.n_nodes):
        raise GridError(f"window field has shape {values.shape}")
    vals = values[1:-1] ** 2
    _check_finite(vals, "space-time")
    return float(window.dt * np.sum(vals @ space_weights(grid)))


def boundary_norm_plain(trace_by_face: dict, grid: Grid, window: TimeGrid) -> float:
    total = 0.0
    for face, trace in trace_by_face.items():
        trace = np.asarray(trace, dtype=float)
        _check_finite(trace, "boundary trace")
        w_face = grid.face_axis_weights(face)
        total += float(window.dt * np.sum(trace**2 @ w_face))
    return total


def observation_distance_plain(a: ObservationSet, b: ObservationSet,
                               grid: Grid, window: TimeGrid) -> dict:
    """The four-term unweighted data distance: boundary flux difference
    over the window plus the three T'-snapshot derivative differences."""
    d = observation_difference(a, b)
    terms = {
        "flux": boundary_norm_plain(d.flux, grid, window),
        "grad_lap": norm_space_plain(d.grad_lap_q, grid),
        "lap": norm_space_plain(d.lap_q, grid),
        "grad": norm_space_plain(d.grad_q, grid),
    }
    terms["total"] = sum(terms.values())
    return terms


# -- CSV round trip -------------------------------------------------------


def observations_to_csv(obs: ObservationSet, path):
    with open(path, "w", newline="") as fh:
        fh.write("kind,index1,index2,value\n")
        for face in obs.faces:
            arr = obs.flux[face]
            for ti in range(arr.shape[0]):
                for ni in range(arr.shape[1]):
                    fh.write(f"flux:{face},{ni},{ti},{arr[ti, ni]:.17g}\n")
        for name in ("q", "lap_q"):
            arr = getattr(obs, name)
            for ni in range(arr.shape[0]):
                fh.write(f"{name},{ni},0,{arr[ni]:.17g}\n")
        for name in ("grad_q", "grad_lap_q"):
            arr = getattr(obs, name)
            for ni in range(arr.shape[0]):
                for comp in range(arr.shape[1]):
                    fh.write(f"{name},{ni},{comp},{arr[ni, comp]:.17g}\n")
        fh.write(f"t_prime,0,0,{obs.t_prime:.17g}\n")


def observations_from_csv(path, grid: Grid, window: TimeGrid) -> ObservationSet:
    flux = {
        face: np.zeros((window.steps - 1, grid.face_nodes(face).size))
        for face in grid.gamma0_faces
    }
    n = grid.n_nodes
    dim = grid.dimension
    q = np.zeros(n)
    lap_q = np.zeros(n)
    grad_q = np.zeros((n, dim))
    grad_lap_q = np.zeros((n, dim))
    t_prime = None
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "kind,index1,index2,value":
            raise GridError(f"unexpected observation CSV header: {header!r}")
        for line in fh:
            kind, i1, i2, val = line.strip().split(",")
            i1, i2, val = int(i1), int(i2), float(val)
            if kind.startswith("flux:"):
                flux[kind[5:]][i2, i1] = val
            elif kind == "q":
                q[i1] = val
            elif kind == "lap_q":
                lap_q[i1] = val
            elif kind == "grad_q":
                grad_q[i1, i2] = val
            elif kind == "grad_lap_q":
                grad_lap_q[i1, i2] = val
            elif kind == "t_prime":
                t_prime = val
            else:
                raise GridError(f"unknown observation kind {kind!r}")
    if t_prime is None:
        raise GridError("observation CSV missing the t_prime record")
    obs = ObservationSet(
        faces=tuple(grid.gamma0_faces), flux=flux, q=q, grad_q=grad_q,
        lap_q=lap_q, grad_lap_q=grad_lap_q, t_prime=t_prime,
    )
    obs.validate()
    return obs
