"""Weighted energy of the sensitivity rate and the two endpoint bounds.

E(t) integrates c phi^{-1} e^{-2s(eta - eta_ref)} |grad y|^2 in space at
each interior node of the observation window.  The inverse power of phi
and the eta decay kill both window endpoints, which is what makes the
midpoint value E(T') the meaningful scalar here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import SpaceTimeField, time_derivative
from .grid import (
    GridError,
    discrete_gradient,
    divergence_flux,
    normal_derivative,
    space_weights,
)
from .observe import (
    weighted_boundary_norm,
    weighted_norm_space,
    weighted_norm_spacetime,
)
from .poincare import check_flat_boundary
from .report import EstimateReport
from .weights import WeightSet

BOUNDARY_TRACE_TOL = 1e-10


@dataclass(frozen=True)
class EnergyCurve:
    """E at the interior window nodes, with the midpoint value pulled out."""

    times: np.ndarray
    values: np.ndarray
    s: float
    lam: float
    e_tprime: float

    def to_csv(self, path):
        from .report import fmt

        lines = ["t,E"]
        for t, e in zip(self.times, self.values):
            lines.append(f"{fmt(t)},{fmt(e)}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _window_rows(y: SpaceTimeField, ws: WeightSet) -> np.ndarray:
    rows = y.window_values(ws.timegrid)
    if np.max(np.abs(rows[:, y.grid.boundary_mask])) > BOUNDARY_TRACE_TOL:
        raise GridError("rate field must vanish on the boundary")
    return rows


def energy(y: SpaceTimeField, c: np.ndarray, ws: WeightSet) -> EnergyCurve:
    grid = ws.grid
    c = np.asarray(c, dtype=float)
    if c.shape != (grid.n_nodes,):
        raise GridError(f"conductivity shape {c.shape}")
    rows = _window_rows(y, ws)[1:-1]
    weight = ws.weight_st(-1)
    sw = space_weights(grid)
    values = np.empty(rows.shape[0])
    for j, row in enumerate(rows):
        grad = discrete_gradient(row, grid)
        values[j] = float(sw @ (c * weight[j] * np.sum(grad**2, axis=1)))
    if not np.all(np.isfinite(values)):
        raise GridError("non-finite energy value")
    curve = EnergyCurve(
        times=ws.times_interior.copy(),
        values=values,
        s=ws.s,
        lam=ws.lam,
        e_tprime=float(values[ws.tprime_row]),
    )
    return curve


def energy_tprime_direct(y: SpaceTimeField, c: np.ndarray,
                         ws: WeightSet) -> float:
    """Second code path for E(T'): midpoint-slice quadrature through the
    T'-specific weight table instead of the full curve."""
    yt = y.at_time(ws.timegrid.t_mid)
    grad = discrete_gradient(yt, ws.grid)
    scaled = np.sqrt(np.asarray(c, dtype=float))[:, None] * grad
    return weighted_norm_space(scaled, ws, -1)


def _boundary_traces(y: SpaceTimeField, ws: WeightSet) -> dict:
    rows = _window_rows(y, ws)
    grid = ws.grid
    steps = ws.timegrid.steps
    return {
        face: np.array([
            normal_derivative(rows[j], grid, face) for j in range(1, steps)
        ])
        for face in grid.gamma0_faces
    }


def _coeff_mass(gamma: np.ndarray, ws: WeightSet) -> float:
    grad = discrete_gradient(gamma, ws.grid)
    return (weighted_norm_spacetime(gamma, ws, 0)
            + weighted_norm_spacetime(grad, ws, 0))


def snapshot_bound_sides(y: SpaceTimeField, gamma: np.ndarray, c: np.ndarray,
                         ws: WeightSet) -> EstimateReport:
    """Midpoint mass of the rate field against boundary flux plus the
    fractional-power coefficient mass."""
    check_flat_boundary(gamma, ws.grid)
    lhs = {
        "snapshot": weighted_norm_space(y.at_time(ws.timegrid.t_mid), ws, 0),
    }
    rhs = {
        "boundary": ws.lam**0.5 * weighted_boundary_norm(
            _boundary_traces(y, ws), ws),
        "coeff": ws.s**-0.5 * ws.lam**-0.5 * _coeff_mass(gamma, ws),
    }
    return EstimateReport(
        name="snapshot_bound",
        lhs_terms=lhs,
        rhs_terms=rhs,
        params={"s": ws.s, "lam": ws.lam, "n": ws.grid.n,
                "eta_ref": ws.eta_ref},
    ).validate()


def energy_bound_sides(y: SpaceTimeField, gamma: np.ndarray, c: np.ndarray,
                       ws: WeightSet) -> EstimateReport:
    """E(T') against the s-weighted boundary flux and coefficient mass."""
    check_flat_boundary(gamma, ws.grid)
    curve = energy(y, c, ws)
    lhs = {"energy": curve.e_tprime}
    rhs = {
        "boundary": ws.s * ws.lam * weighted_boundary_norm(
            _boundary_traces(y, ws), ws),
        "coeff": ws.s * _coeff_mass(gamma, ws),
    }
    return EstimateReport(
        name="energy_bound",
        lhs_terms=lhs,
        rhs_terms=rhs,
        params={"s": ws.s, "lam": ws.lam, "n": ws.grid.n,
                "eta_ref": ws.eta_ref},
    ).validate()


def forcing_field(gamma: np.ndarray, q_tilde: SpaceTimeField) -> SpaceTimeField:
    """Diagnostic: the explicit forcing div(gamma grad d_t q_tilde) that
    drives the rate equation; never used by the bound checks themselves."""
    check_flat_boundary(gamma, q_tilde.grid)
    rate = time_derivative(q_tilde)
    vals = np.empty_like(rate.values)
    for j, row in enumerate(rate.values):
        vals[j] = divergence_flux(gamma, row, q_tilde.grid, positive=False)
    if not np.all(np.isfinite(vals)):
        raise GridError("non-finite forcing value")
    return SpaceTimeField(values=vals, grid=q_tilde.grid,
                          timegrid=q_tilde.timegrid)
