"""Coefficient stability experiment and output-least-squares recovery.

The estimate side solves the twin problems for a coefficient pair,
forms the rate field, and compares the weighted midpoint mass of the
coefficient difference against the observed boundary flux (weighted
form) and against the unweighted observation distance (plain form).

The inverse side minimizes

    J(c) = 1/2 |d_nu d_t q[c] - d|^2 + alpha/2 |c - prior|^2_H1

by projected gradient descent.  The gradient transposes the exact
Crank-Nicolson update, so the finite-difference check is sharp: the
adjoint recursion reuses the same prefactored B = I - dt/2 A (symmetric,
so B and its transpose share the factorization), and the coefficient
derivative accumulates over lattice faces, mirroring the face-mean flux
assembly node for node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .forward import (
    CrankNicolsonStepper,
    HeatProblem,
    SolverError,
    SpaceTimeField,
    solve_heat,
    snapshot_package,
    time_derivative,
)
from .grid import (
    Grid,
    GridError,
    TimeGrid,
    discrete_gradient,
    normal_derivative,
    space_weights,
)
from .observe import (
    ObservationSet,
    extract_observations,
    observation_distance_plain,
    weighted_boundary_norm,
    weighted_norm_space,
)
from .poincare import build_transport_base, _require_nondegenerate
from .report import EstimateReport
from .setups import ExperimentSetup
from .weights import WeightSet

_FACE_STENCIL = (3.0, -4.0, 1.0)  # one-sided derivative layers, over 2h


# -- admissible set -------------------------------------------------------


def admissible_mask(grid: Grid) -> np.ndarray:
    """Interior nodes whose perturbations keep the coefficient boundary
    layer flat: the two end nodes are pinned in 1D, the outer two rings
    in 2D.  (In 1D, pinning the first interior node as well would bias
    any reconstruction of a quartic-flat bump by more than the target
    accuracy, so only the trace is enforced there.)"""
    n = grid.n
    depth = 1 if grid.dimension == 1 else 2
    keep = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dimension):
        ax = np.arange(n + 1)
        close = (ax <= depth - 1) | (ax >= n + 1 - depth)
        shape = [1] * grid.dimension
        shape[a] = n + 1
        keep &= ~close.reshape(shape)
    return keep.ravel()


def admissible_projection(v: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.asarray(v, dtype=float).copy()
    out[~admissible_mask(grid)] = 0.0
    return out


@dataclass(frozen=True)
class CoefficientPair:
    """Positive coefficient pair with an admissible difference."""

    c: np.ndarray
    c_tilde: np.ndarray
    gamma: np.ndarray


def make_pair(c_tilde: np.ndarray, gamma: np.ndarray, grid: Grid,
              c_min: float = 1e-3) -> CoefficientPair:
    """Projects the difference onto the admissible set, then validates
    positivity of both coefficients."""
    c_tilde = np.asarray(c_tilde, dtype=float)
    if c_tilde.shape != (grid.n_nodes,):
        raise GridError(f"coefficient shape {c_tilde.shape}")
    gamma = admissible_projection(gamma, grid)
    c = c_tilde + gamma
    if np.any(c_tilde < c_min) or np.any(c < c_min):
        raise GridError("coefficient pair dips below the positivity floor")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(c_tilde))):
        raise GridError("non-finite coefficient")
    return CoefficientPair(c=c, c_tilde=c_tilde, gamma=gamma)


# -- the two-sided experiment ---------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Shared weighted LHS against the weighted and the plain RHS."""

    weighted: EstimateReport
    plain: EstimateReport

    @property
    def ratio_weighted(self) -> float:
        return self.weighted.ratio

    @property
    def ratio_plain(self) -> float:
        return self.plain.ratio


def _twin_fields(pair: CoefficientPair, setup: ExperimentSetup):
    base = setup.base
    q_tilde = solve_heat(
        HeatProblem(c=pair.c_tilde, g=base.g, q0=base.q0, r=base.r),
        setup.grid, setup.timegrid)
    q = solve_heat(
        HeatProblem(c=pair.c, g=base.g, q0=base.q0, r=base.r),
        setup.grid, setup.timegrid)
    u = SpaceTimeField(values=q.values - q_tilde.values,
                       grid=setup.grid, timegrid=setup.timegrid)
    y = time_derivative(u)
    return q_tilde, q, u, y


def stability_sides(pair: CoefficientPair, setup: ExperimentSetup,
                    ws: WeightSet) -> StabilityReport:
    grid, window = setup.grid, setup.window
    q_tilde, q, u, y = _twin_fields(pair, setup)
    base = build_transport_base(q_tilde.at_time(window.t_mid), ws)
    _require_nondegenerate(base)

    grad_gamma = discrete_gradient(pair.gamma, grid)
    lhs = {
        "coeff": weighted_norm_space(pair.gamma, ws, 1),
        "grad_coeff": weighted_norm_space(grad_gamma, ws, 1),
    }

    rows = y.window_values(window)
    traces = {
        face: np.array([normal_derivative(rows[j], grid, face)
                        for j in range(1, window.steps)])
        for face in grid.gamma0_faces
    }
    u_snap = snapshot_package(u, grid, window, pair.c)
    weighted = EstimateReport(
        name="stability_weighted",
        lhs_terms=lhs,
        rhs_terms={
            "flux": weighted_boundary_norm(traces, ws,
                                           normal_beta_factor=True),
            "u_grad_lap": weighted_norm_space(u_snap.grad_lap_q, ws, 0),
            "u_lap": weighted_norm_space(u_snap.lap_q, ws, 0),
            "u_grad": weighted_norm_space(u_snap.grad_q, ws, 0),
        },
        params={"s": ws.s, "lam": ws.lam, "n": grid.n,
                "eta_ref": ws.eta_ref, "min_transport": base.min_transport},
    ).validate()

    obs = extract_observations(q, grid, window, pair.c)
    obs_tilde = extract_observations(q_tilde, grid, window, pair.c_tilde)
    dist = observation_distance_plain(obs, obs_tilde, grid, window)
    plain = EstimateReport(
        name="stability_plain",
        lhs_terms=dict(lhs),
        rhs_terms={k: v for k, v in dist.items() if k != "total"},
        params=dict(weighted.params),
    ).validate()
    return StabilityReport(weighted=weighted, plain=plain)


def stability_sweep(family, setup: ExperimentSetup, ws: WeightSet) -> tuple:
    """Per-member reports plus the sweep summary: the empirical constant
    with its argmax member, a global log-log slope of LHS against plain
    observation distance, and per-shape slopes over amplitude scalings."""
    records = []
    excluded = []
    for label, eps, gamma in family:
        if eps == 0.0 or float(np.max(np.abs(gamma))) == 0.0:
            excluded.append(label)
            continue
        pair = make_pair(setup.c_tilde, gamma, setup.grid)
        rep = stability_sides(pair, setup, ws)
        records.append({
            "member": label,
            "eps": float(eps),
            "lhs": rep.weighted.lhs_total,
            "rhs_weighted": rep.weighted.rhs_total,
            "rhs_plain": rep.plain.rhs_total,
            "ratio": rep.ratio_weighted,
            "ratio_plain": rep.ratio_plain,
        })
    if not records:
        raise GridError("stability family left no admissible members")

    worst = max(records, key=lambda r: r["ratio"])

    def slope(points):
        xs = np.log([p["rhs_plain"] for p in points])
        ys = np.log([p["lhs"] for p in points])
        return float(np.polyfit(xs, ys, 1)[0])

    shapes = {}
    for rec in records:
        shapes.setdefault(rec["member"].split("_")[0], []).append(rec)
    shape_slopes = {
        name: slope(pts) for name, pts in shapes.items() if len(pts) >= 3
    }
    summary = {
        "max_ratio": worst["ratio"],
        "argmax": worst["member"],
        "global_slope": slope(records) if len(records) >= 3 else math.nan,
        "shape_slopes": shape_slopes,
        "excluded": excluded,
    }
    return records, summary


# -- misfit, adjoint gradient, reconstruction -----------------------------


@dataclass
class InverseConfig:
    """Tuning knobs of the output-least-squares solve."""

    prior: np.ndarray
    alpha: float = 1e-8
    max_iters: int = 200
    armijo: float = 1e-4
    shrink: float = 0.5
    growth: float = 2.0
    step0: float = 1.0
    step_rule: str = "bb"   # spectral trial step; "double" for plain growth
    metric: str = "h1"      # descent metric; "l2" for the raw gradient
    memory: int = 25        # nonmonotone line-search reference; 1 = monotone
    grad_tol: float = 1e-10
    sigma: float = 0.0
    seed: int = 0
    c_min: float = 1e-3

    def validate(self, grid: Grid):
        prior = np.asarray(self.prior, dtype=float)
        if prior.shape != (grid.n_nodes,):
            raise GridError(f"prior shape {prior.shape}")
        if self.alpha < 0.0 or self.sigma < 0.0:
            raise GridError("alpha and sigma must be nonnegative")
        if not (0.0 < self.shrink < 1.0 and 0.0 < self.armijo < 1.0):
            raise GridError("bad line-search parameters")
        if self.max_iters < 1 or self.grad_tol <= 0.0 or self.step0 <= 0.0:
            raise GridError("bad iteration controls")
        if self.step_rule not in ("bb", "double"):
            raise GridError(f"unknown step rule {self.step_rule!r}")
        if self.metric not in ("h1", "l2"):
            raise GridError(f"unknown descent metric {self.metric!r}")
        if self.memory < 1:
            raise GridError("nonmonotone memory must be at least 1")
        if np.any(prior < self.c_min):
            raise GridError("prior dips below the positivity floor")


def h1_norm_sq(v: np.ndarray, grid: Grid) -> float:
    """Trapezoid mass plus midpoint-rule gradient mass; the quadratic
    form behind the regularizer and the error metric."""
    v = np.asarray(v, dtype=float)
    total = float(space_weights(grid) @ v**2)
    vg = grid.reshape(v)
    meas = grid.h**grid.dimension
    for a in range(grid.dimension):
        va = np.moveaxis(vg, a, 0)
        total += meas * float(np.sum((va[1:] - va[:-1]) ** 2)) / grid.h**2
    return total


def _h1_apply(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient of 1/2 h1_norm_sq."""
    out = space_weights(grid) * v
    vg = grid.reshape(v)
    acc = np.zeros(grid.shape)
    meas = grid.h**grid.dimension
    for a in range(grid.dimension):
        va = np.moveaxis(vg, a, 0)
        aa = np.moveaxis(acc, a, 0)
        d = (va[1:] - va[:-1]) * (meas / grid.h**2)
        aa[1:] += d
        aa[:-1] -= d
    return out + acc.ravel()


def _h1_gram(grid: Grid, idx: np.ndarray) -> np.ndarray:
    """Dense H1 Gram matrix restricted to the nodes in idx; the
    preconditioner of the "h1" descent metric."""
    pos = -np.ones(grid.n_nodes, dtype=int)
    pos[idx] = np.arange(idx.size)
    gram = np.diag(space_weights(grid)[idx])
    coef = grid.h**grid.dimension / grid.h**2
    node = np.arange(grid.n_nodes).reshape(grid.shape)
    for a in range(grid.dimension):
        na = np.moveaxis(node, a, 0)
        for i, j in zip(na[:-1].ravel(), na[1:].ravel()):
            pi, pj = pos[i], pos[j]
            if pi >= 0:
                gram[pi, pi] += coef
            if pj >= 0:
                gram[pj, pj] += coef
            if pi >= 0 and pj >= 0:
                gram[pi, pj] -= coef
                gram[pj, pi] -= coef
    return gram


def relative_h1_error(estimate: np.ndarray, truth: np.ndarray,
                      grid: Grid) -> float:
    denom = h1_norm_sq(truth, grid)
    if denom == 0.0:
        return math.nan
    return math.sqrt(h1_norm_sq(estimate - truth, grid) / denom)


def make_observations(setup: ExperimentSetup, c_true: np.ndarray,
                      sigma: float = 0.0, seed: int = 0) -> ObservationSet:
    """Synthetic data: solve with the true coefficient; white noise on
    the flux traces only (interior snapshots stay clean)."""
    prob = HeatProblem(c=c_true, g=setup.base.g, q0=setup.base.q0,
                       r=setup.base.r)
    field = solve_heat(prob, setup.grid, setup.timegrid)
    obs = extract_observations(field, setup.grid, setup.window, c_true)
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        noisy = {face: vals + sigma * rng.standard_normal(vals.shape)
                 for face, vals in obs.flux.items()}
        obs = ObservationSet(faces=obs.faces, flux=noisy, q=obs.q,
                             grad_q=obs.grad_q, lap_q=obs.lap_q,
                             grad_lap_q=obs.grad_lap_q, t_prime=obs.t_prime)
    return obs


def _face_layers(grid: Grid, face: str) -> np.ndarray:
    """(3, face_nodes) flat indices of the face layer and the two inward
    layers, matching the one-sided derivative stencil order."""
    from .grid import _FACES

    axis, side = _FACES[grid.dimension][face]
    idx = np.arange(grid.n_nodes).reshape(grid.shape)
    ia = np.moveaxis(idx, axis, 0)
    if side:
        layers = [ia[-1], ia[-2], ia[-3]]
    else:
        layers = [ia[0], ia[1], ia[2]]
    return np.array([np.atleast_1d(np.asarray(l)).ravel() for l in layers])


def _coefficient_accumulate(lmb_full: np.ndarray, s_full: np.ndarray,
                            grid: Grid, out: np.ndarray):
    """out_m += sum over lattice faces at m of
    (lmb_p - lmb_q)(s_q - s_p) / (2 h^2); the transpose of the face-mean
    flux assembly with respect to the coefficient."""
    lg = grid.reshape(lmb_full)
    sg = grid.reshape(s_full)
    og = out.reshape(grid.shape)
    inv = 1.0 / (2.0 * grid.h**2)
    for a in range(grid.dimension):
        la = np.moveaxis(lg, a, 0)
        sa = np.moveaxis(sg, a, 0)
        oa = np.moveaxis(og, a, 0)
        val = (la[:-1] - la[1:]) * (sa[1:] - sa[:-1]) * inv
        oa[:-1] += val
        oa[1:] += val


def misfit_and_gradient(c_current: np.ndarray, data: ObservationSet,
                        setup: ExperimentSetup, config: InverseConfig,
                        need_gradient: bool = True):
    """J and its exact discrete gradient (None when not requested)."""
    grid, tg, window = setup.grid, setup.timegrid, setup.window
    config.validate(grid)
    c_current = np.asarray(c_current, dtype=float)
    if np.any(c_current < config.c_min):
        raise GridError("coefficient below the positivity floor")

    prob = HeatProblem(c=c_current, g=setup.base.g, q0=setup.base.q0,
                       r=setup.base.r)
    fieldvals = solve_heat(prob, grid, tg).values
    off = tg.index_of(window.t0)
    dt = window.dt
    half = 1.0 / (2.0 * tg.dt)

    # flux residuals on the window interior rows, via the same centered
    # difference and face trace used to build the data
    residual = {}
    j_mis = 0.0
    for face in grid.gamma0_faces:
        wface = grid.face_axis_weights(face)
        rows = np.empty_like(data.flux[face])
        for j in range(1, window.steps):
            k = off + j
            dt_row = (fieldvals[k + 1] - fieldvals[k - 1]) * half
            rows[j - 1] = normal_derivative(dt_row, grid, face)
        rows -= data.flux[face]
        residual[face] = rows
        j_mis += 0.5 * dt * float(np.sum(rows**2 @ wface))

    shift = c_current - config.prior
    j_total = j_mis + 0.5 * config.alpha * h1_norm_sq(shift, grid)
    if not need_gradient:
        return j_total, None

    # source term of the adjoint: scatter the weighted residuals through
    # the trace stencil and the centered time difference
    steps_total = tg.steps
    n_nodes = grid.n_nodes
    interior = np.flatnonzero(grid.interior_mask)
    source = np.zeros((steps_total + 1, n_nodes))
    inv2h = 1.0 / (2.0 * grid.h)
    for face in grid.gamma0_faces:
        wface = grid.face_axis_weights(face)
        layers = _face_layers(grid, face)
        for j in range(1, window.steps):
            k = off + j
            weighted = dt * wface * residual[face][j - 1]
            for layer, coeff in zip(layers, _FACE_STENCIL):
                np.add.at(source[k + 1], layer, coeff * inv2h * half * weighted)
                np.add.at(source[k - 1], layer, -coeff * inv2h * half * weighted)
    source[:, grid.boundary_mask] = 0.0  # boundary values carry data, not c

    # adjoint sweep: B lam_M = -G_M, B lam_k = E lam_{k+1} - G_k
    stepper = CrankNicolsonStepper(c_current, grid, tg.dt)
    lam = np.zeros(interior.size)
    lam = stepper.solve_B(-source[steps_total][interior], lam)
    grad_c = np.zeros(n_nodes)
    lam_full = np.zeros(n_nodes)
    for i in range(steps_total - 1, -1, -1):
        lam_full[interior] = lam
        s_full = fieldvals[i] + fieldvals[i + 1]
        _coefficient_accumulate(lam_full, s_full, grid, grad_c)
        if i > 0:
            rhs = lam + 0.5 * tg.dt * (stepper.A @ lam) - source[i][interior]
            lam = stepper.solve_B(rhs, lam)
    grad_c *= -0.5 * tg.dt
    grad_c += config.alpha * _h1_apply(shift, grid)
    grad_c = admissible_projection(grad_c, grid)
    return j_total, grad_c


@dataclass
class ReconstructionResult:
    c_hat: np.ndarray
    log: list = field(default_factory=list)   # (iter, J, grad_norm, h1_err)
    converged: bool = False
    iterations: int = 0
    message: str = ""

    def log_to_csv(self, path):
        from .report import fmt

        lines = ["iter,J,grad_norm,h1_error"]
        for it, j, gn, err in self.log:
            lines.append(f"{it},{fmt(j)},{fmt(gn)},{fmt(err)}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _project(c: np.ndarray, config: InverseConfig, grid: Grid) -> np.ndarray:
    prior = np.asarray(config.prior, dtype=float)
    shifted = prior + admissible_projection(c - prior, grid)
    return np.maximum(shifted, config.c_min)


def reconstruct(data: ObservationSet, setup: ExperimentSetup,
                config: InverseConfig,
                truth: np.ndarray | None = None) -> ReconstructionResult:
    """Projected gradient descent with backtracking.  Three refinements,
    together needed to reach the true coefficient within a small
    iteration budget on the badly conditioned flux misfit: the descent
    direction is the H1 Riesz representative of the gradient (raw
    gradient flow dumps near-boundary roughness into modes the data
    cannot see), the trial step alternates the two Barzilai-Borwein
    formulas, and the Armijo test compares against the worst of the last
    `memory` objective values so the spectral steps are not truncated.
    The logged error is that of the recovered perturbation
    c_hat - prior, relative to truth - prior."""
    grid = setup.grid
    config.validate(grid)
    prior = np.asarray(config.prior, dtype=float)
    c = _project(prior.copy(), config, grid)
    j_val, grad = misfit_and_gradient(c, data, setup, config)
    step = config.step0
    result = ReconstructionResult(c_hat=c)
    flat_run = 0

    idx = np.flatnonzero(admissible_mask(grid))
    gram = chol = None
    if config.metric == "h1":
        gram = _h1_gram(grid, idx)
        chol = scipy.linalg.cho_factor(gram.copy())

    def direction(g):
        if chol is None:
            return g
        d = np.zeros_like(g)
        d[idx] = scipy.linalg.cho_solve(chol, g[idx])
        return d

    def h1_err(current):
        if truth is None:
            return math.nan
        gap = h1_norm_sq(np.asarray(truth, dtype=float) - prior, grid)
        if gap == 0.0:
            return math.sqrt(h1_norm_sq(current - truth, grid))
        return math.sqrt(h1_norm_sq(current - truth, grid) / gap)

    gnorm = float(np.linalg.norm(grad))
    result.log.append((0, j_val, gnorm, h1_err(c)))
    history = [j_val]
    for it in range(1, config.max_iters + 1):
        if gnorm <= config.grad_tol:
            result.converged = True
            result.message = "gradient tolerance reached"
            break
        desc = direction(grad)
        reference = max(history[-config.memory:])
        accepted = False
        t = step
        while t > 1e-16:
            trial = _project(c - t * desc, config, grid)
            decrease = float(grad @ (c - trial))
            j_trial, _ = misfit_and_gradient(trial, data, setup, config,
                                             need_gradient=False)
            if j_trial <= reference - config.armijo * decrease:
                accepted = True
                break
            t *= config.shrink
        if not accepted:
            result.message = "line search failed"
            break
        if j_trial >= j_val:
            flat_run += 1
            if flat_run >= 10:
                result.message = "objective stagnated for 10 accepted steps"
                break
        else:
            flat_run = 0
        c_prev, grad_prev = c, grad
        c = trial
        j_val = j_trial
        history.append(j_val)
        _, grad = misfit_and_gradient(c, data, setup, config)
        step = t * config.growth
        if config.step_rule == "bb":
            # alternate BB1 and BB2, both taken in the descent metric
            s_vec = c - c_prev
            y_vec = grad - grad_prev
            sy = float(s_vec @ y_vec)
            if sy > 0.0:
                if it % 2 == 1:
                    if gram is None:
                        num = float(s_vec @ s_vec)
                    else:
                        sa = s_vec[idx]
                        num = float(sa @ (gram @ sa))
                    step = min(num / sy, 1e12)
                else:
                    yd = direction(y_vec)
                    yy = float(y_vec @ yd)
                    if yy > 0.0:
                        step = min(sy / yy, 1e12)
        gnorm = float(np.linalg.norm(grad))
        result.iterations = it
        result.log.append((it, j_val, gnorm, h1_err(c)))
    else:
        result.message = "iteration budget exhausted"
    result.c_hat = c
    return result


def sweep_to_csv(records, path):
    from .report import fmt

    lines = ["member,eps,lhs,rhs_weighted,rhs_plain,ratio"]
    for rec in records:
        lines.append(
            f"{rec['member']},{fmt(rec['eps'])},{fmt(rec['lhs'])},"
            f"{fmt(rec['rhs_weighted'])},{fmt(rec['rhs_plain'])},"
            f"{fmt(rec['ratio'])}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
