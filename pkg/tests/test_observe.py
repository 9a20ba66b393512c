import dataclasses

import numpy as np
import pytest

from carleman_lab.forward import HeatProblem, SpaceTimeField, solve_heat
from carleman_lab.grid import GridError, TimeGrid, build_grid
from carleman_lab.observe import (
    boundary_norm_plain,
    extract_observations,
    norm_space_plain,
    observation_distance_plain,
    observations_from_csv,
    observations_to_csv,
    weighted_boundary_norm,
    weighted_norm_space,
    weighted_norm_spacetime,
)
from carleman_lab.weights import build_weights


def sampled_decaying_sine(n=64, steps=128):
    g = build_grid(1, n, ["right"])
    tg = TimeGrid(0.0, 2.0, steps)
    x = g.coords[:, 0]
    vals = np.exp(-tg.times)[:, None] * np.sin(np.pi * x)[None, :]
    return g, tg, SpaceTimeField(values=vals, grid=g, timegrid=tg)


def test_flux_trace_analytic():
    g, tg, f = sampled_decaying_sine()
    win, _ = tg.window(0.5)
    obs = extract_observations(f, g, win, np.ones(g.n_nodes))
    trace = obs.flux["right"]
    assert trace.shape == (win.steps - 1, 1)
    t_int = win.times[1:-1]
    exact = np.pi * np.exp(-t_int)
    assert np.max(np.abs(trace[:, 0] - exact) / exact) < 5e-3


def test_flux_trace_constant_in_time():
    g = build_grid(1, 16, ["right"])
    tg = TimeGrid(0.0, 2.0, 16)
    win, _ = tg.window(0.5)
    x = g.coords[:, 0]
    f = SpaceTimeField(values=np.tile(x**2, (17, 1)), grid=g, timegrid=tg)
    obs = extract_observations(f, g, win, np.ones(g.n_nodes))
    assert np.max(np.abs(obs.flux["right"])) == 0.0


def test_twin_observation_distance_zero():
    g = build_grid(1, 16, ["right"])
    tg = TimeGrid(0.0, 2.0, 32)
    win, _ = tg.window(0.5)
    x = g.coords[:, 0]
    prob = HeatProblem(
        c=1.0 + 0.5 * x,
        g=lambda t: np.ones(g.n_nodes) + 0.1 * t,
        q0=np.ones(g.n_nodes),
        r=1.0,
    )
    o1 = extract_observations(solve_heat(prob, g, tg), g, win, prob.c)
    o2 = extract_observations(solve_heat(prob, g, tg), g, win, prob.c)
    dist = observation_distance_plain(o1, o2, g, win)
    assert dist["total"] <= 1e-15


@pytest.fixture(scope="module")
def ws_1d():
    g = build_grid(1, 16, ["right"])
    tg = TimeGrid(0.5, 2.0, 32)
    return build_weights(g, tg, lam=1.0, s=1.0, m=1.1, x0=[-0.1])


def test_weighted_norm_zero_field(ws_1d):
    z = np.zeros(ws_1d.grid.n_nodes)
    assert weighted_norm_space(z, ws_1d, 3) == 0.0
    assert weighted_norm_spacetime(z, ws_1d, 1) == 0.0


def test_weighted_norm_homogeneity_exact(ws_1d):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(ws_1d.grid.n_nodes)
    assert weighted_norm_space(2.0 * f, ws_1d, 2) == 4.0 * weighted_norm_space(
        f, ws_1d, 2
    )
    assert weighted_norm_spacetime(2.0 * f, ws_1d, 0) == 4.0 * weighted_norm_spacetime(
        f, ws_1d, 0
    )


def test_weighted_norm_unweighted_reduction(ws_1d):
    # zeroing eta and log_phi turns the weighted space norm into plain L^2
    flat = dataclasses.replace(
        ws_1d,
        log_phi=np.zeros_like(ws_1d.log_phi),
        eta=np.ones_like(ws_1d.eta),
        eta_ref=1.0,
    )
    ones = np.ones(flat.grid.n_nodes)
    assert weighted_norm_space(ones, flat, 0) == pytest.approx(1.0, abs=1e-13)
    rng = np.random.default_rng(1)
    f = rng.standard_normal(flat.grid.n_nodes)
    assert weighted_norm_space(f, flat, 0) == pytest.approx(
        norm_space_plain(f, flat.grid), rel=1e-13
    )


def test_weighted_norm_monotone_in_s():
    g = build_grid(1, 16, ["right"])
    tg = TimeGrid(0.5, 2.0, 32)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(g.n_nodes)
    prev = None
    for s in (1.0, 2.0, 4.0, 8.0):
        ws = build_weights(g, tg, lam=1.0, s=s, m=1.1, x0=[-0.1])
        val = weighted_norm_spacetime(f, ws, 0)
        if prev is not None:
            assert val <= prev + 1e-15
        prev = val


def test_weighted_norm_rejects_nonfinite(ws_1d):
    f = np.ones(ws_1d.grid.n_nodes)
    f[3] = np.inf
    with pytest.raises(GridError, match="non-finite"):
        weighted_norm_space(f, ws_1d, 0)


def test_weighted_boundary_norm_shapes_and_factor(ws_1d):
    g = ws_1d.grid
    nt = ws_1d.timegrid.steps - 1
    trace = {"right": np.ones((nt, 1))}
    base = weighted_boundary_norm(trace, ws_1d)
    withb = weighted_boundary_norm(trace, ws_1d, normal_beta_factor=True)
    assert base > 0.0
    # d_nu beta on the observed face is 2(1 - x0) = 2.2
    assert withb == pytest.approx(2.2 * base, rel=1e-12)
    with pytest.raises(GridError):
        weighted_boundary_norm({"right": np.ones((nt + 1, 1))}, ws_1d)


def test_plain_boundary_norm_constant():
    g = build_grid(1, 8, ["right"])
    win = TimeGrid(0.5, 2.0, 24)
    # constant trace 3 on one endpoint: integral = 9 * (T - t0 - 2 dt)
    trace = {"right": np.full((win.steps - 1, 1), 3.0)}
    expect = 9.0 * win.dt * (win.steps - 1)
    assert boundary_norm_plain(trace, g, win) == pytest.approx(expect, rel=1e-13)


def test_observation_csv_round_trip(tmp_path):
    g, tg, f = sampled_decaying_sine(n=16, steps=32)
    win, _ = tg.window(0.5)
    obs = extract_observations(f, g, win, np.ones(g.n_nodes))
    path = tmp_path / "obs.csv"
    observations_to_csv(obs, path)
    loaded = observations_from_csv(path, g, win)
    np.testing.assert_array_equal(loaded.flux["right"], obs.flux["right"])
    np.testing.assert_array_equal(loaded.q, obs.q)
    np.testing.assert_array_equal(loaded.grad_lap_q, obs.grad_lap_q)
    assert loaded.t_prime == obs.t_prime


def test_observation_csv_2d_two_faces(tmp_path):
    g = build_grid(2, 8, ["north", "east"])
    tg = TimeGrid(0.0, 2.0, 16)
    win, _ = tg.window(0.5)
    x, y = g.coords[:, 0], g.coords[:, 1]
    vals = (1.0 + tg.times[:, None] ** 2) * (x * y + 1.0)[None, :]
    f = SpaceTimeField(values=vals, grid=g, timegrid=tg)
    obs = extract_observations(f, g, win, np.ones(g.n_nodes))
    path = tmp_path / "obs2d.csv"
    observations_to_csv(obs, path)
    loaded = observations_from_csv(path, g, win)
    for face in ("north", "east"):
        np.testing.assert_array_equal(loaded.flux[face], obs.flux[face])
