"""Command-line frontend.

Runs the verification pipelines on a JSON-configured experiment and
emits deterministic CSV reports, plus standalone SVG line plots with
--plot.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .carleman import carleman_sweep, make_test_suite
from .config import ConfigError, evaluate_field, load_config
from .energy import (
    energy,
    energy_bound_sides,
    energy_tprime_direct,
    snapshot_bound_sides,
)
from .forward import HeatProblem, SolverError, dump_field_csv, solve_heat
from .grid import GridError
from .observe import extract_observations, observations_to_csv
from .poincare import proposition_sides, proposition_to_csv
from .report import fmt, report_to_csv
from .setups import (
    ExperimentSetup,
    default_setup,
    inversion_setup,
    perturbation_family,
    twin_solve,
)
from .stability import (
    InverseConfig,
    make_observations,
    make_pair,
    reconstruct,
    stability_sides,
    stability_sweep,
    sweep_to_csv,
)
from .svg import PlotError, line_plot
from .weights import build_weights

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = (
    "forward",
    "verify-carleman",
    "verify-poincare",
    "verify-snapshot",
    "verify-energy",
    "verify-stability",
    "sweep-stability",
    "reconstruct",
    "all",
)

SEED_ENV = "CARLEMAN_LAB_SEED"


class RunContext:
    """Config plus the objects every pipeline shares."""

    def __init__(self, cfg, out_dir, plot, jobs):
        self.cfg = cfg
        self.out_dir = out_dir
        self.plot = plot
        self.jobs = jobs
        base = default_setup(cfg.dimension, cfg.n, cfg.t0, cfg.t_end,
                             cfg.steps)
        self.background = evaluate_field(cfg.background, base.grid,
                                         cfg.base_dir)
        self.gamma = evaluate_field(cfg.gamma, base.grid, cfg.base_dir)
        problem = HeatProblem(c=self.background, g=base.base.g,
                              q0=base.base.q0, r=base.base.r)
        problem.validate(base.grid)
        self.setup = ExperimentSetup(grid=base.grid, timegrid=base.timegrid,
                                     window=base.window, base=problem)

    def weights(self, lam, s):
        return build_weights(self.setup.grid, self.setup.window, lam=lam,
                             s=s, m=self.cfg.m_weight, x0=self.cfg.x0)

    def weights_ref(self):
        return self.weights(self.cfg.lambdas[0], self.cfg.s_values[0])

    def weights_energy(self):
        # the endpoint-decay bound needs s >= 4; take the smallest such
        # s from the sweep list, or the largest available
        heavy = [s for s in self.cfg.s_values if s >= 4.0]
        return self.weights(self.cfg.lambdas[0],
                            min(heavy) if heavy else max(self.cfg.s_values))

    def path(self, name):
        return os.path.join(self.out_dir, name)


def cmd_forward(ctx: RunContext):
    setup = ctx.setup
    field = solve_heat(setup.base, setup.grid, setup.timegrid)
    files = [ctx.path("field.csv"), ctx.path("observations.csv")]
    dump_field_csv(field, files[0])
    obs = extract_observations(field, setup.grid, setup.window,
                               setup.base.c)
    observations_to_csv(obs, files[1])
    return files


def cmd_verify_carleman(ctx: RunContext):
    cfg, setup = ctx.cfg, ctx.setup
    suite = make_test_suite(setup.grid, setup.window, count=20,
                            seed=cfg.seed)
    cells = [(s, lam) for s in cfg.s_values for lam in cfg.lambdas]

    def one_cell(cell):
        s, lam = cell
        return carleman_sweep(ctx.background, suite, [s], [lam],
                              setup.grid, setup.window, cfg.m_weight, cfg.x0)

    if ctx.jobs > 1:
        with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
            results = list(pool.map(one_cell, cells))
    else:
        results = [one_cell(cell) for cell in cells]

    records, summary = [], {}
    for recs, summ in results:
        records.extend(recs)
        summary.update(summ)
    for test_id, s, lam, rep in records:
        if not math.isfinite(rep.ratio):
            raise SolverError(
                f"non-finite ratio for {test_id} at s={s}, lam={lam}")

    sweep_path = ctx.path("carleman_sweep.csv")
    with open(sweep_path, "w") as fh:
        fh.write("test_id,s,lambda,term_name,value\n")
        for test_id, s, lam, rep in records:
            for term, value in rep.rows():
                fh.write(f"{test_id},{fmt(s)},{fmt(lam)},{term},"
                         f"{fmt(value)}\n")
    summary_path = ctx.path("carleman_summary.csv")
    with open(summary_path, "w") as fh:
        fh.write("s,lambda,max_ratio\n")
        for (s, lam), worst in summary.items():
            fh.write(f"{fmt(s)},{fmt(lam)},{fmt(worst)}\n")
    files = [sweep_path, summary_path]

    if ctx.plot:
        series = []
        for lam in cfg.lambdas:
            xs = list(cfg.s_values)
            ys = [summary[(float(s), float(lam))] for s in cfg.s_values]
            series.append((f"lam={fmt(lam)}", xs, ys))
        svg_path = ctx.path("carleman_sweep.svg")
        line_plot(svg_path, series, title="max ratio over test suite",
                  xlabel="s", ylabel="ratio", logx=True, logy=True)
        files.append(svg_path)
    return files


def cmd_verify_poincare(ctx: RunContext):
    twin = twin_solve(ctx.setup, ctx.gamma)
    rep = proposition_sides(ctx.gamma, ctx.background, twin.q_tilde,
                            twin.u, twin.y, ctx.weights_ref())
    path = ctx.path("poincare.csv")
    proposition_to_csv(rep, path)
    return [path]


def cmd_verify_snapshot(ctx: RunContext):
    twin = twin_solve(ctx.setup, ctx.gamma)
    rep = snapshot_bound_sides(twin.y, ctx.gamma,
                               ctx.background + ctx.gamma,
                               ctx.weights_energy())
    path = ctx.path("snapshot.csv")
    report_to_csv(rep, path)
    return [path]


def cmd_verify_energy(ctx: RunContext):
    twin = twin_solve(ctx.setup, ctx.gamma)
    ws = ctx.weights_energy()
    c = ctx.background + ctx.gamma
    curve = energy(twin.y, c, ws)
    if np.any(curve.values < 0.0):
        raise SolverError("energy curve dips below zero")
    direct = energy_tprime_direct(twin.y, c, ws)
    if abs(curve.e_tprime - direct) > 1e-12 * abs(direct):
        raise SolverError(
            f"midpoint energy paths disagree: {curve.e_tprime} vs {direct}")
    if ws.s >= 4.0 and curve.e_tprime > 0.0:
        for label, value in (("start", curve.values[0]),
                             ("end", curve.values[-1])):
            if value > 1e-6 * curve.e_tprime:
                raise SolverError(
                    f"energy at the window {label} is not suppressed: "
                    f"{value} vs midpoint {curve.e_tprime}")
    snapshot_bound_sides(twin.y, ctx.gamma, c, ws)
    energy_bound_sides(twin.y, ctx.gamma, c, ws)

    path = ctx.path("energy_curve.csv")
    curve.to_csv(path)
    files = [path]
    if ctx.plot:
        svg_path = ctx.path("energy_curve.svg")
        line_plot(svg_path, [("E", list(curve.times), list(curve.values))],
                  title=f"energy along the window (s={fmt(ws.s)})",
                  xlabel="t", ylabel="E")
        files.append(svg_path)
    return files


def cmd_verify_stability(ctx: RunContext):
    pair = make_pair(ctx.background, ctx.gamma, ctx.setup.grid)
    rep = stability_sides(pair, ctx.setup, ctx.weights_ref())
    path = ctx.path("stability.csv")
    with open(path, "w") as fh:
        fh.write("side,term_name,value\n")
        for side in (rep.weighted, rep.plain):
            for term, value in side.rows():
                fh.write(f"{side.name},{term},{fmt(value)}\n")
    return [path]


def cmd_sweep_stability(ctx: RunContext):
    family = perturbation_family(ctx.setup.grid)
    records, summary = stability_sweep(family, ctx.setup, ctx.weights_ref())
    if not records or not math.isfinite(summary["max_ratio"]):
        raise SolverError("stability sweep produced no finite ratio")
    path = ctx.path("sweep.csv")
    sweep_to_csv(records, path)
    files = [path]
    if ctx.plot:
        xs = list(range(1, len(records) + 1))
        ys = [rec["ratio"] for rec in records]
        svg_path = ctx.path("sweep.svg")
        line_plot(svg_path, [("ratio", xs, ys)],
                  title="two-sided ratio across the family",
                  xlabel="member", ylabel="ratio", logy=True)
        files.append(svg_path)
    return files


def cmd_reconstruct(ctx: RunContext):
    cfg = ctx.cfg
    # reconstruction runs on its own probing drive and early window; the
    # configured t0/steps describe the verification experiments
    inv = inversion_setup(cfg.dimension, cfg.n)
    truth = make_pair(ctx.background, ctx.gamma, inv.grid).c
    data = make_observations(inv, truth, sigma=cfg.sigma, seed=cfg.seed)
    icfg = InverseConfig(prior=ctx.background, sigma=cfg.sigma,
                         seed=cfg.seed)
    result = reconstruct(data, inv, icfg, truth=truth)
    if result.message == "line search failed":
        raise SolverError("reconstruction line search failed")
    if not result.converged:
        print(f"reconstruct: {result.message} after "
              f"{result.iterations} iterations", file=sys.stderr)
    path = ctx.path("recon_log.csv")
    result.log_to_csv(path)
    files = [path]
    if ctx.plot:
        xs = [row[0] for row in result.log]
        ys = [row[1] for row in result.log]
        svg_path = ctx.path("recon_log.svg")
        line_plot(svg_path, [("J", xs, ys)], title="reconstruction descent",
                  xlabel="iteration", ylabel="J", logy=True)
        files.append(svg_path)
    return files


def cmd_all(ctx: RunContext):
    """The six report files; the snapshot bound is asserted inside the
    energy pipeline and the single-pair check is subsumed by the sweep."""
    files = []
    for fn in (cmd_verify_carleman, cmd_verify_poincare, cmd_verify_energy,
               cmd_sweep_stability, cmd_reconstruct):
        files.extend(fn(ctx))
    return files


_DISPATCH = {
    "forward": cmd_forward,
    "verify-carleman": cmd_verify_carleman,
    "verify-poincare": cmd_verify_poincare,
    "verify-snapshot": cmd_verify_snapshot,
    "verify-energy": cmd_verify_energy,
    "verify-stability": cmd_verify_stability,
    "sweep-stability": cmd_sweep_stability,
    "reconstruct": cmd_reconstruct,
    "all": cmd_all,
}


def run(command, config_path=None, plot=False, jobs=1, out=None) -> int:
    try:
        cfg = load_config(config_path)
        if SEED_ENV in os.environ:
            try:
                cfg.seed = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError(
                    f"{SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer")
        out_dir = out if out is not None else cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir!r} is not writable")
        ctx = RunContext(cfg, out_dir, plot, max(1, jobs))
    except (ConfigError, GridError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = _DISPATCH[command](ctx)
    except (GridError, SolverError, PlotError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="carleman-lab",
        description="Weighted-estimate verifiers and conductivity "
                    "reconstruction for a heat equation testbed.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="JSON config; defaults to the packaged "
                             "default.json")
    parser.add_argument("--plot", action="store_true",
                        help="also emit SVG line plots")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="bound on worker threads for parameter sweeps")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (overrides the config)")
    args = parser.parse_args(argv)
    return run(args.command, config_path=args.config, plot=args.plot,
               jobs=args.jobs, out=args.out)


if __name__ == "__main__":
    sys.exit(main())
