"""Command-line interface.

Subcommands: simulate (single path trace), bounds, design-open,
design-closed, experiment {fig3,fig4,fig6,fig7}, oracle-check.  All read
an optional JSON config plus flag overrides; exit code 0 on success, 2 on
configuration errors, 3 on solver failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys

import numpy as np

from . import bnb, conic, harness, matcore, rates, riccati
from .errors import (
    ConfigError,
    CrsnError,
    InfeasibleLambdaError,
    InfeasibleQualityBoundError,
    InvalidRateError,
    RiccatiDivergenceError,
    SolverError,
)
from .harness import SEED_ENV_VAR
from .sysmodel import LtiSystem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _plant_and_lambda(args) -> tuple[LtiSystem, float, dict]:
    if args.config:
        raw = _load_config(args.config)
        plant = LtiSystem.from_dict(raw["plant"]) if "plant" in raw else harness.scalar_plant()
        lam = float(raw.get("lambda", 0.8))
    else:
        raw = {}
        plant = harness.scalar_plant()
        lam = 0.8
    if getattr(args, "lam", None) is not None:
        lam = args.lam
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        raw["seed"] = int(env_seed)
    return plant, lam, raw


def _matrix_arg(value, dim):
    """Parse a trigger/bound argument: scalar -> value*I, path -> JSON file."""
    if value is None:
        return None
    try:
        return float(value) * np.eye(dim)
    except ValueError:
        with open(value, "r", encoding="utf-8") as fh:
            return np.asarray(json.load(fh), dtype=float)


def _cmd_simulate(args) -> int:
    plant, lam, raw = _plant_and_lambda(args)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 20_240_517))
    horizon = args.steps or int(raw.get("horizon", 200))
    sched_raw = raw.get("scheduler", {"kind": "open", "Y": 1.0})
    kind = sched_raw.get("kind", "open")
    if kind in ("open", "closed"):
        key = "Y" if kind == "open" else "Z"
        mat = sched_raw.get(key, sched_raw.get("matrix", 1.0))
        mat = np.asarray(mat, dtype=float) * np.eye(plant.m) if np.isscalar(mat) else np.asarray(mat)
        sched = harness.make_scheduler(kind, matrix=mat)
    else:
        sched = harness.make_scheduler(kind, rate=sched_raw.get("rate"),
                                       phase=sched_raw.get("phase", 0))
    stats = harness.run_path(plant, lam, sched, horizon, 0, seed, args.path_index)
    writer = csv.writer(_sys.stdout if args.out is None else open(args.out, "w", newline=""))
    header = ["k", "eta", "epsilon"]
    header += [f"y{i}" for i in range(plant.m)]
    header += [f"xhat_prior{i}" for i in range(plant.n)]
    header += ["trace_P_prior", "trace_P_post"]
    writer.writerow(header)
    for row in stats["trace"]:
        eps = "" if row["epsilon"] is None else row["epsilon"]
        writer.writerow([row["k"], row["eta"], eps, *row["y"], *row["xhat_prior"],
                         row["trace_P_prior"], row["trace_P_post"]])
    return EXIT_OK


def _cmd_bounds(args) -> int:
    plant, lam, _ = _plant_and_lambda(args)
    y = _matrix_arg(args.Y, plant.m)
    z = _matrix_arg(args.Z, plant.m)
    if (y is None) == (z is None):
        raise ConfigError("bounds needs exactly one of --Y or --Z")
    out = {}
    if y is not None:
        gamma = rates.open_loop_rate(lam, harness.steady_state(plant).Pi, y)
        bset = riccati.bound_set_open(plant, lam, y, gamma)
        out["gamma"] = gamma
    else:
        bset = riccati.bound_set_closed(plant, lam, z)
        out["gamma_bar"] = rates.closed_loop_rate_upper(bset.x_upper, z, plant, lam)
    out.update({
        "x_upper": bset.x_upper.tolist(),
        "x_lower": bset.x_lower.tolist(),
        "x_zero": bset.x_zero.tolist(),
        "x_p": None if bset.x_p is None else bset.x_p.tolist(),
    })
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_design_open(args) -> int:
    plant, lam, _ = _plant_and_lambda(args)
    m_bound = _matrix_arg(args.M or args.M_file, plant.n)
    if m_bound is None:
        raise ConfigError("design-open needs --M or --M-file")
    des = conic.design_open(plant, lam, m_bound, tol=args.sdp_tol,
                            max_newton=args.sdp_max_iter)
    print(json.dumps({
        "Y": des.Y.tolist(),
        "gamma": des.report.gamma,
        "f1": des.report.f1,
        "f2": des.report.f2,
        "gap_bound": des.report.kappa_bound,
        "x_bar": des.x_bar.tolist(),
        "iterations": des.solution.iterations,
        "status": des.solution.status,
    }, indent=2))
    return EXIT_OK


def _cmd_design_closed(args) -> int:
    plant, lam, _ = _plant_and_lambda(args)
    m_bound = _matrix_arg(args.M or args.M_file, plant.n)
    if m_bound is None:
        raise ConfigError("design-closed needs --M or --M-file")
    res = bnb.design_closed(plant, lam, m_bound, eps=args.eps, node_cap=args.node_cap,
                            sdp_tol=args.sdp_tol, max_newton=args.sdp_max_iter)
    report = {
        "Z": res.Z_star.tolist(),
        "X": res.X_star.tolist(),
        "upsilon_star": res.upsilon_star,
        "Upsilon_star": res.Upsilon_star,
        "gamma_bar": res.gamma_bar,
        "gap_closed": res.gap,
        "stages": res.stages,
        "nodes": res.nodes,
        "status": res.status,
        "boundary_distance": res.boundary_distance,
    }
    print(json.dumps(report, indent=2))
    if args.trace_out:
        with open(args.trace_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "nu", "Upsilon", "open_nodes"])
            for row in res.trace:
                writer.writerow([row["stage"], row["nu"], row["Upsilon"], row["open"]])
    return EXIT_OK if res.status == "eps-optimal" else EXIT_SOLVER


def _cmd_experiment(args) -> int:
    if args.config:
        raw = _load_config(args.config)
        config = harness.config_from_dict(raw)
    else:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["paths"] = args.paths
        if args.horizon is not None:
            overrides["horizon"] = args.horizon
            if args.burn_in is None:
                overrides["burn_in"] = args.horizon // 4
        if args.burn_in is not None:
            overrides["burn_in"] = args.burn_in
        config = harness.default_config(args.name, paper_scale=args.paper_scale, **overrides)
    if args.out:
        config.output_dir = args.out
    result = harness.EXPERIMENTS[args.name](config)
    if args.name == "fig6":
        # split into the open- and closed-loop trade-off curves
        base = dict(experiment="fig6_open", columns=["varpi", "trace_M", "gamma", "gap"],
                    config=config, runtime_s=result.runtime_s)
        open_rows = [(r[0], r[1], r[2], r[3]) for r in result.rows]
        closed_rows = [(r[0], r[1], r[4], r[5]) for r in result.rows]
        p1 = harness.ExperimentResult(rows=open_rows, **base).to_csv()
        base["experiment"] = "fig6_closed"
        p2 = harness.ExperimentResult(rows=closed_rows, **base).to_csv()
        print(p1)
        print(p2)
    else:
        print(result.to_csv())
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    res = harness.oracle_check(seed=args.seed if args.seed is not None else 7,
                               steps=args.steps)
    print(json.dumps(res, indent=2))
    ok = res["mean_dev"] < 1e-3
    print(f"max |grid mean - filter mean| (scaled) = {res['mean_dev']:.3e}")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crsn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--lam", "--lambda", dest="lam", type=float, default=None)

    p = sub.add_parser("simulate", help="one path, full trace CSV")
    common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--path-index", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bounds", help="covariance bound set for a trigger")
    common(p)
    p.add_argument("--Y", default=None, help="open trigger: scalar or JSON matrix file")
    p.add_argument("--Z", default=None, help="closed trigger: scalar or JSON matrix file")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("design-open", help="open-loop trigger design (SDP)")
    common(p)
    p.add_argument("--M", default=None, help="quality bound: scalar or JSON matrix file")
    p.add_argument("--M-file", dest="M_file", default=None)
    p.add_argument("--sdp-tol", type=float, default=1e-8)
    p.add_argument("--sdp-max-iter", dest="sdp_max_iter", type=int, default=600)
    p.set_defaults(func=_cmd_design_open)

    p = sub.add_parser("design-closed", help="closed-loop trigger design (branch and bound)")
    common(p)
    p.add_argument("--M", default=None)
    p.add_argument("--M-file", dest="M_file", default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--node-cap", type=int, default=10_000)
    p.add_argument("--sdp-tol", type=float, default=1e-9)
    p.add_argument("--sdp-max-iter", dest="sdp_max_iter", type=int, default=600)
    p.add_argument("--trace-out", default=None, help="per-stage CSV trace path")
    p.set_defaults(func=_cmd_design_closed)

    p = sub.add_parser("experiment", help="run a figure-reproduction experiment")
    p.add_argument("name", choices=sorted(harness.EXPERIMENTS))
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("oracle-check", help="grid oracle vs the closed-form filters")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=50)
    p.set_defaults(func=_cmd_oracle_check)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, InvalidRateError, InfeasibleQualityBoundError,
            InfeasibleLambdaError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (SolverError, RiccatiDivergenceError) as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return EXIT_SOLVER
    except CrsnError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
