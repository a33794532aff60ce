"""Command-line entry point.

Exit codes: 0 on success, 2 when an input fails validation, 3 when a run
aborts at runtime.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .engine import NonFiniteStateError, read_trajectory_csv
from .graphnet import GraphValidationError, check_assumption1, load_graph_sequence
from .metrics import BoundInputs, InfeasibleProblemError, bound_constants, offline_oracle, regret_report
from .penalty import make_penalty
from .experiment import PRESETS, build_problem, load_config, run_experiment, run_preset

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = run_experiment(cfg, args.output)
    summary = json.loads((out / "summary.json").read_text())
    print(f"wrote {out}")
    print(f"R(T)/T = {summary['R_avg_T']:.6g}  Rc(T)/T = {summary['Rc_avg_T']:.6g}")
    return EXIT_OK


def cmd_preset(args) -> int:
    doc = run_preset(args.name, args.horizon, args.seed, args.output)
    _print_json(doc)
    return EXIT_OK


def cmd_check_graph(args) -> int:
    seq = load_graph_sequence(args.file)
    report = check_assumption1(seq, args.horizon)
    for line in report.lines():
        print(line)
    print(f"max row error {report.max_row_error:.3g}, max column error {report.max_col_error:.3g}")
    return EXIT_OK if report.ok else EXIT_VALIDATION


_BOUND_FIELDS = ("C_x", "C_lambda", "C_y", "C_g", "C_f", "L_f", "L_g", "L_F", "G_F", "C_F")


def cmd_bounds(args) -> int:
    values = {k: 0.0 for k in _BOUND_FIELDS}
    if args.constants_file:
        doc = json.loads(Path(args.constants_file).read_text())
        unknown = set(doc) - set(_BOUND_FIELDS)
        if unknown:
            raise ValueError(f"unknown constants: {sorted(unknown)}")
        values.update({k: float(v) for k, v in doc.items()})
    consts = bound_constants(BoundInputs(eta=args.eta, N=args.n, Q=args.q, **values))
    _print_json(consts.to_dict())
    return EXIT_OK


def cmd_regret(args) -> int:
    path = Path(args.trajectory)
    if path.is_dir():
        config_path = Path(args.config) if args.config else path / "config.json"
        path = path / "trajectory.csv"
    elif args.config:
        config_path = Path(args.config)
    else:
        raise ValueError("--config is required when a trajectory file is given")
    cfg = load_config(config_path)
    cols = read_trajectory_csv(path)
    problem = build_problem(cfg)
    penalty = make_penalty(cfg.penalty, problem.m)
    costs = np.column_stack([cols[f"cost_{i}"] for i in range(problem.n_agents)])
    g_sum = np.column_stack([cols[f"g_sum_{k}"] for k in range(problem.m)])
    horizon = len(costs)
    if args.comparator == "oracle":
        x_star = offline_oracle(problem, horizon, **cfg.oracle).x
    else:
        doc = json.loads(Path(args.comparator).read_text())
        x_star = doc["x"] if isinstance(doc, dict) else doc
    report = regret_report(costs, g_sum, problem, penalty, x_star)
    if not args.output:
        sys.stdout.write(",".join(report.columns()) + "\n")
        np.savetxt(sys.stdout, report.rows(), delimiter=",", fmt="%.17g")
        return EXIT_OK
    report.write_csv(args.output)
    _print_json({"R_T": float(report.R[-1]), "R_avg_T": float(report.R_avg[-1]),
                 "Rc_T": float(report.Rc[-1]), "Rc_avg_T": float(report.Rc_avg[-1])})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="artifact directory (overrides output_dir in the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named preset")
    p.add_argument("name", choices=PRESETS)
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="runs")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("check-graph", help="validate a graph sequence JSON file")
    p.add_argument("file")
    p.add_argument("--horizon", type=int, required=True)
    p.set_defaults(func=cmd_check_graph)

    p = sub.add_parser("bounds", help="evaluate the theoretical bound constants")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--constants-file", help="JSON object with C_x, C_lambda, ..., C_F (missing ones are 0)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("regret", help="recompute regret from a saved trajectory")
    p.add_argument("trajectory", help="artifact directory or trajectory CSV")
    p.add_argument("--config", help="experiment config (defaults to config.json next to the trajectory)")
    p.add_argument("--comparator", default="oracle", help="'oracle' or a JSON file holding x")
    p.add_argument("--output", help="write the regret CSV here instead of stdout")
    p.set_defaults(func=cmd_regret)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GraphValidationError, InfeasibleProblemError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        if isinstance(exc, GraphValidationError) and exc.report is not None:
            for line in exc.report.lines():
                print(f"  {line}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteStateError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
