"""Reproducible experiments: configuration, presets and artifact directories.

All randomness derives from ``ExperimentConfig.seed`` through named
substreams (``problem`` and ``graph``), so one component can be changed
without disturbing the others.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import RunConfig, StepSize, Trajectory, run_dopd, write_trajectory_csv
from .graphnet import GraphSequence, check_assumption1, load_graph_sequence, random_graph_sequence, GraphValidationError
from .metrics import (
    bound_constants,
    disagreement_series,
    empirical_bound_inputs,
    offline_oracle,
    regret_report,
    constraint_regret,
)
from .penalty import make_penalty, strict_smooth_max_penalty
from .problems import OnlineProblem, RoutingProblem, make_problem

DEFAULT_THRESHOLD = 1e-2


def substream_seed(seed: int, name: str) -> int:
    """Independent 32-bit seed for the component ``name``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """Serializable description of one run.

    ``problem`` holds the scenario parameters (``n`` for synthetic,
    ``n_sources`` and friends for routing). ``graph`` holds ``q``, ``base``
    (a base-graph name, ``"range"`` for the routing links within reach, or
    ``"file"`` together with ``path``) and ``p_extra``.
    """

    scenario: str
    problem: dict
    graph: dict = field(default_factory=lambda: {"q": 1, "base": "ring"})
    penalty: dict = field(default_factory=lambda: {"name": "smooth_max", "mu": 0.001})
    horizon: int = 1000
    stepsize: dict = field(default_factory=lambda: {"rule": "inv_sqrt", "scale": 1.0})
    seed: int = 0
    output_dir: str = "runs/experiment"
    lam0: float = 0.0
    lambda_cap: float | None = None
    oracle: dict = field(default_factory=lambda: {"method": "auto", "tol": 1e-8, "max_iter": 20000})
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.scenario not in ("synthetic", "routing"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        self.horizon = int(self.horizon)
        self.seed = int(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.loads(Path(path).read_text())


def build_problem(cfg: ExperimentConfig) -> OnlineProblem:
    params = dict(cfg.problem)
    params["kind"] = cfg.scenario
    params.setdefault("seed", substream_seed(cfg.seed, "problem"))
    return make_problem(params)


def build_graph(cfg: ExperimentConfig, problem: OnlineProblem) -> GraphSequence:
    g = dict(cfg.graph)
    q = int(g.pop("q", 1))
    base = g.get("base", "ring")
    if base == "file":
        seq = load_graph_sequence(g["path"])
        if seq.n != problem.n_agents:
            raise ValueError(f"graph file has {seq.n} nodes, problem has {problem.n_agents}")
        return seq
    scenario = {"n": problem.n_agents, **g}
    if base == "range":
        if not isinstance(problem, RoutingProblem):
            raise ValueError("base 'range' needs the routing scenario")
        scenario.pop("base")
        scenario["adjacency"] = problem.net.source_adjacency().tolist()
    return random_graph_sequence(scenario, substream_seed(cfg.seed, "graph"), q)


def build_run(cfg: ExperimentConfig) -> RunConfig:
    problem = build_problem(cfg)
    graph = build_graph(cfg, problem)
    report = check_assumption1(graph, max(cfg.horizon, graph.q))
    if not report.ok:
        raise GraphValidationError(f"graph sequence fails validation: {report}", report)
    return RunConfig(
        problem=problem, graph=graph, penalty=make_penalty(cfg.penalty, problem.m), horizon=cfg.horizon,
        stepsize=StepSize(**cfg.stepsize), seed=cfg.seed, lam0=cfg.lam0, lambda_cap=cfg.lambda_cap,
        validate_graph=False,
    )


def time_to_threshold(avg, eps: float) -> int | None:
    """First ``t`` with ``avg[s] <= eps`` for every ``s >= t``; ``None`` if the last value exceeds ``eps``."""
    above = np.flatnonzero(np.asarray(avg) > eps)
    if above.size == 0:
        return 1
    if above[-1] == len(avg) - 1:
        return None
    return int(above[-1]) + 2


def _min_or_none(a) -> float | None:
    return None if a is None else float(np.min(a))


def summarize(cfg: ExperimentConfig, run: RunConfig, traj: Trajectory, oracle, report, bounds, dis) -> dict:
    T = traj.horizon
    strict = strict_smooth_max_penalty(run.problem.m, dict(run.penalty.params).get("mu", 0.001))
    rc_strict = constraint_regret(traj.g_sum, strict)
    return {
        "horizon": T,
        "R_T": float(report.R[-1]),
        "R_avg_T": float(report.R_avg[-1]),
        "Rc_T": float(report.Rc[-1]),
        "Rc_avg_T": float(report.Rc_avg[-1]),
        "Rc_strict_avg_T": float(rc_strict[-1] / T),
        "penalty": run.penalty.spec(),
        "time_to_threshold": {
            "threshold": cfg.threshold,
            "cost": time_to_threshold(report.R_avg, cfg.threshold),
            "constraint": time_to_threshold(report.Rc_avg, cfg.threshold),
        },
        "empirical": {
            "C_lambda": traj.empirical_C_lambda,
            "C_y": traj.empirical_C_y,
            "C_F": bounds.inputs.C_F,
            "max_conservation_error": float(traj.conservation_error.max()),
        },
        "bounds": bounds.to_dict(),
        "bound_slack": {
            "regret": _min_or_none(report.bound_R - report.R),
            "constraint": _min_or_none(report.bound_Rc - report.Rc),
            "lambda_disagreement": float(dis.lam_slack.min()),
            "y_disagreement": float(dis.y_slack.min()),
        },
        "comparator": {
            "method": oracle.method,
            "value": oracle.value,
            "kkt_residual": oracle.kkt_residual,
            "converged": oracle.converged,
            "max_constraint": float(np.max(oracle.constraint)),
            "x": [v.tolist() for v in oracle.x],
        },
    }


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> Path:
    """Run, score and persist one experiment; returns the artifact directory.

    Files: ``trajectory.csv``, ``regret.csv``, ``summary.json`` and
    ``config.json``. They are written to a temporary sibling directory that
    is renamed into place only after everything succeeded.
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    run = build_run(cfg)  # validation happens before any computation or file I/O
    traj = run_dopd(run)
    oracle = offline_oracle(run.problem, cfg.horizon, **cfg.oracle)
    inputs = empirical_bound_inputs(traj, run.problem, run.penalty, run.graph.eta, run.graph.q)
    bounds = bound_constants(inputs)
    report = regret_report(traj.costs, traj.g_sum, run.problem, run.penalty, oracle.x, bounds)
    dis = disagreement_series(traj, bounds)
    summary = summarize(cfg, run, traj, oracle, report, bounds, dis)

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        write_trajectory_csv(traj, tmp / "trajectory.csv")
        report.write_csv(tmp / "regret.csv")
        _write_json(tmp / "summary.json", summary)
        (tmp / "config.json").write_text(cfg.dumps())
        if out.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{out.name}.old.", dir=out.parent))
            os.replace(out, old / out.name)
            os.replace(tmp, out)
            shutil.rmtree(old)
        else:
            os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


# ---------------------------------------------------------------------------
# presets


def _routing(n: int, q: int, horizon: int, seed: int, out: str) -> ExperimentConfig:
    return ExperimentConfig(
        scenario="routing",
        problem={"n_sources": n, "n_aps": 2, "positions": "random_box", "l": 0.5, "u": 0.8,
                 "noise_amplitude": 0.2, "r_min": 0.001},
        graph={"q": q, "base": "range", "p_extra": 0.1},
        penalty={"name": "smooth_max", "mu": 0.001},
        horizon=horizon, seed=seed, output_dir=out,
    )


def preset_members(name: str, horizon: int, seed: int, output_dir) -> dict[str, ExperimentConfig]:
    """Expand a preset into labelled configs."""
    root = Path(output_dir)
    if name == "fig4":
        return {f"N{n}": _routing(n, 1, horizon, seed, str(root / f"N{n}")) for n in (10, 15, 20)}
    if name == "fig5":
        return {f"Q{q}": _routing(10, q, horizon, seed, str(root / f"Q{q}")) for q in (1, 5, 10)}
    if name == "synthetic":
        cfg = ExperimentConfig(
            scenario="synthetic",
            problem={"n": 5, "a_center": "random", "a_noise": 0.1, "c": 0.3},
            graph={"q": 1, "base": "ring", "p_extra": 0.1},
            penalty={"name": "strict_smooth_max", "mu": 0.001},
            horizon=horizon, seed=seed, output_dir=str(root / "N5"),
        )
        return {"N5": cfg}
    raise ValueError(f"unknown preset {name!r}; expected fig4, fig5 or synthetic")


PRESETS = ("fig4", "fig5", "synthetic")


def run_preset(name: str, horizon: int, seed: int = 0, output_dir="runs") -> dict:
    """Run every member of a preset and write ``combined.csv`` and ``preset_summary.json``.

    The combined CSV has one row per round with each member's average cost
    and constraint regret side by side.
    """
    root = Path(output_dir) / name
    members = preset_members(name, horizon, seed, root)
    dirs = {label: run_experiment(cfg) for label, cfg in members.items()}
    columns = ["t"]
    data = [np.arange(1, horizon + 1, dtype=float)]
    times = {}
    for label, d in dirs.items():
        reg = np.loadtxt(d / "regret.csv", delimiter=",", skiprows=1, ndmin=2)
        columns += [f"R_avg_{label}", f"Rc_avg_{label}"]
        data += [reg[:, 4], reg[:, 6]]
        times[label] = json.loads((d / "summary.json").read_text())["time_to_threshold"]
    with open(root / "combined.csv", "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, np.column_stack(data), delimiter=",", fmt="%.17g")
    doc = {"preset": name, "horizon": horizon, "seed": seed,
           "members": {k: str(v) for k, v in dirs.items()}, "time_to_threshold": times}
    _write_json(root / "preset_summary.json", doc)
    return doc
