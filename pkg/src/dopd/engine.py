"""Distributed online primal-dual iteration and its centralized counterpart.

Each round ``t`` maps the state ``(x_t, lambda_t, y_t)`` to round ``t+1``:

1. consensus on duals and trackers with ``W_t``;
2. projected primal step along ``s_i``;
3. projected dual ascent on the penalized tracked constraint;
4. tracker update with the local constraint innovation.

The round-1 state is the initialization, with ``y_{i,1} = g_i(x_{i,1})``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphnet import GraphSequence, GraphValidationError, check_assumption1
from .penalty import PenaltyFunction
from .problems.base import OnlineProblem


class NonFiniteStateError(RuntimeError):
    """A state variable became NaN or infinite."""

    def __init__(self, message: str, round_index: int):
        super().__init__(f"round {round_index}: {message}")
        self.round_index = round_index


@dataclass(frozen=True)
class StepSize:
    """``alpha_t = scale / sqrt(t)`` (``inv_sqrt``) or ``scale`` (``constant``)."""

    rule: str = "inv_sqrt"
    scale: float = 1.0

    def __post_init__(self):
        if self.rule not in ("inv_sqrt", "constant"):
            raise ValueError(f"unknown stepsize rule {self.rule!r}")
        if not self.scale > 0 or not math.isfinite(self.scale):
            raise ValueError(f"stepsize scale must be positive, got {self.scale}")

    def __call__(self, t: int) -> float:
        if self.rule == "constant":
            return self.scale
        return self.scale / math.sqrt(t)

    def to_config(self) -> dict:
        return {"rule": self.rule, "scale": self.scale}


@dataclass
class RunConfig:
    """Everything a run depends on.

    ``lam0`` initializes every agent's dual (scalar or length-``m``);
    ``lambda_cap`` optionally clips each ``||lambda_i||`` to a ball and is
    off by default. ``store_snapshots`` keeps per-round ``x``, ``lambda``,
    ``y`` and their consensus values, which the iterate audit needs.
    """

    problem: OnlineProblem
    graph: GraphSequence
    penalty: PenaltyFunction
    horizon: int
    stepsize: StepSize = field(default_factory=StepSize)
    seed: int = 0
    lam0: float | Sequence[float] = 0.0
    lambda_cap: float | None = None
    store_snapshots: bool = False
    validate_graph: bool = True

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        self.horizon = int(self.horizon)
        if self.penalty.m != self.problem.m:
            raise ValueError(f"penalty dimension {self.penalty.m} != constraint dimension {self.problem.m}")
        if self.graph.n != self.problem.n_agents:
            raise ValueError(f"graph has {self.graph.n} nodes but problem has {self.problem.n_agents} agents")
        if self.lambda_cap is not None and not self.lambda_cap > 0:
            raise ValueError("lambda_cap must be positive when set")


@dataclass
class SystemState:
    """All agents' primal, dual and tracker variables at one round."""

    x: list[np.ndarray]
    lam: np.ndarray
    y: np.ndarray

    def copy(self) -> "SystemState":
        return SystemState([xi.copy() for xi in self.x], self.lam.copy(), self.y.copy())


@dataclass
class Trajectory:
    """Per-round record of a run; row ``k`` belongs to round ``t = k + 1``.

    Disagreements are ``sum_i ||v_i - mean(v)||``; the ``pre`` variants use
    the round-start values and the ``post`` variants the consensus outputs.
    ``lam_dev`` and ``y_dev`` keep the per-agent round-start deviations.
    ``eps_lam`` and ``eps_y`` hold the per-agent norms of the perturbations
    added after averaging in round ``t``.
    """

    n_agents: int
    m: int
    horizon: int
    alpha: np.ndarray
    costs: np.ndarray
    g_sum: np.ndarray
    y_sum: np.ndarray
    lam_dis_pre: np.ndarray
    lam_dis_post: np.ndarray
    y_dis_pre: np.ndarray
    y_dis_post: np.ndarray
    lam_dev: np.ndarray
    y_dev: np.ndarray
    lam_mass_error: np.ndarray
    eps_lam: np.ndarray
    eps_y: np.ndarray
    lam_norm_max: np.ndarray
    y_norm_max: np.ndarray
    penalty_norm_max: np.ndarray
    s_norm_max: np.ndarray
    initial: SystemState
    final: SystemState
    x: np.ndarray | None = None
    lam: np.ndarray | None = None
    y: np.ndarray | None = None
    lam_tilde: np.ndarray | None = None
    y_tilde: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    @property
    def conservation_error(self) -> np.ndarray:
        """``||sum_i y_{i,t} - sum_i g_i(x_{i,t})||_inf`` per round."""
        return np.max(np.abs(self.y_sum - self.g_sum), axis=1)

    @property
    def empirical_C_lambda(self) -> float:
        """Largest dual norm seen, including the final state."""
        final = float(np.max(np.linalg.norm(self.final.lam, axis=1)))
        return max(float(self.lam_norm_max.max()), final)

    @property
    def empirical_C_y(self) -> float:
        final = float(np.max(np.linalg.norm(self.final.y, axis=1)))
        return max(float(self.y_norm_max.max()), final)

    def csv_columns(self) -> list[str]:
        return (["t"] + [f"cost_{i}" for i in range(self.n_agents)] + [f"g_sum_{k}" for k in range(self.m)]
                + ["lam_dis", "y_dis", "lam_norm_max", "y_norm_max", "alpha"])

    def csv_rows(self) -> np.ndarray:
        return np.column_stack([
            self.t, self.costs, self.g_sum, self.lam_dis_post, self.y_dis_post,
            self.lam_norm_max, self.y_norm_max, self.alpha,
        ])

    def digest(self) -> str:
        """SHA-256 over the per-round arrays and the final state."""
        h = hashlib.sha256()
        for arr in (self.costs, self.g_sum, self.y_sum, self.lam_dis_post, self.y_dis_post,
                    self.lam_norm_max, self.y_norm_max, np.concatenate(self.final.x),
                    self.final.lam, self.final.y):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per round: t, per-agent cost, sum of g, disagreements, dual and tracker maxima."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(traj.csv_columns()) + "\n")
        np.savetxt(fh, traj.csv_rows(), delimiter=",", fmt="%.17g")


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV keyed by header name."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, k] for k, name in enumerate(header)}


def save_snapshots(traj: Trajectory, path) -> None:
    """Full-state dump as a compressed ``.npz`` archive."""
    if traj.x is None:
        raise ValueError("trajectory was recorded without snapshots")
    np.savez_compressed(path, x=traj.x, lam=traj.lam, y=traj.y, lam_tilde=traj.lam_tilde,
                        y_tilde=traj.y_tilde, meta=json.dumps(traj.meta))


# ---------------------------------------------------------------------------
# single-step operations


def consensus_step(W, lam, y) -> tuple[np.ndarray, np.ndarray]:
    """Mix duals and trackers: row ``i`` of the output is ``sum_j W_ij v_j``."""
    W = np.asarray(W, dtype=float)
    lam = np.asarray(lam, dtype=float)
    y = np.asarray(y, dtype=float)
    n = lam.shape[0]
    if W.shape != (n, n) or y.shape[0] != n:
        raise ValueError(f"weight matrix {W.shape} does not match {n} agents")
    return W @ lam, W @ y


def search_direction(grad_f, jac_g, penalty_jac, lam_tilde, n_agents: int) -> np.ndarray:
    """``grad f + (1/N) dg' dF(N y~) lambda~``."""
    return np.asarray(grad_f, dtype=float) + (np.asarray(jac_g).T @ (np.asarray(penalty_jac).T @ lam_tilde)) / n_agents


def primal_step(x, grad_f, jac_g, penalty_jac, lam_tilde, alpha: float, n_agents: int,
                project) -> tuple[np.ndarray, np.ndarray]:
    """Projected step ``P[x - alpha s]``; returns the new point and ``s``.

    ``penalty_jac`` is ``dF`` evaluated at ``N y~_i``.
    """
    s = search_direction(grad_f, jac_g, penalty_jac, lam_tilde, n_agents)
    if not math.isfinite(s.sum()):
        raise FloatingPointError("non-finite primal search direction")
    return project(np.asarray(x, dtype=float) - alpha * s), s


def dual_step(lam_tilde, penalty_value, alpha: float, n_agents: int, cap: float | None = None) -> np.ndarray:
    """``[lambda~ + (alpha/N) F(N y~)]_+``, optionally shrunk into a ball of radius ``cap``."""
    lam = np.maximum(np.asarray(lam_tilde, dtype=float) + (alpha / n_agents) * np.asarray(penalty_value), 0.0)
    if cap is not None:
        norm = float(np.linalg.norm(lam))
        if norm > cap:
            lam = lam * (cap / norm)
    return lam


def tracker_step(y_tilde, g_new, g_old) -> np.ndarray:
    """``y~ + g(x_{t+1}) - g(x_t)``.

    Evaluated as ``(y~ - g(x_t)) + g(x_{t+1})`` so that a tracker which
    already equals ``g(x_t)`` moves to ``g(x_{t+1})`` without rounding drift.
    """
    return (np.asarray(y_tilde, dtype=float) - np.asarray(g_old)) + np.asarray(g_new)


def _deviations(v: np.ndarray) -> np.ndarray:
    """``||v_i - mean(v)||`` for every agent; ``v`` may carry leading stack axes."""
    return np.sqrt(((v - v.mean(axis=-2, keepdims=True)) ** 2).sum(axis=-1))


def _initial_lambda(lam0, n: int, m: int) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lam0, dtype=float), (m,)) if np.ndim(lam0) <= 1 else np.asarray(lam0, dtype=float)
    lam = np.broadcast_to(lam, (n, m)).copy()
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("initial duals must be finite and nonnegative")
    return lam


class _Recorder:
    def __init__(self, T: int, n: int, m: int, dim: int, snapshots: bool):
        self.T, self.n, self.m = T, n, m
        self.alpha = np.zeros(T)
        self.costs = np.zeros((T, n))
        self.g_sum = np.zeros((T, m))
        self.y_sum = np.zeros((T, m))
        self.scalars = {k: np.zeros(T) for k in (
            "lam_dis_pre", "lam_dis_post", "y_dis_pre", "y_dis_post", "lam_mass_error", "lam_norm_max", "y_norm_max", "penalty_norm_max", "s_norm_max")}
        self.eps_lam = np.zeros((T, n))
        self.eps_y = np.zeros((T, n))
        self.lam_dev = np.zeros((T, n))
        self.y_dev = np.zeros((T, n))
        self.snap = None
        if snapshots:
            self.snap = {"x": np.zeros((T, dim)), "lam": np.zeros((T, n, m)), "y": np.zeros((T, n, m)),
                         "lam_tilde": np.zeros((T, n, m)), "y_tilde": np.zeros((T, n, m))}

    def build(self, initial: SystemState, final: SystemState, meta: dict) -> Trajectory:
        snap = self.snap or {}
        return Trajectory(
            n_agents=self.n, m=self.m, horizon=self.T, alpha=self.alpha, costs=self.costs,
            g_sum=self.g_sum, y_sum=self.y_sum, eps_lam=self.eps_lam, eps_y=self.eps_y,
            lam_dev=self.lam_dev, y_dev=self.y_dev,
            initial=initial, final=final, meta=meta, **self.scalars, **snap,
        )


def _check_graph(config: RunConfig) -> None:
    if not config.validate_graph:
        return
    horizon = max(config.horizon, config.graph.q)
    report = check_assumption1(config.graph, horizon)
    if not report.ok:
        raise GraphValidationError(f"graph sequence fails the connectivity assumptions: {report}", report)


def run_dopd(config: RunConfig) -> Trajectory:
    """Run the distributed online primal-dual method for ``config.horizon`` rounds."""
    _check_graph(config)
    prob, pen, T = config.problem, config.penalty, config.horizon
    n, m = prob.n_agents, prob.m
    x = [np.asarray(prob.project(i, prob.initial_point(i)), dtype=float) for i in range(n)]
    g = np.array([prob.constraint(i, x[i]) for i in range(n)], dtype=float).reshape(n, m)
    lam = _initial_lambda(config.lam0, n, m)
    y = g.copy()
    initial = SystemState([xi.copy() for xi in x], lam.copy(), y.copy())
    rec = _Recorder(T, n, m, int(sum(prob.dims)), config.store_snapshots)
    sc = rec.scalars
    stream = prob.cost_stream()

    for k in range(T):
        t = k + 1
        alpha = config.stepsize(t)
        costs = next(stream)
        W = config.graph.matrix(t)
        lam_t, y_t = consensus_step(W, lam, y)

        rec.alpha[k] = alpha
        rec.costs[k] = [costs[i].value(x[i]) for i in range(n)]
        rec.g_sum[k] = g.sum(axis=0)
        rec.y_sum[k] = y.sum(axis=0)
        dev = _deviations(np.stack([lam, y, lam_t, y_t]))
        sc["lam_dis_pre"][k], sc["y_dis_pre"][k], sc["lam_dis_post"][k], sc["y_dis_post"][k] = dev.sum(axis=1)
        rec.lam_dev[k], rec.y_dev[k] = dev[0], dev[1]
        sc["lam_mass_error"][k] = np.abs(lam_t.sum(axis=0) - lam.sum(axis=0)).max()
        sc["lam_norm_max"][k] = np.sqrt((lam * lam).sum(axis=1)).max()
        sc["y_norm_max"][k] = np.sqrt((y * y).sum(axis=1)).max()
        if rec.snap is not None:
            rec.snap["x"][k] = np.concatenate(x)
            rec.snap["lam"][k], rec.snap["y"][k] = lam, y
            rec.snap["lam_tilde"][k], rec.snap["y_tilde"][k] = lam_t, y_t

        args = n * y_t
        if pen.rowwise:
            fvals, jacs = pen(args), pen.jacobian(args)
        else:
            fvals = np.array([pen(a) for a in args])
            jacs = [pen.jacobian(a) for a in args]
        new_x = []
        new_g = np.empty_like(g)
        s_max = 0.0
        for i in range(n):
            try:
                xi, s = primal_step(x[i], costs[i].grad(x[i]), prob.constraint_jacobian(i, x[i]),
                                    jacs[i], lam_t[i], alpha, n, lambda v, i=i: prob.project(i, v))
            except FloatingPointError as exc:
                raise NonFiniteStateError(f"agent {i}: {exc}", t) from exc
            new_g[i] = prob.constraint(i, xi)
            new_x.append(xi)
            s_max = max(s_max, math.sqrt(float(s @ s)))
        if config.lambda_cap is None:
            new_lam = np.maximum(lam_t + (alpha / n) * fvals, 0.0)
        else:
            new_lam = np.array([dual_step(lam_t[i], fvals[i], alpha, n, config.lambda_cap) for i in range(n)])
        new_y = tracker_step(y_t, new_g, g)
        sc["s_norm_max"][k] = s_max
        sc["penalty_norm_max"][k] = np.sqrt((fvals * fvals).sum(axis=1)).max()
        d_lam, d_g = new_lam - lam_t, new_g - g
        rec.eps_lam[k] = np.sqrt((d_lam * d_lam).sum(axis=1))
        rec.eps_y[k] = np.sqrt((d_g * d_g).sum(axis=1))
        if not (math.isfinite(new_lam.sum() + new_y.sum()) and all(math.isfinite(xi.sum()) for xi in new_x)):
            raise NonFiniteStateError("non-finite state after update", t)
        x, lam, y, g = new_x, new_lam, new_y, new_g

    final = SystemState([xi.copy() for xi in x], lam.copy(), y.copy())
    return rec.build(initial, final, {"method": "dopd", "seed": config.seed})


def run_centralized(config: RunConfig) -> Trajectory:
    """Centralized online primal-dual on the aggregate problem.

    One node sees the stacked decision, ``f = sum_i f_i`` and
    ``g = sum_i g_i``; it steps ``x <- P[x - alpha (grad f + dg' dF(g) lam)]``
    and ``lam <- [lam + alpha F(g(x_t))]_+``. The result is a one-agent
    trajectory.
    """
    prob, pen, T = config.problem, config.penalty, config.horizon
    n, m = prob.n_agents, prob.m
    off = prob.offsets
    x = np.concatenate([np.asarray(prob.project(i, prob.initial_point(i)), dtype=float) for i in range(n)])
    lam = _initial_lambda(config.lam0, 1, m)[0]

    def g_of(z):
        return sum(np.asarray(prob.constraint(i, z[off[i]:off[i + 1]]), dtype=float) for i in range(n))

    def project(z):
        return np.concatenate([prob.project(i, z[off[i]:off[i + 1]]) for i in range(n)])

    gx = g_of(x)
    initial = SystemState([x.copy()], lam[None, :].copy(), gx[None, :].copy())
    rec = _Recorder(T, 1, m, x.size, config.store_snapshots)
    sc = rec.scalars
    stream = prob.cost_stream()
    for k in range(T):
        t = k + 1
        alpha = config.stepsize(t)
        costs = next(stream)
        blocks = [x[off[i]:off[i + 1]] for i in range(n)]
        rec.alpha[k] = alpha
        rec.costs[k, 0] = sum(costs[i].value(blocks[i]) for i in range(n))
        rec.g_sum[k] = gx
        rec.y_sum[k] = gx
        sc["lam_norm_max"][k] = float(np.linalg.norm(lam))
        sc["y_norm_max"][k] = float(np.linalg.norm(gx))
        if rec.snap is not None:
            rec.snap["x"][k] = x
            rec.snap["lam"][k, 0] = rec.snap["lam_tilde"][k, 0] = lam
            rec.snap["y"][k, 0] = rec.snap["y_tilde"][k, 0] = gx

        grad = np.concatenate([costs[i].grad(blocks[i]) for i in range(n)])
        jac = np.hstack([prob.constraint_jacobian(i, blocks[i]) for i in range(n)])
        direction = grad + jac.T @ (pen.jacobian(gx).T @ lam)
        fval = pen(gx)
        x_new = project(x - alpha * direction)
        lam_new = np.maximum(lam + alpha * fval, 0.0)
        if config.lambda_cap is not None:
            norm = float(np.linalg.norm(lam_new))
            if norm > config.lambda_cap:
                lam_new *= config.lambda_cap / norm
        sc["s_norm_max"][k] = float(np.linalg.norm(direction))
        sc["penalty_norm_max"][k] = float(np.linalg.norm(fval))
        rec.eps_lam[k, 0] = float(np.linalg.norm(lam_new - lam))
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(lam_new))):
            raise NonFiniteStateError("non-finite state after update", t)
        g_new = g_of(x_new)
        rec.eps_y[k, 0] = float(np.linalg.norm(g_new - gx))
        x, lam, gx = x_new, lam_new, g_new

    final = SystemState([x.copy()], lam[None, :].copy(), gx[None, :].copy())
    return rec.build(initial, final, {"method": "centralized", "seed": config.seed})
