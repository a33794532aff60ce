"""Regret, offline comparator, disagreement audits and theoretical bounds.

Everything here post-processes finished runs. Inputs are either a
:class:`~dopd.engine.Trajectory` or the plain arrays read back from its CSV,
so saved experiments can be re-scored without rerunning them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import Trajectory
from .graphnet import gamma_beta, one_minus_beta
from .penalty import PenaltyFunction
from .problems.base import OnlineProblem, QuadraticCost


class InfeasibleProblemError(ValueError):
    """No point of the feasible set satisfies the coupled constraint."""


# ---------------------------------------------------------------------------
# offline comparator


@dataclass
class OracleResult:
    """Best fixed decision in hindsight.

    ``value`` is the cumulative cost ``sum_t sum_i f_{i,t}(x*_i)`` over the
    horizon the oracle was asked for; ``kkt_residual`` is 0 for grid search.
    """

    x: list[np.ndarray]
    value: float
    method: str
    horizon: int
    constraint: np.ndarray
    kkt_residual: float = 0.0
    converged: bool = True
    iterations: int = 0

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.x)


def _block_values(quad: QuadraticCost, pts: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("kj,jl,kl->k", pts, quad.P, pts) + pts @ quad.q + quad.r


def _grid_oracle(problem: OnlineProblem, quads, horizon: int, resolution: float) -> OracleResult:
    n = problem.n_agents
    per_agent = []
    for i in range(n):
        lo, hi = problem.box_bounds(i)
        axes = []
        for a, b in zip(lo, hi):
            steps = int(round((b - a) / resolution))
            axes.append(a + (b - a) * np.arange(steps + 1) / steps)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        vals = _block_values(quads[i], mesh)
        cons = np.array([problem.constraint(i, p) for p in mesh]).reshape(len(mesh), problem.m)
        per_agent.append((mesh, vals, cons))
    # combine the agents' grids by broadcasting
    total = np.zeros(())
    g = np.zeros((problem.m,))
    for k, (_, vals, cons) in enumerate(per_agent):
        shape = [1] * n
        shape[k] = len(vals)
        total = total + vals.reshape(shape)
        g = g + cons.reshape(shape + [problem.m])
    feasible = np.all(g <= 1e-12, axis=-1)
    if not feasible.any():
        raise InfeasibleProblemError("no grid point satisfies the coupled constraint")
    masked = np.where(feasible, total, np.inf)
    idx = np.unravel_index(int(np.argmin(masked)), masked.shape)
    x = [per_agent[i][0][idx[i]].copy() for i in range(n)]
    return OracleResult(x, float(masked[idx]), "grid", horizon, g[idx].copy())


def _augmented_lagrangian(problem: OnlineProblem, quads, tol: float, max_outer: int, max_iter: int):
    n, m = problem.n_agents, problem.m
    off = problem.offsets
    P = [q.P for q in quads]
    c = [q.q for q in quads]

    def blocks(z):
        return [z[off[i]:off[i + 1]] for i in range(n)]

    def project(z):
        return np.concatenate([problem.project(i, b) for i, b in enumerate(blocks(z))])

    def g_of(z):
        return sum(np.asarray(problem.constraint(i, b), dtype=float) for i, b in enumerate(blocks(z)))

    def jac_t(z, v):
        return np.concatenate([problem.constraint_jacobian(i, b).T @ v for i, b in enumerate(blocks(z))])

    def f_val(z):
        return sum(0.5 * b @ P[i] @ b + c[i] @ b for i, b in enumerate(blocks(z)))

    def f_grad(z):
        return np.concatenate([P[i] @ b + c[i] for i, b in enumerate(blocks(z))])

    def kkt(z, mu):
        gz = g_of(z)
        grad = f_grad(z) + jac_t(z, mu)
        stat = float(np.linalg.norm(z - project(z - grad), np.inf))
        feas = float(np.max(np.maximum(gz, 0.0)))
        comp = float(np.max(np.abs(np.minimum(mu, -gz)))) if m else 0.0
        return max(stat, feas, comp)

    x = project(np.concatenate([problem.initial_point(i) for i in range(n)]))
    mu = np.zeros(m)
    rho = 10.0
    lip = 1.0
    iters = 0
    res = kkt(x, mu)
    prev_feas = np.inf
    for _ in range(max_outer):
        def phi_grad(z):
            return f_grad(z) + jac_t(z, np.maximum(mu + rho * g_of(z), 0.0))

        # accelerated projected gradient; Lipschitz backtracking and restarts use
        # gradients only, so progress is not limited by rounding in the objective
        inner_tol = max(tol / 10.0, 1e-14)
        yk, xk, tk = x.copy(), x.copy(), 1.0
        while iters < max_iter:
            iters += 1
            gy = phi_grad(yk)
            while True:
                xn = project(yk - gy / lip)
                d = xn - yk
                if np.linalg.norm(phi_grad(xn) - gy) <= lip * np.linalg.norm(d) * (1.0 + 1e-12) or lip > 1e15:
                    break
                lip *= 2.0
            if float(np.linalg.norm(d, np.inf)) * lip <= inner_tol:
                xk = xn
                break
            if (yk - xn) @ (xn - xk) > 0:  # gradient restart
                tk = 1.0
            tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            yk = xn + ((tk - 1.0) / tn) * (xn - xk)
            xk, tk = xn, tn
            lip = max(lip * 0.95, 1e-8)
        x = xk
        gx = g_of(x)
        mu = np.maximum(mu + rho * gx, 0.0)
        res = kkt(x, mu)
        if res <= tol:
            return x, mu, res, True, iters
        if iters >= max_iter:
            break
        feas = float(np.max(np.maximum(gx, 0.0))) if m else 0.0
        if feas > 0.25 * prev_feas and rho < 1e8:
            rho *= 10.0
        prev_feas = feas
    return x, mu, res, False, iters


def offline_oracle(problem: OnlineProblem, horizon: int, method: str = "auto", resolution: float = 1e-3,
                   tol: float = 1e-8, max_outer: int = 60, max_iter: int = 20000) -> OracleResult:
    """Best fixed feasible decision for the first ``horizon`` rounds.

    ``method="grid"`` searches a uniform grid of the given resolution and is
    used automatically when every agent's set is a box and the total
    dimension is at most two. Otherwise the time-averaged problem is solved
    by a method of multipliers with accelerated projected-gradient inner
    solves, stopped at KKT residual ``tol`` or after ``max_iter`` inner
    iterations in total; ``converged`` and ``kkt_residual`` record which.

    Raises
    ------
    InfeasibleProblemError
        If no feasible point is found.
    """
    quads = problem.cumulative_costs(horizon)
    boxes = [problem.box_bounds(i) for i in range(problem.n_agents)]
    if method == "auto":
        method = "grid" if all(b is not None for b in boxes) and sum(problem.dims) <= 2 else "solver"
    if method == "grid":
        if any(b is None for b in boxes):
            raise ValueError("grid search needs box-shaped local sets")
        return _grid_oracle(problem, quads, horizon, resolution)
    if method != "solver":
        raise ValueError(f"unknown oracle method {method!r}")
    avg = [q.scaled(1.0 / horizon) for q in quads]
    x, mu, res, ok, iters = _augmented_lagrangian(problem, avg, tol, max_outer, max_iter)
    xs = problem.split(x)
    g = problem.constraint_sum(xs)
    if np.max(g) > max(10 * tol, 1e-6):
        raise InfeasibleProblemError(f"solver ended with constraint violation {np.max(g):.3g}")
    value = sum(quads[i].value(xs[i]) for i in range(problem.n_agents))
    return OracleResult([xi.copy() for xi in xs], float(value), "solver", horizon, g, res, ok, iters)


# ---------------------------------------------------------------------------
# regret


def comparator_costs(problem: OnlineProblem, x_star: Sequence, horizon: int) -> np.ndarray:
    """``sum_i f_{i,t}(x*_i)`` for ``t = 1 .. horizon`` by replaying the cost stream."""
    xs = [np.asarray(v, dtype=float) for v in x_star]
    if len(xs) != problem.n_agents or any(v.shape != (d,) for v, d in zip(xs, problem.dims)):
        raise ValueError("comparator does not match the problem's agent dimensions")
    out = np.zeros(horizon)
    for k, costs in enumerate(problem.cost_stream()):
        if k >= horizon:
            break
        out[k] = sum(c.value(x) for c, x in zip(costs, xs))
    return out


def cost_regret(costs, cost_star) -> np.ndarray:
    """Cumulative ``R(t)`` from realized per-round costs and comparator costs.

    ``costs`` is ``(T,)`` network totals or ``(T, N)`` per agent.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim == 2:
        costs = costs.sum(axis=1)
    cost_star = np.asarray(cost_star, dtype=float)
    if costs.shape != cost_star.shape:
        raise ValueError(f"cost series shapes differ: {costs.shape} vs {cost_star.shape}")
    return np.cumsum(costs - cost_star)


def constraint_regret(g_sum, penalty: PenaltyFunction) -> np.ndarray:
    """``R^c(t) = ||sum_{s<=t} F(sum_i g_i(x_{i,s}))||`` for every ``t``."""
    g_sum = np.atleast_2d(np.asarray(g_sum, dtype=float))
    if g_sum.shape[1] != penalty.m:
        raise ValueError(f"constraint dimension {g_sum.shape[1]} != penalty dimension {penalty.m}")
    f = penalty(g_sum) if penalty.rowwise else np.array([penalty(row) for row in g_sum])
    return np.linalg.norm(np.cumsum(f, axis=0), axis=1)


@dataclass
class RegretReport:
    """Cumulative regrets per round with optional theoretical bounds."""

    t: np.ndarray
    cost: np.ndarray
    cost_star: np.ndarray
    R: np.ndarray
    Rc: np.ndarray
    penalty: str
    comparator: list[np.ndarray]
    bound_R: np.ndarray | None = None
    bound_Rc: np.ndarray | None = None

    @property
    def R_avg(self) -> np.ndarray:
        return self.R / self.t

    @property
    def Rc_avg(self) -> np.ndarray:
        return self.Rc / self.t

    def columns(self) -> list[str]:
        return ["t", "cost", "cost_star", "R", "R_avg", "Rc", "Rc_avg", "bound_R", "bound_Rc"]

    def rows(self) -> np.ndarray:
        nan = np.full(self.t.shape, np.nan)
        return np.column_stack([
            self.t, self.cost, self.cost_star, self.R, self.R_avg, self.Rc, self.Rc_avg,
            nan if self.bound_R is None else self.bound_R,
            nan if self.bound_Rc is None else self.bound_Rc,
        ])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns()) + "\n")
            np.savetxt(fh, self.rows(), delimiter=",", fmt="%.17g")


def regret_report(costs, g_sum, problem: OnlineProblem, penalty: PenaltyFunction, x_star,
                  bounds: "BoundConstants | None" = None) -> RegretReport:
    """Cost and constraint regret for a run against comparator ``x_star``."""
    costs = np.asarray(costs, dtype=float)
    total = costs.sum(axis=1) if costs.ndim == 2 else costs
    horizon = total.shape[0]
    star = comparator_costs(problem, x_star, horizon)
    t = np.arange(1, horizon + 1, dtype=float)
    rep = RegretReport(t, total, star, cost_regret(total, star), constraint_regret(g_sum, penalty),
                       penalty.name, [np.asarray(v, dtype=float) for v in x_star])
    if bounds is not None:
        rep.bound_R = bounds.regret_bound(t)
        rep.bound_Rc = bounds.constraint_bound(t)
    return rep


# ---------------------------------------------------------------------------
# theoretical constants


@dataclass(frozen=True)
class BoundInputs:
    eta: float
    N: int
    Q: int
    C_x: float
    C_lambda: float
    C_y: float
    C_g: float
    C_f: float
    L_f: float
    L_g: float
    L_F: float
    G_F: float
    C_F: float


@dataclass(frozen=True)
class BoundConstants:
    """Disagreement and regret bound constants with the inputs that produced them."""

    inputs: BoundInputs
    gamma: float
    beta: float
    A_N: float
    B: tuple[float, float, float, float]
    D: tuple[float, float, float, float]
    K: tuple[float, ...]

    def lambda_disagreement_bound(self, T):
        return self.B[0] + self.B[1] * np.sqrt(T)

    def y_disagreement_bound(self, T):
        return self.B[2] + self.B[3] * np.sqrt(T)

    def regret_bound(self, T):
        return self.D[0] + self.D[1] * np.sqrt(T)

    def constraint_bound(self, T):
        return self.D[2] + self.D[3] * np.sqrt(T)

    def to_dict(self) -> dict:
        out = {"inputs": asdict(self.inputs), "gamma": self.gamma, "beta": self.beta, "A_N": self.A_N}
        out.update({f"B{k + 1}": v for k, v in enumerate(self.B)})
        out.update({f"D{k + 1}": v for k, v in enumerate(self.D)})
        out.update({f"K{k + 1}": v for k, v in enumerate(self.K)})
        return out


def bound_constants(inputs: BoundInputs | None = None, **kwargs) -> BoundConstants:
    """Evaluate ``A_N``, ``B1..B4``, ``K1..K10`` and ``D1..D4``.

    Pass a :class:`BoundInputs` or its fields as keyword arguments.
    """
    p = inputs if inputs is not None else BoundInputs(**kwargs)
    for name, v in asdict(p).items():
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"bound input {name}={v} must be finite and nonnegative")
    gamma, beta = gamma_beta(p.eta, p.N, p.Q)
    gap = one_minus_beta(p.eta, p.N, p.Q)
    if not gap > 0.0 or not beta < 1.0:
        raise ValueError("divergent A_N: beta rounds to 1 for these eta, N, Q")
    A = gamma * beta / gap
    N = p.N
    Cx, Cl, Cy, Lf, Lg, LF, GF, CF = p.C_x, p.C_lambda, p.C_y, p.L_f, p.L_g, p.L_F, p.G_F, p.C_F
    spread = 2 * N + A * N * N
    B1 = spread * Cl
    B2 = 4 * CF + 2 * CF * A * N
    B3 = spread * Cy
    B4 = 4 * Lg ** 2 * LF * Cl + (4 * Lf * Lg + 2 * Lg ** 2 * LF * Cl * A) * N + 2 * Lf * Lg * A * N * N
    inner = Cx * Cl * Lg * GF + Cl * LF
    K1 = (2 * Cx * Lg * Lf + CF) * Cl / N + (2 * Cx * Cl * Lg * GF + 2 * Cl * LF) * Cy
    K2 = ((Lg ** 2 * Lf ** 2 * Cl ** 2 + CF ** 2 + 8 * CF * Cx * Lg * Lf + 4 * CF) / N
          + 8 * Cx * Cl ** 2 * Lg ** 3 * GF * LF + 8 * Lg ** 2 * Cl ** 2 * LF ** 2 + 2 * Lf * Lg * LF * Cl)
    K3 = 2 * (Cx ** 2 + Cl ** 2) + Lf ** 2 + 8 * Lf * Lg * inner
    K4 = 4 * Lg ** 2 * LF * Cl * inner
    K5 = 4 * Lf * Lg * inner
    K6 = LF * Cy
    K7 = 4 * Lg ** 2 * LF ** 2 * Cl
    K8 = 4 * Lf * Lg * LF + Cl
    K9 = 2 * Lg ** 2 * LF ** 2 * Cl
    K10 = 2 * Lf * Lg * LF
    D1 = K1 * spread
    D2 = K2 + (K3 + K4 * A) * N + K5 * A * N * N
    D3 = K6 * spread
    D4 = K7 + (K8 + K9 * A) * N + K10 * A * N * N
    return BoundConstants(p, gamma, beta, A, (B1, B2, B3, B4), (D1, D2, D3, D4),
                          (K1, K2, K3, K4, K5, K6, K7, K8, K9, K10))


def empirical_C_F(traj: Trajectory, penalty: PenaltyFunction) -> float:
    """Largest penalty norm seen, over ``F(N y~_i)`` and ``F(sum_i g_i)``."""
    f = penalty(traj.g_sum) if penalty.rowwise else np.array([penalty(r) for r in traj.g_sum])
    return max(float(traj.penalty_norm_max.max()), float(np.linalg.norm(f, axis=1).max()))


def empirical_bound_inputs(traj: Trajectory, problem: OnlineProblem, penalty: PenaltyFunction,
                           eta: float, q: int, **overrides) -> BoundInputs:
    """Bound inputs with ``C_lambda``, ``C_y`` and ``C_F`` taken from the run.

    Any field can be overridden by keyword, e.g. a declared ``C_lambda``.
    """
    c = problem.constants
    values = dict(
        eta=eta, N=problem.n_agents, Q=q, C_x=c.C_x, C_lambda=traj.empirical_C_lambda,
        C_y=traj.empirical_C_y, C_g=c.C_g, C_f=c.C_f, L_f=c.L_f, L_g=c.L_g,
        L_F=penalty.lipschitz, G_F=penalty.grad_lipschitz, C_F=empirical_C_F(traj, penalty),
    )
    unknown = set(overrides) - set(values)
    if unknown:
        raise ValueError(f"unknown bound inputs: {sorted(unknown)}")
    values.update(overrides)
    return BoundInputs(**values)


# ---------------------------------------------------------------------------
# disagreement


@dataclass
class DisagreementReport:
    """Per-round disagreement sums and their running totals."""

    lam: np.ndarray
    y: np.ndarray
    lam_pre: np.ndarray
    y_pre: np.ndarray
    bound_lam: np.ndarray | None = None
    bound_y: np.ndarray | None = None

    @property
    def lam_cumulative(self) -> np.ndarray:
        return np.cumsum(self.lam)

    @property
    def y_cumulative(self) -> np.ndarray:
        return np.cumsum(self.y)

    @property
    def lam_slack(self) -> np.ndarray:
        return self.bound_lam - self.lam_cumulative

    @property
    def y_slack(self) -> np.ndarray:
        return self.bound_y - self.y_cumulative

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lam_slack >= 0) and np.all(self.y_slack >= 0))


def disagreement_series(traj: Trajectory, bounds: BoundConstants | None = None) -> DisagreementReport:
    """``sum_i ||lambda~_i - mean||`` and the tracker analogue per round, optionally with bounds."""
    rep = DisagreementReport(traj.lam_dis_post.copy(), traj.y_dis_post.copy(),
                             traj.lam_dis_pre.copy(), traj.y_dis_pre.copy())
    if bounds is not None:
        t = traj.t.astype(float)
        rep.bound_lam = bounds.lambda_disagreement_bound(t)
        rep.bound_y = bounds.y_disagreement_bound(t)
    return rep


def perturbation_bound(traj: Trajectory, eta: float, q: int, which: str = "lam") -> tuple[np.ndarray, np.ndarray]:
    """Per-agent deviation from the average and its perturbed-consensus bound.

    Returns ``(dev, bound)`` of shape ``(T, N)`` for rounds ``2 .. T+1``:
    the bound is ``N gamma beta^t max_j ||theta_{j,1}|| + gamma S_t +
    (1/N) E_{t+1} + ||eps_{i,t+1}||`` where ``E`` sums the perturbation
    norms over agents and ``S_t = sum_{l<t} beta^{t-l} E_{l+1}``.
    """
    if which not in ("lam", "y"):
        raise ValueError("which must be 'lam' or 'y'")
    n = traj.n_agents
    gamma, beta = gamma_beta(eta, n, q)
    eps = traj.eps_lam if which == "lam" else traj.eps_y
    init = traj.initial.lam if which == "lam" else traj.initial.y
    final = traj.final.lam if which == "lam" else traj.final.y
    dev_all = traj.lam_dev if which == "lam" else traj.y_dev
    final_dev = np.linalg.norm(final - final.mean(axis=0), axis=1)
    dev = np.vstack([dev_all[1:], final_dev[None, :]])
    theta1 = float(np.max(np.linalg.norm(init, axis=1)))
    E = eps.sum(axis=1)
    T = traj.horizon
    S = np.zeros(T)
    for k in range(1, T):  # S_{t+1} = beta (S_t + E_{t+1})
        S[k] = beta * (S[k - 1] + E[k - 1])
    t = np.arange(1, T + 1)
    base = n * gamma * beta ** t * theta1 + gamma * S + E / n
    return dev, base[:, None] + eps


def tracker_bound(traj: Trajectory, problem: OnlineProblem, eta: float, q: int) -> float:
    """Uniform bound on ``||y_{i,t}||`` from the initial trackers and declared constants."""
    n = problem.n_agents
    gamma, beta = gamma_beta(eta, n, q)
    c = problem.constants
    y1 = traj.initial.y
    spread = float(np.max(np.linalg.norm(y1 - y1.mean(axis=0), axis=1)))
    drift = n * gamma * float(np.max(np.linalg.norm(y1, axis=1))) \
        + 2.0 * gamma * beta / one_minus_beta(eta, n, q) * c.L_g * c.C_x + 4.0 * c.L_g * c.C_x
    return max(spread, drift) + c.C_g


# ---------------------------------------------------------------------------
# Lagrangian


class LagrangianProbe:
    """``H_t(x, lam) = sum_i f_{i,t}(x_i) + (1/N) lam' F(sum_i g_i(x_i))`` for one round's costs."""

    def __init__(self, problem: OnlineProblem, penalty: PenaltyFunction, costs: Sequence):
        self.problem = problem
        self.penalty = penalty
        self.costs = costs
        self.n = problem.n_agents

    def value(self, xs: Sequence, lam) -> float:
        g = self.problem.constraint_sum(xs)
        return float(sum(c.value(x) for c, x in zip(self.costs, xs)) + np.dot(lam, self.penalty(g)) / self.n)

    def grad_x(self, xs: Sequence, lam) -> list[np.ndarray]:
        g = self.problem.constraint_sum(xs)
        w = self.penalty.jacobian(g).T @ np.asarray(lam, dtype=float)
        return [c.grad(x) + self.problem.constraint_jacobian(i, x).T @ w / self.n
                for i, (c, x) in enumerate(zip(self.costs, xs))]

    def grad_lambda(self, xs: Sequence) -> np.ndarray:
        return self.penalty(self.problem.constraint_sum(xs)) / self.n


def lagrangian_value(xs: Sequence, lam, costs: Sequence, problem: OnlineProblem, penalty: PenaltyFunction) -> float:
    return LagrangianProbe(problem, penalty, costs).value(xs, lam)


# ---------------------------------------------------------------------------
# iterate relations


@dataclass
class IterateAudit:
    """Per-round slack of the primal and dual iterate inequalities.

    ``slack_b`` tests the dual relation as stated; ``slack_b_scaled`` tests
    it with the left side multiplied by ``N``, which is what summing the
    per-agent dual steps yields. A round fails when its slack is below
    ``-tol``, a rounding allowance of ``1e-12 (1 + |lhs| + |rhs|)``.
    """

    slack_a: np.ndarray
    slack_b: np.ndarray
    slack_b_scaled: np.ndarray
    constants: dict = field(default_factory=dict)
    tol_a: np.ndarray | float = 0.0
    tol_b: np.ndarray | float = 0.0
    tol_b_scaled: np.ndarray | float = 0.0

    @property
    def failed_a(self) -> np.ndarray:
        return np.flatnonzero(self.slack_a < -self.tol_a) + 1

    @property
    def failed_b(self) -> np.ndarray:
        return np.flatnonzero(self.slack_b < -self.tol_b) + 1

    @property
    def failed_b_scaled(self) -> np.ndarray:
        return np.flatnonzero(self.slack_b_scaled < -self.tol_b_scaled) + 1


def audit_iterate_relations(traj: Trajectory, problem: OnlineProblem, penalty: PenaltyFunction,
                            x_cmp, lam_cmp, C_lambda: float | None = None,
                            C_F: float | None = None, rtol: float = 1e-12) -> IterateAudit:
    """Evaluate both iterate inequalities at every round for comparator ``(x_cmp, lam_cmp)``.

    ``x_cmp`` is a stacked point of ``X`` (or one per round, shape
    ``(T, sum n_i)``); ``lam_cmp`` must be nonnegative. Constants default
    to the declared problem constants and the run's empirical maxima.
    """
    if traj.x is None:
        raise ValueError("the audit needs a trajectory recorded with store_snapshots=True")
    n, T = problem.n_agents, traj.horizon
    x_cmp = np.asarray(x_cmp, dtype=float)
    per_round = x_cmp.ndim == 2
    if x_cmp.shape[-1] != traj.x.shape[1] or (per_round and x_cmp.shape[0] != T):
        raise ValueError("comparator has the wrong dimension")
    lam_cmp = np.broadcast_to(np.asarray(lam_cmp, dtype=float), (problem.m,))
    if np.any(lam_cmp < 0):
        raise ValueError("comparator dual must be nonnegative")
    for row in (x_cmp if per_round else x_cmp[None, :]):
        proj = np.concatenate([problem.project(i, b) for i, b in enumerate(problem.split(row))])
        if np.max(np.abs(proj - row)) > 1e-9:
            raise ValueError("comparator primal point is outside the feasible set")

    c = problem.constants
    C_l = traj.empirical_C_lambda if C_lambda is None else C_lambda
    CF = empirical_C_F(traj, penalty) if C_F is None else C_F
    LF, GF = penalty.lipschitz, penalty.grad_lipschitz
    x_next = np.vstack([traj.x[1:], np.concatenate(traj.final.x)[None, :]])
    lam_next = np.concatenate([traj.lam[1:], traj.final.lam[None]], axis=0)

    slack_a = np.zeros(T)
    slack_b = np.zeros(T)
    slack_bs = np.zeros(T)
    tols = np.zeros((3, T))
    for k, costs in enumerate(problem.cost_stream()):
        if k >= T:
            break
        alpha = traj.alpha[k]
        probe = LagrangianProbe(problem, penalty, costs)
        xt = problem.split(traj.x[k])
        xc_flat = x_cmp[k] if per_round else x_cmp
        xc = problem.split(xc_flat)
        lam_bar = traj.lam[k].mean(axis=0)
        y_bar = traj.y[k].mean(axis=0)
        dis_lam = float(np.linalg.norm(traj.lam_tilde[k] - lam_bar, axis=1).sum())
        dis_y = float(np.linalg.norm(traj.y_tilde[k] - y_bar, axis=1).sum())

        lhs_a = probe.value(xt, lam_bar) - probe.value(xc, lam_bar)
        rhs_a = ((np.sum((traj.x[k] - xc_flat) ** 2) - np.sum((x_next[k] - xc_flat) ** 2)) / (2 * alpha)
                 + 0.5 * alpha * n * (c.L_f + c.L_g * LF * C_l / n) ** 2
                 + 2 * c.C_x * C_l * c.L_g * GF * dis_y
                 + 2.0 / n * c.C_x * c.L_g * LF * dis_lam)
        lhs_b = probe.value(xt, lam_cmp) - probe.value(xt, lam_bar)
        rhs_b = ((np.sum((traj.lam[k] - lam_cmp) ** 2) - np.sum((lam_next[k] - lam_cmp) ** 2)) / (2 * alpha)
                 + alpha / (2 * n) * CF ** 2 + CF / n * dis_lam + 2 * C_l * LF * dis_y)
        slack_a[k] = rhs_a - lhs_a
        slack_b[k] = rhs_b - lhs_b
        slack_bs[k] = rhs_b - n * lhs_b
        tols[:, k] = rtol * (1.0 + abs(rhs_a) + abs(lhs_a)), rtol * (1.0 + abs(rhs_b) + abs(lhs_b)), \
            rtol * (1.0 + abs(rhs_b) + n * abs(lhs_b))
    consts = {"C_x": c.C_x, "C_lambda": C_l, "C_F": CF, "L_f": c.L_f, "L_g": c.L_g, "L_F": LF, "G_F": GF}
    return IterateAudit(slack_a, slack_b, slack_bs, consts, *tols)
