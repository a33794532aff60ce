import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ScalarProblem
from dopd.engine import RunConfig, run_dopd
from dopd.graphnet import random_graph_sequence
from dopd.metrics import (
    BoundInputs,
    InfeasibleProblemError,
    LagrangianProbe,
    audit_iterate_relations,
    bound_constants,
    comparator_costs,
    constraint_regret,
    cost_regret,
    disagreement_series,
    empirical_bound_inputs,
    lagrangian_value,
    offline_oracle,
    perturbation_bound,
    regret_report,
    tracker_bound,
)
from dopd.penalty import identity_penalty, smooth_max_penalty, strict_smooth_max_penalty
from dopd.problems import routing_problem, synthetic_problem

# ---------------------------------------------------------------------------
# oracle

SMALL_INSTANCES = [
    (lambda: ScalarProblem(a=[1.0], c=0.5, lo=0.0, hi=2.0), [0.5]),
    (lambda: synthetic_problem(1, {"a_center": 1.0, "c": 0.25}), [0.25]),
    (lambda: synthetic_problem(2, {"a_center": [1.0, 0.0], "c": 0.5}), [1.0, 0.0]),
]


@pytest.mark.parametrize("make,expected", SMALL_INSTANCES)
def test_oracle_small_instances(make, expected):
    prob = make()
    grid = offline_oracle(prob, 20, method="grid", resolution=1e-3)
    solver = offline_oracle(prob, 20, method="solver")
    assert np.allclose(grid.flat, expected, atol=1e-3)
    assert np.allclose(solver.flat, expected, atol=1e-6)
    assert np.max(np.abs(grid.flat - solver.flat)) <= 1e-3
    assert solver.converged and solver.kkt_residual <= 1e-8


def test_oracle_inactive_constraint_gives_unconstrained_minimiser():
    prob = ScalarProblem(a=[0.3, 0.7], c=1.0, b=0.0)  # g = -1 everywhere
    res = offline_oracle(prob, 5)
    assert np.allclose(res.flat, [0.3, 0.7], atol=1e-3)
    assert synthetic_problem(1, {"a_center": 0.0, "c": 1.0}) and np.allclose(
        offline_oracle(synthetic_problem(1, {"a_center": 0.0, "c": 1.0}), 5).flat, [0.0], atol=1e-3)


def test_oracle_on_noisy_targets_matches_kkt():
    prob = synthetic_problem(3, {"a_center": [0.8, 0.6, 0.9], "a_noise": 0.1, "c": 0.3}, seed=1)
    res = offline_oracle(prob, 500, method="solver")
    abar = np.array([-q.q[0] / q.P[0, 0] for q in prob.cumulative_costs(500)])
    # equal shift of every unclipped mean onto the budget sum x = 0.9
    shift = (abar.sum() - 0.9) / 3
    assert np.allclose(res.flat, abar - shift, atol=1e-6)


def test_oracle_infeasible_is_an_error():
    prob = ScalarProblem(a=[0.5], c=-0.5)  # needs x <= -0.5 on [0, 1]
    with pytest.raises(InfeasibleProblemError):
        offline_oracle(prob, 3, method="grid")
    with pytest.raises(InfeasibleProblemError):
        offline_oracle(prob, 3, method="solver")


def test_oracle_routing_reports_residual():
    prob = routing_problem({"n_sources": 3, "n_aps": 1, "seed": 0})
    res = offline_oracle(prob, 200, max_iter=5000)
    assert res.method == "solver"
    assert np.max(res.constraint) <= 1e-6
    assert math.isfinite(res.kkt_residual) and res.iterations <= 5000
    for i, xi in enumerate(res.x):
        assert np.allclose(prob.project(i, xi), xi, atol=1e-9)


# ---------------------------------------------------------------------------
# regret


def test_cost_regret_examples():
    assert cost_regret([1.0], [0.0])[0] == 1.0
    r = cost_regret([[1.0, 2.0], [0.5, 0.5], [3.0, 0.0]], [2.0, 1.0, 1.0])
    assert np.array_equal(r, [1.0, 1.0, 3.0])
    assert np.array_equal(np.diff(r), [0.0, 2.0])
    with pytest.raises(ValueError):
        cost_regret([1.0, 2.0], [1.0])


def test_constraint_regret_examples():
    assert constraint_regret(np.full((10, 1), 0.1), identity_penalty(1))[-1] == pytest.approx(1.0)
    assert constraint_regret([[1.0], [-1.0]], identity_penalty(1))[-1] == 0.0
    assert np.all(constraint_regret(np.full((5, 2), -0.01), smooth_max_penalty(2)) == 0.0)
    with pytest.raises(ValueError):
        constraint_regret(np.zeros((3, 2)), identity_penalty(1))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40))
def test_constraint_regret_monotone_for_penalty_type(values):
    rc = constraint_regret(np.array(values)[:, None], strict_smooth_max_penalty(1))
    assert np.all(rc >= 0) and np.all(np.diff(rc) >= 0)


def test_regret_against_own_point_is_zero():
    prob = ScalarProblem(a=[0.4, 0.6], c=0.5, x0=0.4)
    costs = np.array([[0.0, 0.04]] * 6)
    rep = regret_report(costs, np.zeros((6, 1)), prob, identity_penalty(1), [[0.4], [0.4]])
    assert np.allclose(rep.R, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        comparator_costs(prob, [[0.4]], 3)


def test_regret_recomputable_from_trajectory():
    prob = synthetic_problem(3, {"a_center": "random", "a_noise": 0.1, "c": 0.3}, seed=2)
    graph = random_graph_sequence({"n": 3, "base": "ring"}, 2, 1)
    traj = run_dopd(RunConfig(prob, graph, strict_smooth_max_penalty(1), 300))
    x_star = offline_oracle(prob, 300).x
    rep = regret_report(traj.costs, traj.g_sum, prob, strict_smooth_max_penalty(1), x_star)
    a = np.array([[c.a for c in costs] for _, costs in zip(range(300), prob.cost_stream())])
    direct = np.cumsum(traj.costs.sum(axis=1) - ((np.concatenate(x_star) - a) ** 2).sum(axis=1))
    assert np.max(np.abs(rep.R - direct)) <= 1e-9
    assert np.all(rep.Rc >= 0)


# ---------------------------------------------------------------------------
# bound constants

ZERO = dict(C_x=0.0, C_lambda=0.0, C_y=0.0, C_g=0.0, C_f=0.0, L_f=0.0, L_g=0.0, L_F=0.0, G_F=0.0, C_F=0.0)


def test_bound_constants_hand_example():
    b = bound_constants(eta=0.1, N=10, Q=1, **{**ZERO, "C_lambda": 1.0})
    assert b.beta == pytest.approx(0.9995, abs=1e-15)
    assert b.gamma == pytest.approx(1.0010008, abs=1e-7)
    assert b.A_N == pytest.approx(2001.0, abs=0.1)
    assert b.B[0] == pytest.approx(2 * 10 + b.A_N * 100)
    assert b.B[0] == pytest.approx(200120, rel=1e-4)


def test_bound_constants_vanish_with_zero_inputs():
    b = bound_constants(eta=0.5, N=4, Q=2, **ZERO)
    assert all(v == 0 for v in b.B + b.D + b.K)


def test_bound_constants_errors():
    with pytest.raises(ValueError, match="divergent"):
        bound_constants(eta=1e-300, N=10, Q=1, **ZERO)
    with pytest.raises(ValueError):
        bound_constants(eta=0.5, N=4, Q=1, **{**ZERO, "C_x": -1.0})


def _mp_bounds(p):
    mpmath.mp.dps = 50
    N, eta, Q = mpmath.mpf(p.N), mpmath.mpf(p.eta), mpmath.mpf(p.Q)
    base = 1 - eta / (2 * N * N)
    gamma, beta = base ** -2, base ** (1 / Q)
    A = gamma * beta / (1 - beta)
    Cx, Cl, Cy, Lf, Lg, LF, GF, CF = (mpmath.mpf(getattr(p, k)) for k in
                                      ("C_x", "C_lambda", "C_y", "L_f", "L_g", "L_F", "G_F", "C_F"))
    spread = 2 * N + A * N * N
    B = [spread * Cl, 4 * CF + 2 * CF * A * N, spread * Cy,
         4 * Lg ** 2 * LF * Cl + (4 * Lf * Lg + 2 * Lg ** 2 * LF * Cl * A) * N + 2 * Lf * Lg * A * N * N]
    K1 = (2 * Cx * Lg * Lf + CF) * Cl / N + (2 * Cx * Cl * Lg * GF + 2 * Cl * LF) * Cy
    K2 = ((Lg ** 2 * Lf ** 2 * Cl ** 2 + CF ** 2 + 8 * CF * Cx * Lg * Lf + 4 * CF) / N
          + 8 * Cx * Cl ** 2 * Lg ** 3 * GF * LF + 8 * Lg ** 2 * Cl ** 2 * LF ** 2 + 2 * Lf * Lg * LF * Cl)
    K3 = 2 * (Cx ** 2 + Cl ** 2) + Lf ** 2 + 8 * Lf * Lg * (Cx * Cl * Lg * GF + Cl * LF)
    K4 = 4 * Lg ** 2 * LF * Cl * (Cx * Cl * Lg * GF + Cl * LF)
    K5 = 4 * Lf * Lg * (Cx * Cl * Lg * GF + Cl * LF)
    K6, K7 = LF * Cy, 4 * Lg ** 2 * LF ** 2 * Cl
    K8, K9, K10 = 4 * Lf * Lg * LF + Cl, 2 * Lg ** 2 * LF ** 2 * Cl, 2 * Lf * Lg * LF
    D = [K1 * spread, K2 + (K3 + K4 * A) * N + K5 * A * N * N,
         K6 * spread, K7 + (K8 + K9 * A) * N + K10 * A * N * N]
    return A, B, D


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(1, 20), st.integers(1, 10),
       st.lists(st.floats(0.0, 50.0), min_size=10, max_size=10))
def test_bound_constants_match_high_precision(eta, n, q, consts):
    p = BoundInputs(eta, n, q, *consts)
    b = bound_constants(p)
    A, B, D = _mp_bounds(p)
    assert b.A_N == pytest.approx(float(A), rel=1e-12)
    for got, want in zip(b.B + b.D, B + D):
        assert got == pytest.approx(float(want), rel=1e-12, abs=1e-300)
    assert all(v >= 0 for v in b.B + b.D + b.K)


# ---------------------------------------------------------------------------
# disagreement and run-level bounds


def _run(n=4, T=400, seed=0, snapshots=False, penalty=None):
    prob = synthetic_problem(n, {"a_center": "random", "a_noise": 0.1, "c": 0.3}, seed=seed)
    graph = random_graph_sequence({"n": n, "base": "ring"}, seed, 1)
    pen = penalty or strict_smooth_max_penalty(1)
    return prob, graph, pen, run_dopd(RunConfig(prob, graph, pen, T, store_snapshots=snapshots))


def test_disagreement_hand_case():
    prob = ScalarProblem(a=[0.5, 0.5], c=0.5, x0=0.5)
    from dopd.graphnet import GraphSequence

    graph = GraphSequence.explicit([np.full((2, 2), 0.5)], eta=0.5)
    traj = run_dopd(RunConfig(prob, graph, identity_penalty(1), 1, lam0=[[0.0], [2.0]]))
    rep = disagreement_series(traj)
    assert rep.lam_pre[0] == 2.0 and rep.lam[0] == 0.0


def test_disagreement_zero_at_consensus():
    prob = ScalarProblem(a=[0.3, 0.3, 0.3], c=0.5, x0=0.3)
    from dopd.graphnet import GraphSequence

    traj = run_dopd(RunConfig(prob, GraphSequence.explicit([np.eye(3)], eta=0.5), identity_penalty(1), 20,
                              validate_graph=False))
    rep = disagreement_series(traj)
    assert rep.lam.max() <= 1e-15 and rep.y.max() <= 1e-15


def test_run_satisfies_disagreement_and_regret_bounds():
    prob, graph, pen, traj = _run()
    b = bound_constants(empirical_bound_inputs(traj, prob, pen, graph.eta, graph.q))
    dis = disagreement_series(traj, b)
    assert dis.holds
    rep = regret_report(traj.costs, traj.g_sum, prob, pen, offline_oracle(prob, traj.horizon).x, b)
    assert np.all(rep.R <= rep.bound_R) and np.all(rep.Rc <= rep.bound_Rc)


def test_perturbed_consensus_bound_holds_per_agent():
    prob, graph, _, traj = _run(n=5, T=500)
    for which in ("lam", "y"):
        dev, bound = perturbation_bound(traj, graph.eta, graph.q, which)
        assert np.all(dev <= bound + 1e-12)


def test_tracker_bound_covers_run():
    prob, graph, _, traj = _run(n=5, T=500)
    assert traj.empirical_C_y <= tracker_bound(traj, prob, graph.eta, graph.q)


def test_empirical_inputs_override():
    prob, graph, pen, traj = _run(T=50)
    inp = empirical_bound_inputs(traj, prob, pen, graph.eta, graph.q, C_lambda=10.0)
    assert inp.C_lambda == 10.0 and inp.C_y == traj.empirical_C_y
    with pytest.raises(ValueError):
        empirical_bound_inputs(traj, prob, pen, graph.eta, graph.q, C_z=1.0)


# ---------------------------------------------------------------------------
# Lagrangian


def test_lagrangian_examples():
    prob = ScalarProblem(a=[0.0], c=0.0, lo=-5, hi=5)
    costs = next(prob.cost_stream())
    assert lagrangian_value([np.array([2.0])], [3.0], costs, prob, identity_penalty(1)) == 10.0
    assert lagrangian_value([np.array([2.0])], [0.0], costs, prob, identity_penalty(1)) == 4.0


def test_lagrangian_gradients_match_finite_differences():
    prob = routing_problem({"n_sources": 3, "n_aps": 1, "seed": 5})
    pen = smooth_max_penalty(3, mu=0.5)
    probe = LagrangianProbe(prob, pen, next(prob.cost_stream()))
    rng = np.random.default_rng(0)
    xs = [rng.normal(size=d) for d in prob.dims]
    lam = rng.uniform(size=3)
    h = 1e-6
    flat = np.concatenate(xs)
    fd = np.zeros_like(flat)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        fd[k] = (probe.value(prob.split(flat + e), lam) - probe.value(prob.split(flat - e), lam)) / (2 * h)
    assert np.max(np.abs(fd - np.concatenate(probe.grad_x(xs, lam)))) <= 1e-5
    fd_l = [(probe.value(xs, lam + h * e) - probe.value(xs, lam - h * e)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(fd_l, probe.grad_lambda(xs), atol=1e-5)


# ---------------------------------------------------------------------------
# iterate audit


def test_audit_primal_relation_holds_against_oracle():
    prob, graph, pen, traj = _run(n=2, T=300, snapshots=True)
    x_star = offline_oracle(prob, 300).flat
    audit = audit_iterate_relations(traj, prob, pen, x_star, 0.0)
    assert audit.failed_a.size == 0
    assert audit.failed_b_scaled.size == 0


def test_audit_degenerate_comparator():
    prob, graph, pen, traj = _run(n=2, T=50, snapshots=True)
    audit = audit_iterate_relations(traj, prob, pen, traj.x, 0.0)
    assert audit.failed_a.size == 0


def test_audit_flags_corrupted_round():
    prob, graph, pen, traj = _run(n=2, T=100, snapshots=True)
    x_star = offline_oracle(prob, 100).flat
    clean = audit_iterate_relations(traj, prob, pen, x_star, 0.0)
    assert clean.failed_a.size == 0
    # push round 41's stored decision to the far corner; the 40 -> 41 transition breaks
    traj.x[40] = np.where(x_star < 0.5, 1.0, 0.0)
    bad = audit_iterate_relations(traj, prob, pen, x_star, 0.0)
    assert 40 in bad.failed_a
    assert set(bad.failed_a) <= {40, 41}


def test_audit_rejects_bad_comparators():
    prob, graph, pen, traj = _run(n=2, T=10, snapshots=True)
    with pytest.raises(ValueError):
        audit_iterate_relations(traj, prob, pen, [0.5, 0.5], -1.0)
    with pytest.raises(ValueError):
        audit_iterate_relations(traj, prob, pen, [1.5, 0.5], 0.0)
    _, _, _, plain = _run(n=2, T=10)
    with pytest.raises(ValueError):
        audit_iterate_relations(plain, prob, pen, [0.5, 0.5], 0.0)
