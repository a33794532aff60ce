"""Online problems: the abstract interface and the two concrete scenarios."""

from __future__ import annotations

from .base import OnlineProblem, ProblemConstants, QuadraticCost
from .routing import (
    FlowFitCost,
    RoutingNetwork,
    RoutingProblem,
    build_flow_matrix,
    cubic_coefficients,
    empirical_mean_update,
    flow_matrices,
    project_routing,
    project_simplex,
    random_positions,
    rate_fn,
    realize_rates,
    routing_constraint_g,
    routing_cost,
    routing_problem,
)
from .synthetic import SyntheticProblem, TargetCost, synthetic_problem


def make_problem(config: dict, seed: int = 0) -> OnlineProblem:
    """Build a problem from its ``to_config()`` dictionary."""
    kind = config.get("kind")
    if kind == "synthetic":
        return synthetic_problem(int(config["n"]), config, seed=seed)
    if kind == "routing":
        return routing_problem(config, seed=seed)
    raise ValueError(f"unknown problem kind {kind!r}; expected 'synthetic' or 'routing'")


__all__ = [
    "FlowFitCost",
    "OnlineProblem",
    "ProblemConstants",
    "QuadraticCost",
    "RoutingNetwork",
    "RoutingProblem",
    "SyntheticProblem",
    "TargetCost",
    "build_flow_matrix",
    "cubic_coefficients",
    "empirical_mean_update",
    "flow_matrices",
    "make_problem",
    "project_routing",
    "project_simplex",
    "random_positions",
    "rate_fn",
    "realize_rates",
    "routing_constraint_g",
    "routing_cost",
    "routing_problem",
    "synthetic_problem",
]
