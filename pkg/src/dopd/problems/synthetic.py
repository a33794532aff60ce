"""Separable scalar benchmark with a single coupled budget constraint.

Agent ``i`` picks ``x_i`` in ``[0, 1]``, pays ``(x_i - a_{i,t})^2`` and
contributes ``x_i - c_i`` to the shared constraint ``sum_i (x_i - c_i) <= 0``.
"""

from __future__ import annotations

import zlib
from typing import Iterator, Sequence

import numpy as np

from .base import OnlineProblem, ProblemConstants, QuadraticCost

_CHUNK = 1024


class TargetCost:
    """``(x - a)^2`` for scalar ``x`` stored as a length-1 array."""

    __slots__ = ("a",)

    def __init__(self, a: float):
        self.a = float(a)

    def value(self, x) -> float:
        d = float(x[0]) - self.a
        return d * d

    def grad(self, x) -> np.ndarray:
        return np.array([2.0 * (float(x[0]) - self.a)])

    def as_quadratic(self) -> QuadraticCost:
        return QuadraticCost([[2.0]], [-2.0 * self.a], self.a * self.a)


def _per_agent(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have length {n}")
    return arr


class SyntheticProblem(OnlineProblem):
    """Quadratic tracking costs with noisy targets.

    Parameters
    ----------
    n : int
        Number of agents.
    a_center : float, sequence or "random"
        Mean target per agent; ``"random"`` draws centres uniformly from
        ``[0.2, 0.9]`` using ``seed``.
    a_noise : float
        Half-width of the uniform perturbation added to the target each
        round; targets are clipped to ``[0, 1]``.
    c : float or sequence
        Per-agent budget share ``c_i``.
    x0 : float
        Initial decision of every agent.
    """

    def __init__(self, n: int, a_center=1.0, a_noise: float = 0.0, c=0.25,
                 seed: int = 0, x0: float = 0.5):
        if n < 1:
            raise ValueError("need at least one agent")
        self.n_agents = int(n)
        self.m = 1
        self.dims = (1,) * self.n_agents
        self.seed = int(seed)
        self._a_center_spec = a_center
        if isinstance(a_center, str):
            if a_center != "random":
                raise ValueError(f"unknown a_center {a_center!r}")
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(b"centers")]))
            self.a_center = rng.uniform(0.2, 0.9, size=self.n_agents)
        else:
            self.a_center = _per_agent(a_center, self.n_agents, "a_center")
        self.a_noise = float(a_noise)
        self.c = _per_agent(c, self.n_agents, "c")
        self.x0 = float(np.clip(x0, 0.0, 1.0))
        a_lo = max(0.0, float(np.min(self.a_center)) - self.a_noise)
        a_hi = min(1.0, float(np.max(self.a_center)) + self.a_noise)
        worst = max(a_hi, 1.0 - a_lo)
        self.constants = ProblemConstants(
            C_x=1.0,
            C_f=worst ** 2,
            C_g=float(np.max(np.maximum(np.abs(self.c), np.abs(1.0 - self.c)))),
            L_f=2.0 * worst,
            L_g=1.0,
        )

    def targets(self) -> Iterator[np.ndarray]:
        """Target vectors ``a_t`` for ``t = 1, 2, ...``."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(b"costs")]))
        while True:
            noise = rng.uniform(-1.0, 1.0, size=(_CHUNK, self.n_agents))
            block = np.clip(self.a_center + self.a_noise * noise, 0.0, 1.0)
            yield from block

    def cost_stream(self) -> Iterator[Sequence[TargetCost]]:
        for a in self.targets():
            yield [TargetCost(v) for v in a]

    def cumulative_costs(self, horizon: int) -> list[QuadraticCost]:
        total = np.zeros(self.n_agents)
        total_sq = np.zeros(self.n_agents)
        for t, a in enumerate(self.targets(), start=1):
            if t > horizon:
                break
            total += a
            total_sq += a * a
        return [QuadraticCost([[2.0 * horizon]], [-2.0 * s], s2) for s, s2 in zip(total, total_sq)]

    def constraint(self, i: int, x) -> np.ndarray:
        return np.array([float(x[0]) - self.c[i]])

    def constraint_jacobian(self, i: int, x) -> np.ndarray:
        return np.ones((1, 1))

    def project(self, i: int, v) -> np.ndarray:
        return np.clip(np.asarray(v, dtype=float), 0.0, 1.0)

    def initial_point(self, i: int) -> np.ndarray:
        return np.array([self.x0])

    def box_bounds(self, i: int):
        return np.zeros(1), np.ones(1)

    def to_config(self) -> dict:
        spec = self._a_center_spec
        if not isinstance(spec, str):
            spec = np.asarray(spec, dtype=float).tolist()
        return {
            "kind": "synthetic",
            "n": self.n_agents,
            "a_center": spec,
            "a_noise": self.a_noise,
            "c": self.c.tolist(),
            "seed": self.seed,
            "x0": self.x0,
        }


def synthetic_problem(n: int, params: dict | None = None, seed: int = 0) -> SyntheticProblem:
    """Build a :class:`SyntheticProblem` from a parameter dictionary."""
    params = dict(params or {})
    params.pop("kind", None)
    params.pop("n", None)
    params.setdefault("seed", seed)
    return SyntheticProblem(n, **params)
