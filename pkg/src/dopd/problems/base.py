"""Online problem interface shared by the engine and the metrics."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class ProblemConstants:
    """Declared bounds over the local feasible sets.

    ``C_x`` bounds ``||x||``, ``C_f`` bounds ``|f_{i,t}|``, ``C_g`` bounds
    ``||g_i||``, ``L_f`` and ``L_g`` bound the gradient / Jacobian norms.
    """

    C_x: float
    C_f: float
    C_g: float
    L_f: float
    L_g: float


class QuadraticCost:
    """``0.5 x'Px + q'x + r``; closed under addition."""

    __slots__ = ("P", "q", "r")

    def __init__(self, P, q=None, r: float = 0.0):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        n = self.P.shape[0]
        self.q = np.zeros(n) if q is None else np.asarray(q, dtype=float).reshape(n)
        self.r = float(r)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.r)

    def grad(self, x) -> np.ndarray:
        return self.P @ np.asarray(x, dtype=float) + self.q

    def as_quadratic(self) -> "QuadraticCost":
        return self

    def __add__(self, other: "QuadraticCost") -> "QuadraticCost":
        other = other.as_quadratic()
        return QuadraticCost(self.P + other.P, self.q + other.q, self.r + other.r)

    def scaled(self, c: float) -> "QuadraticCost":
        return QuadraticCost(c * self.P, c * self.q, c * self.r)


class OnlineProblem(ABC):
    """Local costs revealed round by round, fixed local constraints and sets.

    Agents are indexed ``0 .. N-1``. ``cost_stream`` restarts the stream on
    every call, so replaying it reproduces the same rounds.
    """

    n_agents: int
    m: int
    dims: tuple[int, ...]
    constants: ProblemConstants

    @abstractmethod
    def cost_stream(self) -> Iterator[Sequence]:
        """Yield, for ``t = 1, 2, ...``, one cost object per agent.

        Cost objects expose ``value(x)``, ``grad(x)`` and ``as_quadratic()``.
        """

    @abstractmethod
    def constraint(self, i: int, x) -> np.ndarray:
        """``g_i(x)`` of shape ``(m,)``."""

    @abstractmethod
    def constraint_jacobian(self, i: int, x) -> np.ndarray:
        """Jacobian of ``g_i`` at ``x``, shape ``(m, n_i)``."""

    @abstractmethod
    def project(self, i: int, v) -> np.ndarray:
        """Euclidean projection onto ``X_i``."""

    @abstractmethod
    def initial_point(self, i: int) -> np.ndarray:
        ...

    def box_bounds(self, i: int) -> tuple[np.ndarray, np.ndarray] | None:
        """Bounds when ``X_i`` is a box, else ``None``."""
        return None

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    def split(self, flat) -> list[np.ndarray]:
        """Cut a stacked vector into per-agent blocks."""
        flat = np.asarray(flat, dtype=float)
        off = self.offsets
        return [flat[off[i]:off[i + 1]] for i in range(self.n_agents)]

    def constraint_sum(self, xs: Sequence) -> np.ndarray:
        total = np.zeros(self.m)
        for i, x in enumerate(xs):
            total = total + self.constraint(i, x)
        return total

    def cumulative_costs(self, horizon: int) -> list[QuadraticCost]:
        """Per-agent ``sum_{t <= horizon} f_{i,t}`` as quadratics."""
        acc = None
        for t, costs in enumerate(self.cost_stream(), start=1):
            if t > horizon:
                break
            q = [c.as_quadratic() for c in costs]
            acc = q if acc is None else [a + b for a, b in zip(acc, q)]
        return acc
