import itertools

import numpy as np
import pytest

from dopd.problems import OnlineProblem, ProblemConstants, QuadraticCost


class ScalarQuadratic:
    """``(x - a)^2`` with a scalar decision, or ``x^2`` when ``a = 0``."""

    def __init__(self, a):
        self.a = float(a)

    def value(self, x):
        return float((x[0] - self.a) ** 2)

    def grad(self, x):
        return np.array([2.0 * (x[0] - self.a)])

    def as_quadratic(self):
        return QuadraticCost([[2.0]], [-2.0 * self.a], self.a ** 2)


class ScalarProblem(OnlineProblem):
    """Fixed targets, ``g_i(x) = b_i x - c_i`` and ``X_i = [lo, hi]``."""

    def __init__(self, a, c, lo=0.0, hi=1.0, x0=0.0, b=1.0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.n_agents = len(self.a)
        self.c = np.broadcast_to(np.asarray(c, dtype=float), (self.n_agents,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (self.n_agents,)).copy()
        self.m = 1
        self.dims = (1,) * self.n_agents
        self.lo, self.hi, self.x0 = float(lo), float(hi), float(x0)
        span = max(abs(self.lo), abs(self.hi))
        self.constants = ProblemConstants(
            C_x=span * np.sqrt(self.n_agents), C_f=(self.hi - self.lo + np.abs(self.a).max()) ** 2,
            C_g=float(np.max(np.abs(self.b) * span + np.abs(self.c))),
            L_f=2.0 * (span + np.abs(self.a).max()), L_g=float(np.abs(self.b).max()),
        )

    def cost_stream(self):
        for _ in itertools.count():
            yield [ScalarQuadratic(v) for v in self.a]

    def constraint(self, i, x):
        return np.array([self.b[i] * x[0] - self.c[i]])

    def constraint_jacobian(self, i, x):
        return np.array([[self.b[i]]])

    def project(self, i, v):
        return np.clip(np.asarray(v, dtype=float), self.lo, self.hi)

    def initial_point(self, i):
        return np.array([self.x0])

    def box_bounds(self, i):
        return np.array([self.lo]), np.array([self.hi])


_CRITERIA: list[tuple[int, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda item: item[0]):
            terminalreporter.write_line(line)
