"""Online routing in a wireless multi-hop network with uncertain link rates.

Sources ``0 .. N-1`` split their transmission time over all nodes (sources
and the ``K`` receive-only access points, indices ``N .. N+K-1``). Agent
``i`` decides ``x_i = (T_i, z_i)`` with time shares ``T_i`` on the simplex
in ``R^{N+K}`` and auxiliary flows ``z_i`` in ``[-z_max, z_max]^N``. The
cost fits ``z_i`` to the flows ``M_{i,t} T_i`` implied by the running mean
of the observed rates; the coupled constraint asks the summed flows to meet
``r_min``.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .base import OnlineProblem, ProblemConstants, QuadraticCost


def _stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *extra]))


def cubic_coefficients(l: float, u: float) -> tuple[float, float, float, float]:
    """Coefficients of the decay cubic with value 1 at ``l``, 0 at ``u`` and flat ends."""
    if not 0.0 < l < u < 1.0:
        raise ValueError(f"rate cutoffs must satisfy 0 < l < u < 1, got l={l}, u={u}")
    den = (l - u) ** 3
    return -2.0 / den, 3.0 * (l + u) / den, -6.0 * l * u / den, (3.0 * l * u * u - u ** 3) / den


def rate_fn(dist, l: float, u: float):
    """Mean link rate as a function of distance: 1 below ``l``, 0 above ``u``."""
    a, b, c, d = cubic_coefficients(l, u)
    dist = np.asarray(dist, dtype=float)
    cubic = ((a * dist + b) * dist + c) * dist + d
    out = np.where(dist <= l, 1.0, np.where(dist >= u, 0.0, cubic))
    return out if out.ndim else float(out)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    s = np.sort(v)[::-1]
    css = np.cumsum(s) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(s - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class RoutingNetwork:
    """Node placement and rate model.

    ``positions`` holds the ``N`` sources first, then the ``K`` access points.
    """

    n_sources: int
    n_aps: int
    positions: np.ndarray
    l: float = 0.5
    u: float = 0.8
    noise_amplitude: float = 0.2
    r_min: np.ndarray | float = 0.001
    z_max: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        n_nodes = self.n_sources + self.n_aps
        if self.positions.shape != (n_nodes, 2):
            raise ValueError(f"positions must have shape {(n_nodes, 2)}, got {self.positions.shape}")
        cubic_coefficients(self.l, self.u)
        self.r_min = np.broadcast_to(np.asarray(self.r_min, dtype=float), (self.n_sources,)).copy()
        if self.z_max is None:
            self.z_max = float(n_nodes)
        self.coefficients = cubic_coefficients(self.l, self.u)

    @property
    def n_nodes(self) -> int:
        return self.n_sources + self.n_aps

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def nominal_rates(self) -> np.ndarray:
        """Noise-free rates; AP rows and the diagonal are zero."""
        r = rate_fn(self.distances(), self.l, self.u)
        r[self.n_sources:, :] = 0.0
        np.fill_diagonal(r, 0.0)
        return r

    def source_adjacency(self) -> np.ndarray:
        """Symmetric source-to-source links with positive nominal rate."""
        r = self.nominal_rates()[: self.n_sources, : self.n_sources]
        return (r > 0) & (r.T > 0)

    def reaches_access_point(self) -> bool:
        """Every source has a multi-hop path of in-range links to some AP."""
        r = self.nominal_rates() > 0
        good = r[: self.n_sources, self.n_sources:].any(axis=1)
        adj = self.source_adjacency()
        while True:
            nxt = good | (adj & good[None, :]).any(axis=1)
            if np.array_equal(nxt, good):
                return bool(good.all())
            good = nxt


def random_positions(n_sources: int, n_aps: int, seed: int, box=(1.5, 1.0), l: float = 0.5,
                     u: float = 0.8, max_tries: int = 1000) -> np.ndarray:
    """Uniform placement in a box, redrawn until sources are connected and can reach an AP."""
    rng = _stream(seed, "positions")
    for _ in range(max_tries):
        pos = rng.uniform(0.0, 1.0, size=(n_sources + n_aps, 2)) * np.asarray(box, dtype=float)
        net = RoutingNetwork(n_sources, n_aps, pos, l=l, u=u)
        adj = net.source_adjacency()
        from ..graphnet import is_strongly_connected

        if is_strongly_connected(adj) and net.reaches_access_point():
            return pos
    raise ValueError(f"no connected placement found in {max_tries} draws; enlarge u or shrink the box")


def realize_rates(net: RoutingNetwork, t: int, seed: int | None = None) -> np.ndarray:
    """Rates observed in round ``t``: in-range links get uniform noise, then clipping to [0, 1]."""
    seed = net.seed if seed is None else seed
    nominal = net.nominal_rates()
    if net.noise_amplitude == 0:
        return nominal
    rng = _stream(seed, "rates", int(t))
    noise = rng.uniform(-net.noise_amplitude, net.noise_amplitude, size=nominal.shape)
    return np.where(nominal > 0, np.clip(nominal + noise, 0.0, 1.0), 0.0)


def empirical_mean_update(rbar_prev, r_t, t: int) -> np.ndarray:
    """Running mean after ``t`` samples."""
    if t < 1:
        raise ValueError(f"sample count must be >= 1, got {t}")
    return ((t - 1) * np.asarray(rbar_prev, dtype=float) + np.asarray(r_t, dtype=float)) / t


def build_flow_matrix(rbar_row, i: int, n: int, k: int) -> np.ndarray:
    """Map time shares ``T_i`` to per-source net flows.

    Row ``i`` carries the outflow ``sum_j T_ij R_ij``; row ``j != i`` carries
    the inflow ``-T_ij R_ij`` received by source ``j``.
    """
    rbar_row = np.asarray(rbar_row, dtype=float)
    if rbar_row.shape != (n + k,):
        raise ValueError(f"rate row must have length {n + k}, got {rbar_row.shape}")
    if not 0 <= i < n:
        raise ValueError(f"source index {i} out of range")
    m = np.zeros((n, n + k))
    idx = np.arange(n)
    m[idx, idx] = -rbar_row[:n]
    m[i, :] = rbar_row
    return m


def flow_matrices(rbar: np.ndarray, n: int, k: int) -> np.ndarray:
    """All agents' flow matrices at once, shape ``(N, N, N+K)``."""
    ms = np.zeros((n, n, n + k))
    idx = np.arange(n)
    ms[:, idx, idx] = -rbar[:n, :n]
    ms[idx, idx, :] = rbar[:n]
    return ms


class FlowFitCost:
    """``0.5 ||z - M T||^2`` for ``x = (T, z)``."""

    __slots__ = ("M", "split")

    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.split = self.M.shape[1]

    def residual(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[self.split:] - self.M @ x[: self.split]

    def value(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def grad(self, x) -> np.ndarray:
        r = self.residual(x)
        return np.concatenate([-(self.M.T @ r), r])

    def as_quadratic(self) -> QuadraticCost:
        n = self.M.shape[0]
        b = np.hstack([-self.M, np.eye(n)])
        return QuadraticCost(b.T @ b)


def routing_cost(x, rbar_row, i: int, n: int, k: int) -> tuple[float, np.ndarray]:
    """Value and gradient of the flow-fit cost for source ``i``."""
    cost = FlowFitCost(build_flow_matrix(rbar_row, i, n, k))
    return cost.value(x), cost.grad(x)


def routing_constraint_g(z, r_min, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``g_i = -z_i + r_min / N`` and its Jacobian with respect to ``z_i``."""
    z = np.asarray(z, dtype=float)
    r_min = np.broadcast_to(np.asarray(r_min, dtype=float), (n,))
    if z.shape != (n,):
        raise ValueError(f"z must have length {n}")
    return -z + r_min / n, -np.eye(n)


def project_routing(x_raw, n: int, k: int, z_max: float) -> np.ndarray:
    x_raw = np.asarray(x_raw, dtype=float)
    return np.concatenate([project_simplex(x_raw[: n + k]), np.clip(x_raw[n + k:], -z_max, z_max)])


class RoutingProblem(OnlineProblem):
    """The routing scenario as an :class:`OnlineProblem`; ``m = N`` constraints."""

    def __init__(self, net: RoutingNetwork, positions_spec=None, box=(1.5, 1.0)):
        self.net = net
        n, k = net.n_sources, net.n_aps
        self.n_agents = n
        self.m = n
        self.dims = (2 * n + k,) * n
        self._positions_spec = positions_spec
        self._box = tuple(box)
        m_norm = math.sqrt(2 * n + k - 2)
        z_norm = math.sqrt(n) * net.z_max
        self.constants = ProblemConstants(
            C_x=math.sqrt(1.0 + n * net.z_max ** 2),
            C_f=0.5 * (m_norm + z_norm) ** 2,
            C_g=z_norm + float(np.linalg.norm(net.r_min)) / n,
            L_f=math.sqrt(1.0 + m_norm ** 2) * (m_norm + z_norm),
            L_g=1.0,
        )
        self._jac_block = np.hstack([np.zeros((n, n + k)), -np.eye(n)])

    def rate_stream(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(R_t, Rbar_t)`` for ``t = 1, 2, ...``."""
        rbar = np.zeros((self.net.n_nodes, self.net.n_nodes))
        t = 0
        while True:
            t += 1
            r = realize_rates(self.net, t)
            rbar = empirical_mean_update(rbar, r, t)
            yield r, rbar

    def cost_stream(self) -> Iterator[Sequence[FlowFitCost]]:
        n, k = self.net.n_sources, self.net.n_aps
        for _, rbar in self.rate_stream():
            yield [FlowFitCost(mi) for mi in flow_matrices(rbar, n, k)]

    def cumulative_costs(self, horizon: int) -> list[QuadraticCost]:
        n, k = self.net.n_sources, self.net.n_aps
        mtm = np.zeros((n, n + k, n + k))
        msum = np.zeros((n, n, n + k))
        for t, (_, rbar) in enumerate(self.rate_stream(), start=1):
            if t > horizon:
                break
            ms = flow_matrices(rbar, n, k)
            mtm += np.einsum("aij,aik->ajk", ms, ms)
            msum += ms
        out = []
        for a in range(n):
            p = np.block([[mtm[a], -msum[a].T], [-msum[a], horizon * np.eye(n)]])
            out.append(QuadraticCost(p))
        return out

    def constraint(self, i: int, x) -> np.ndarray:
        n, k = self.net.n_sources, self.net.n_aps
        return -np.asarray(x, dtype=float)[n + k:] + self.net.r_min / n

    def constraint_jacobian(self, i: int, x) -> np.ndarray:
        return self._jac_block

    def project(self, i: int, v) -> np.ndarray:
        return project_routing(v, self.net.n_sources, self.net.n_aps, self.net.z_max)

    def initial_point(self, i: int) -> np.ndarray:
        n, k = self.net.n_sources, self.net.n_aps
        return np.concatenate([np.full(n + k, 1.0 / (n + k)), np.zeros(n)])

    def export_positions_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "role", "x", "y"])
            for idx, (px, py) in enumerate(self.net.positions):
                role = "source" if idx < self.net.n_sources else "ap"
                w.writerow([idx, role, repr(float(px)), repr(float(py))])

    def export_rates_csv(self, path, horizon: int) -> None:
        """Realized rates per round in long format (t, i, j, R)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "i", "j", "rate"])
            for t, (r, _) in enumerate(self.rate_stream(), start=1):
                if t > horizon:
                    break
                for i, j in zip(*np.nonzero(r)):
                    w.writerow([t, int(i), int(j), repr(float(r[i, j]))])

    def to_config(self) -> dict:
        net = self.net
        positions = self._positions_spec
        if positions is None:
            positions = net.positions.tolist()
        return {
            "kind": "routing",
            "n_sources": net.n_sources,
            "n_aps": net.n_aps,
            "positions": positions,
            "box": list(self._box),
            "l": net.l,
            "u": net.u,
            "noise_amplitude": net.noise_amplitude,
            "r_min": net.r_min.tolist(),
            "z_max": net.z_max,
            "seed": net.seed,
        }


def routing_problem(params: dict, seed: int = 0) -> RoutingProblem:
    """Build the routing scenario from config keys.

    Keys: ``n_sources``, ``n_aps``, ``positions`` (``"random_box"`` or an
    explicit list), ``box``, ``l``, ``u``, ``noise_amplitude``, ``r_min``,
    ``z_max`` and ``seed`` (falls back to the argument).
    """
    p = dict(params)
    p.pop("kind", None)
    seed = int(p.pop("seed", seed))
    n = int(p.pop("n_sources"))
    k = int(p.pop("n_aps", 2))
    box = tuple(p.pop("box", (1.5, 1.0)))
    l = float(p.pop("l", 0.5))
    u = float(p.pop("u", 0.8))
    positions = p.pop("positions", "random_box")
    if isinstance(positions, str):
        if positions != "random_box":
            raise ValueError(f"unknown positions mode {positions!r}")
        pos = random_positions(n, k, seed, box=box, l=l, u=u)
        spec = positions
    else:
        pos = np.asarray(positions, dtype=float)
        spec = pos.tolist()
    net = RoutingNetwork(
        n, k, pos, l=l, u=u,
        noise_amplitude=float(p.pop("noise_amplitude", 0.2)),
        r_min=p.pop("r_min", 0.001),
        z_max=p.pop("z_max", None),
        seed=seed,
    )
    if p:
        raise ValueError(f"unknown routing parameters: {sorted(p)}")
    return RoutingProblem(net, positions_spec=spec, box=box)
