"""Time-varying communication graphs and their doubly stochastic weights.

A :class:`GraphSequence` hands out one weight matrix per round ``t >= 1``.
Matrices are either listed explicitly (and repeated periodically) or
generated lazily from a seed by thinning a connected base graph so that
every ``q`` consecutive edge sets have a strongly connected union.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12
_CACHE_LIMIT = 1 << 18
_EDGE_BLOCK = 1024


class GraphValidationError(ValueError):
    """A graph or weight sequence violates the communication assumptions."""

    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


def build_weight_matrix(adjacency, n: int | None = None) -> np.ndarray:
    """Weights ``1/N`` on every edge and the remainder on the diagonal.

    Parameters
    ----------
    adjacency : array_like of bool, shape (N, N)
        Symmetric adjacency with an empty diagonal.
    n : int, optional
        Agent count; must match the adjacency size when given.

    Returns
    -------
    ndarray
        Symmetric, doubly stochastic weight matrix whose nonzero entries are
        at least ``1/N``.
    """
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    size = adj.shape[0]
    if n is not None and n != size:
        raise ValueError(f"adjacency has size {size} but N={n}")
    if size < 1:
        raise ValueError("need at least one agent")
    if np.any(np.diag(adj)):
        raise ValueError("adjacency must not contain self-loops")
    if not np.array_equal(adj, adj.T):
        bad = np.argwhere(adj != adj.T)[0]
        raise ValueError(
            f"adjacency is not symmetric (edge {tuple(bad)} has no reverse); "
            "the 1/N weight rule would break column stochasticity"
        )
    w = adj.astype(float) / size
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def gamma_beta(eta: float, n: int, q: int) -> tuple[float, float]:
    """Contraction constants of the disagreement recursion.

    ``gamma = (1 - eta/(2 N^2))^-2`` and ``beta = (1 - eta/(2 N^2))^(1/Q)``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if int(n) != n or n < 1:
        raise ValueError(f"N must be a positive integer, got {n}")
    if int(q) != q or q < 1:
        raise ValueError(f"Q must be a positive integer, got {q}")
    log_base = math.log1p(-eta / (2.0 * n * n))
    return math.exp(-2.0 * log_base), math.exp(log_base / q)


def one_minus_beta(eta: float, n: int, q: int) -> float:
    """``1 - beta`` without the cancellation of subtracting a number close to 1."""
    gamma_beta(eta, n, q)
    return -math.expm1(math.log1p(-eta / (2.0 * n * n)) / q)


def edge_set(w: np.ndarray) -> np.ndarray:
    """Boolean off-diagonal support of ``w``: ``E[i, j]`` iff ``i`` hears ``j``."""
    e = np.asarray(w) != 0
    np.fill_diagonal(e, False)
    return e


def is_strongly_connected(adj: np.ndarray) -> bool:
    """Forward and backward reachability from node 0 on a directed graph."""
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    if n <= 1:
        return True
    for a in (adj, adj.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            nxt = a[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        if not seen.all():
            return False
    return True


# ---------------------------------------------------------------------------
# sequences


def _name_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def base_adjacency(scenario: dict) -> np.ndarray:
    """Symmetric base graph described by a scenario dictionary.

    Recognised ``base`` values: ``ring``, ``path``, ``complete``, ``star``
    and ``edges`` (with an explicit ``edges`` list of index pairs).
    """
    n = int(scenario["n"])
    kind = scenario.get("base", "ring")
    adj = np.zeros((n, n), dtype=bool)
    if kind == "complete":
        adj[:] = True
    elif kind == "ring":
        for i in range(n):
            adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = True
    elif kind == "path":
        for i in range(n - 1):
            adj[i, i + 1] = adj[i + 1, i] = True
    elif kind == "star":
        adj[0, 1:] = adj[1:, 0] = True
    elif kind == "edges":
        for i, j in scenario["edges"]:
            adj[i, j] = adj[j, i] = True
    else:
        raise ValueError(f"unknown base graph {kind!r}")
    np.fill_diagonal(adj, False)
    return adj


@dataclass
class GraphSequence:
    """Weight matrices ``W_t`` for ``t = 1, 2, ...``.

    Build with :meth:`explicit` or :func:`random_graph_sequence`; do not
    fill the private fields by hand.
    """

    n: int
    eta: float
    q: int
    matrices: list[np.ndarray] | None = None
    seed: int | None = None
    scenario: dict | None = None
    _tree: list[tuple[int, int]] = field(default_factory=list, repr=False)
    _phase: np.ndarray | None = field(default=None, repr=False)
    _extra: list[tuple[int, int]] = field(default_factory=list, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _coins: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def explicit(cls, matrices: Sequence, eta: float | None = None, q: int = 1) -> "GraphSequence":
        mats = [np.array(m, dtype=float) for m in matrices]
        if not mats:
            raise ValueError("explicit sequence needs at least one matrix")
        n = mats[0].shape[0]
        if any(m.shape != (n, n) for m in mats):
            raise ValueError("all matrices must be square with the same size")
        if eta is None:
            eta = min(float(m[m > 0].min()) for m in mats)
            eta = min(eta, 1.0 - 1e-12)
        return cls(n=n, eta=float(eta), q=int(q), matrices=mats)

    @property
    def is_generated(self) -> bool:
        return self.matrices is None

    def adjacency(self, t: int) -> np.ndarray:
        """Edge set ``E_t`` as a boolean matrix."""
        if t < 1:
            raise IndexError(f"rounds start at 1, got {t}")
        if self.matrices is not None:
            return edge_set(self.matrices[(t - 1) % len(self.matrices)])
        adj = np.zeros((self.n, self.n), dtype=bool)
        if self._tree:
            edges = np.asarray(self._tree)[self._phase == (t - 1) % self.q]
            adj[edges[:, 0], edges[:, 1]] = True
        if self._extra:
            p = float(self.scenario.get("p_extra", 0.0)) / self.q
            block, row = divmod(t - 1, _EDGE_BLOCK)
            if self._coins is None or self._coins[0] != block:
                rng = np.random.default_rng(_name_seed(self.seed, f"edges/{block}"))
                self._coins = (block, rng.random((_EDGE_BLOCK, len(self._extra))))
            edges = np.asarray(self._extra)[self._coins[1][row] < p]
            adj[edges[:, 0], edges[:, 1]] = True
        return adj | adj.T

    def matrix(self, t: int) -> np.ndarray:
        """Weight matrix ``W_t`` (rounds are 1-based)."""
        if self.matrices is not None:
            if t < 1:
                raise IndexError(f"rounds start at 1, got {t}")
            return self.matrices[(t - 1) % len(self.matrices)]
        w = self._cache.get(t)
        if w is None:
            if len(self._cache) >= _CACHE_LIMIT:
                self._cache.clear()
            w = build_weight_matrix(self.adjacency(t), self.n)
            w.flags.writeable = False
            self._cache[t] = w
        return w

    def to_json(self) -> dict:
        if self.matrices is not None:
            return {
                "n": self.n,
                "eta": self.eta,
                "q": self.q,
                "matrices": [m.tolist() for m in self.matrices],
            }
        return {"seed": self.seed, "scenario": dict(self.scenario), "q": self.q}

    @classmethod
    def from_json(cls, doc: dict) -> "GraphSequence":
        if "matrices" in doc:
            return cls.explicit(doc["matrices"], eta=doc.get("eta"), q=int(doc.get("q", 1)))
        if "seed" in doc and "scenario" in doc:
            q = int(doc.get("q", doc["scenario"].get("q", 1)))
            return random_graph_sequence(doc["scenario"], int(doc["seed"]), q)
        raise ValueError("graph document needs either 'matrices' or 'seed' and 'scenario'")


def save_graph_sequence(seq: GraphSequence, path) -> None:
    Path(path).write_text(json.dumps(seq.to_json(), indent=2))


def load_graph_sequence(path) -> GraphSequence:
    return GraphSequence.from_json(json.loads(Path(path).read_text()))


def _random_spanning_tree(adj: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int]]:
    # randomized BFS tree over the base graph
    n = adj.shape[0]
    start = int(rng.integers(n))
    seen = {start}
    frontier = [start]
    tree = []
    while frontier:
        nxt = []
        for u in frontier:
            nbrs = np.flatnonzero(adj[u])
            rng.shuffle(nbrs)
            for v in nbrs:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    tree.append((min(u, v), max(u, v)))
                    nxt.append(v)
        rng.shuffle(nxt)
        frontier = nxt
    if len(seen) != n:
        raise GraphValidationError("base graph is not connected; cannot thin to a Q-connected sequence")
    return tree


def random_graph_sequence(scenario: dict, seed: int, q_target: int, max_tries: int = 20) -> GraphSequence:
    """Thin a connected base graph into a ``q_target``-strongly connected sequence.

    A random spanning tree of the base graph is fixed and each tree edge is
    assigned a phase in ``0 .. q_target-1``; round ``t`` carries the tree
    edges whose phase equals ``(t-1) mod q_target``, so every window of
    ``q_target`` rounds contains the whole tree. Each remaining base edge
    additionally appears independently with probability
    ``p_extra / q_target``. Weights follow :func:`build_weight_matrix`, hence
    ``eta = 1/N``.

    Scenario keys: ``n``, ``base`` (see :func:`base_adjacency`), optional
    ``adjacency`` (explicit boolean matrix), ``p_extra`` (default 0.1).
    """
    scenario = dict(scenario)
    scenario.setdefault("p_extra", 0.1)
    q = int(q_target)
    if q < 1:
        raise ValueError("Q must be a positive integer")
    if "adjacency" in scenario:
        adj = np.asarray(scenario["adjacency"], dtype=bool)
        scenario["n"] = adj.shape[0]
    else:
        adj = base_adjacency(scenario)
    n = adj.shape[0]
    if not np.array_equal(adj, adj.T):
        raise ValueError("base graph must be symmetric")
    eta = 1.0 / n if n > 1 else 0.5
    if n == 1:
        return GraphSequence(n=1, eta=eta, q=q, seed=seed, scenario=scenario,
                             _phase=np.zeros(0, dtype=int))
    rng = np.random.default_rng(_name_seed(seed, "tree"))
    last_error = None
    for _ in range(max_tries):
        try:
            tree = _random_spanning_tree(adj, rng)
        except GraphValidationError as exc:
            last_error = exc
            break
        phase = np.arange(len(tree)) % q
        rng.shuffle(phase)
        tree_set = set(tree)
        extra = [(i, j) for i, j in zip(*np.nonzero(np.triu(adj, 1))) if (i, j) not in tree_set]
        seq = GraphSequence(n=n, eta=eta, q=q, seed=seed, scenario=scenario,
                            _tree=tree, _phase=phase, _extra=[(int(i), int(j)) for i, j in extra])
        report = check_assumption1(seq, horizon=max(2 * q, q))
        if report.ok:
            return seq
        last_error = GraphValidationError("generated sequence failed validation", report)
    raise GraphValidationError(
        f"could not thin base graph to Q={q} within {max_tries} attempts: {last_error}"
    )


# ---------------------------------------------------------------------------
# validation


@dataclass
class ClauseResult:
    passed: bool
    first_violation: int | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    """Outcome of :func:`check_assumption1`, one entry per clause."""

    horizon: int
    nondegeneracy: ClauseResult
    doubly_stochastic: ClauseResult
    connectivity: ClauseResult
    max_row_error: float = 0.0
    max_col_error: float = 0.0

    @property
    def ok(self) -> bool:
        return self.nondegeneracy.passed and self.doubly_stochastic.passed and self.connectivity.passed

    def lines(self) -> list[str]:
        out = []
        for name in ("nondegeneracy", "doubly_stochastic", "connectivity"):
            c = getattr(self, name)
            status = "PASS" if c.passed else f"FAIL at t={c.first_violation}: {c.detail}"
            out.append(f"{name}: {status}")
        return out

    def __str__(self) -> str:
        return "; ".join(self.lines())


def _closure_connected(union: np.ndarray) -> np.ndarray:
    """Strong connectivity of a stack of digraphs via repeated squaring of reachability."""
    k, n, _ = union.shape
    reach = (union | np.eye(n, dtype=bool)).astype(np.float64)
    for _ in range(max(1, math.ceil(math.log2(max(n, 2))))):
        reach = np.minimum(reach @ reach, 1.0)
    return reach.reshape(k, -1).min(axis=1) > 0


def check_assumption1(seq: GraphSequence, horizon: int, tol: float = STOCHASTIC_TOL,
                      chunk: int = 4096) -> ValidationReport:
    """Check nondegeneracy, double stochasticity and Q-window strong connectivity.

    Rounds ``1 .. horizon`` are inspected; clause (c) looks at every window
    ``t .. t+Q-1`` inside that range. Matrices are processed in chunks so
    memory stays bounded for long horizons.
    """
    q = seq.q
    if horizon < q:
        raise ValueError(f"window longer than horizon (Q={q} > T={horizon})")
    n = seq.n
    nondeg = ClauseResult(True)
    stoch = ClauseResult(True)
    conn = ClauseResult(True)
    max_row = max_col = 0.0
    off = ~np.eye(n, dtype=bool)
    tail = np.zeros((0, n, n), dtype=bool)  # edge sets of the last q-1 rounds before the chunk
    for start in range(1, horizon + 1, chunk):
        ts = range(start, min(horizon, start + chunk - 1) + 1)
        ws = np.stack([np.asarray(seq.matrix(t), dtype=float) for t in ts])
        if ws.shape[1:] != (n, n):
            raise ValueError(f"weight matrices have shape {ws.shape[1:]}, expected {(n, n)}")
        if nondeg.passed:
            pos_min = np.where(ws != 0, ws, np.inf).reshape(len(ts), -1).min(axis=1)
            bad = [
                (ws.reshape(len(ts), -1) < 0).any(axis=1),
                pos_min < seq.eta - tol,
                (np.diagonal(ws, axis1=1, axis2=2) <= 0).any(axis=1),
            ]
            msgs = ["negative weight", "weight below eta={:.3g}".format(seq.eta), "nonpositive self-weight"]
            hits = [(int(np.argmax(b)), msg) for b, msg in zip(bad, msgs) if b.any()]
            if hits:
                k, msg = min(hits)
                nondeg = ClauseResult(False, ts[k], msg)
        row_err = np.abs(ws.sum(axis=2) - 1.0).max(axis=1)
        col_err = np.abs(ws.sum(axis=1) - 1.0).max(axis=1)
        max_row, max_col = max(max_row, float(row_err.max())), max(max_col, float(col_err.max()))
        if stoch.passed:
            viol = (row_err > tol) | (col_err > tol)
            if viol.any():
                k = int(np.argmax(viol))
                stoch = ClauseResult(False, ts[k], f"row error {row_err[k]:.3g}, column error {col_err[k]:.3g}")
        edges = np.concatenate([tail, (ws != 0) & off])
        if conn.passed and len(edges) >= q:
            counts = np.cumsum(np.concatenate([np.zeros((1, n, n), dtype=np.int64), edges]), axis=0)
            unions = (counts[q:] - counts[:-q]) > 0
            ok = _closure_connected(unions)
            if not ok.all():
                first = ts[0] - len(tail) + int(np.argmin(ok))
                conn = ClauseResult(False, first,
                                    f"union of rounds {first}..{first + q - 1} is not strongly connected")
        tail = edges[len(edges) - (q - 1):] if q > 1 else edges[:0]
    return ValidationReport(horizon, nondeg, stoch, conn, max_row, max_col)
