"""Communication topology, mixing weights and communication schedules.

Agents are numbered ``0 .. m-1`` internally. Edges are stored as sorted
pairs ``(i, j)`` with ``i < j``; the graph is undirected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "CommGraph",
    "WeightMatrix",
    "Schedule",
    "ValidationReport",
    "is_connected",
    "build_weights",
    "effective_weights",
    "restrict_weights",
    "validate_assumptions",
    "next_active_edges",
    "intercommunication_gaps",
]

ROW_SUM_TOL = 1e-12


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph over ``num_agents`` agents."""

    num_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be positive")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on agent {i}")
            if not (0 <= i < self.num_agents and 0 <= j < self.num_agents):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.num_agents} agents")
            normalized.add(_edge(int(i), int(j)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def ring(cls, m: int) -> "CommGraph":
        if m == 1:
            return cls(1)
        if m == 2:
            return cls(2, frozenset({(0, 1)}))
        return cls(m, frozenset(_edge(i, (i + 1) % m) for i in range(m)))

    @classmethod
    def path(cls, m: int) -> "CommGraph":
        return cls(m, frozenset((i, i + 1) for i in range(m - 1)))

    @classmethod
    def complete(cls, m: int) -> "CommGraph":
        return cls(m, frozenset((i, j) for i in range(m) for j in range(i + 1, m)))

    @property
    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def degree(self, i: int) -> int:
        return sum(1 for e in self.edges if i in e)

    def induced(self, agents: Iterable[int]) -> "CommGraph":
        """Subgraph on ``agents``, relabelled ``0 .. len(agents)-1`` in the given order."""
        agents = list(agents)
        pos = {a: k for k, a in enumerate(agents)}
        sub = {(pos[i], pos[j]) for i, j in self.edges if i in pos and j in pos}
        return CommGraph(len(agents), frozenset(sub))


@dataclass(frozen=True)
class WeightMatrix:
    """Row-stochastic mixing matrix ``a_ij`` with lower bound ``eta``."""

    entries: np.ndarray
    eta: float
    doubly_stochastic: bool = False

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("weight matrix must be square")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]


def is_connected(graph: CommGraph) -> bool:
    """True iff the undirected graph is connected (a single node counts)."""
    m = graph.num_agents
    if m == 1:
        return True
    if not graph.edges:
        return False
    rows, cols = zip(*graph.edges)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def build_weights(graph: CommGraph, scheme: str = "metropolis", eta: float | None = None) -> WeightMatrix:
    """Mixing weights for ``graph``.

    ``uniform`` gives every entry ``1/m`` (complete mixing, any graph).
    ``metropolis`` uses ``a_ij = 1 / (1 + max(deg_i, deg_j))`` on edges and puts
    the remaining mass on the diagonal; the result is symmetric and doubly
    stochastic.
    """
    m = graph.num_agents
    eta = 1.0 / (2 * m) if eta is None else eta
    if scheme == "uniform":
        return WeightMatrix(np.full((m, m), 1.0 / m), eta, doubly_stochastic=True)
    if scheme != "metropolis":
        raise ValueError(f"unknown weight scheme {scheme!r}")
    if not is_connected(graph):
        raise ValueError("metropolis weights need a connected graph")
    deg = [graph.degree(i) for i in range(m)]
    a = np.zeros((m, m))
    for i, j in graph.edges:
        a[i, j] = a[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(m):
        a[i, i] = 1.0 - (a[i].sum() - a[i, i])
    return WeightMatrix(a, eta, doubly_stochastic=True)


def effective_weights(weights: WeightMatrix, active_edges: Iterable[tuple[int, int]]) -> WeightMatrix:
    """Per-step matrix: off-diagonal weight of inactive edges folded into ``a_ii``."""
    active = {_edge(i, j) for i, j in active_edges}
    a = np.array(weights.entries)
    m = a.shape[0]
    for i in range(m):
        for j in range(m):
            if i != j and a[i, j] != 0.0 and _edge(i, j) not in active:
                a[i, i] += a[i, j]
                a[i, j] = 0.0
    return WeightMatrix(a, weights.eta, weights.doubly_stochastic)


def restrict_weights(weights: WeightMatrix, agents: Sequence[int]) -> np.ndarray:
    """Mixing block among ``agents`` only; mass towards everyone else stays on the diagonal.

    Restricting a symmetric doubly stochastic matrix this way keeps it
    symmetric and doubly stochastic.
    """
    idx = np.asarray(agents, dtype=int)
    block = np.array(weights.entries[np.ix_(idx, idx)])
    np.fill_diagonal(block, 0.0)
    np.fill_diagonal(block, 1.0 - block.sum(axis=1))
    return block


@dataclass
class ValidationReport:
    """Pass/fail per assumption plus human-readable reasons for failures."""

    weights_rule: bool
    symmetry: bool
    doubly_stochastic: bool
    connectivity: bool
    messages: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return self.weights_rule and self.symmetry and self.doubly_stochastic and self.connectivity

    def __str__(self) -> str:
        lines = [
            f"weights rule        : {'pass' if self.weights_rule else 'FAIL'}",
            f"symmetry            : {'pass' if self.symmetry else 'FAIL'}",
            f"double stochasticity: {'pass' if self.doubly_stochastic else 'FAIL'}",
            f"E_inf connectivity  : {'pass' if self.connectivity else 'FAIL'}",
        ]
        return "\n".join(lines + self.messages)


def validate_assumptions(
    weights_sequence: Sequence[WeightMatrix | np.ndarray],
    graph: CommGraph,
    eta: float | None = None,
    tol: float = ROW_SUM_TOL,
) -> ValidationReport:
    """Check a finite weight sequence against the convergence assumptions.

    The sequence is treated as repeating forever, so an edge of ``graph``
    belongs to ``E_inf`` when it carries positive weight in at least one
    matrix. Nothing is raised; failures are listed in the report.
    """
    if len(weights_sequence) == 0:
        raise ValueError("weights_sequence must be nonempty")
    m = graph.num_agents
    eta = 1.0 / (2 * m) if eta is None else eta
    msgs: list[str] = []
    rule = sym = ds = True
    e_inf = set()
    for k, w in enumerate(weights_sequence):
        a = np.asarray(w.entries if isinstance(w, WeightMatrix) else w, dtype=float)
        if a.shape != (m, m):
            raise ValueError(f"matrix {k} has shape {a.shape}, expected {(m, m)}")
        if np.any(a < 0):
            rule = False
            msgs.append(f"k={k}: negative entries")
        if np.any(np.diag(a) < eta):
            rule = False
            msgs.append(f"k={k}: diagonal below eta={eta:g}")
        off = a[~np.eye(m, dtype=bool)]
        if np.any((off > 0) & (off < eta)):
            rule = False
            msgs.append(f"k={k}: positive off-diagonal weight below eta={eta:g}")
        rows = a.sum(axis=1)
        if np.any(np.abs(rows - 1) > tol):
            rule = False
            msgs.append(f"k={k}: row sums {np.round(rows, 12).tolist()} not 1")
        if not np.array_equal(a, a.T):
            sym = False
            i, j = np.argwhere(a != a.T)[0]
            msgs.append(f"k={k}: a[{i},{j}]={a[i, j]:g} != a[{j},{i}]={a[j, i]:g}")
        cols = a.sum(axis=0)
        if np.any(np.abs(cols - 1) > tol):
            ds = False
            msgs.append(f"k={k}: column sums {np.round(cols, 12).tolist()} not 1")
        e_inf.update(e for e in graph.edges if a[e] > 0 or a[e[::-1]] > 0)
    conn = is_connected(CommGraph(m, frozenset(e_inf)))
    if not conn:
        msgs.append(f"(V, E_inf) disconnected; E_inf = {sorted(e_inf)}")
    return ValidationReport(rule, sym, ds, conn, msgs)


@dataclass(frozen=True)
class Schedule:
    """Which edges talk at each step: ``synchronous``, ``gossip`` or ``broadcast``."""

    kind: str = "synchronous"
    seed: int = 0
    bound_B: int | None = None

    def __post_init__(self):
        if self.kind not in ("synchronous", "gossip", "broadcast"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.bound_B is not None and self.bound_B < 1:
            raise ValueError("bound_B must be positive")


def next_active_edges(schedule: Schedule, step: int, graph: CommGraph) -> frozenset:
    """Active edge set at ``step``; a pure function of ``(seed, step)``."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if not graph.edges:
        raise ValueError("graph has no edges to activate")
    if schedule.kind == "synchronous":
        return graph.edges
    rng = np.random.default_rng([schedule.seed, step])
    if schedule.kind == "gossip":
        edges = graph.sorted_edges
        return frozenset({edges[rng.integers(len(edges))]})
    node = int(rng.integers(graph.num_agents))
    return frozenset(e for e in graph.edges if node in e)


def intercommunication_gaps(schedule: Schedule, graph: CommGraph, horizon: int) -> dict:
    """Longest window (in steps) each edge waits for activation over ``horizon`` steps.

    An edge that activates in every window of ``B`` steps has gap ``<= B``.
    Edges never activated get gap ``horizon + 1``.
    """
    last = {e: -1 for e in graph.edges}
    worst = {e: 0 for e in graph.edges}
    for k in range(horizon):
        for e in next_active_edges(schedule, k, graph):
            worst[e] = max(worst[e], k - last[e])
            last[e] = k
    for e in graph.edges:
        worst[e] = max(worst[e], horizon - last[e])
    return worst
