"""Problem instances: quadratic objectives, the special QDP class and
multi-subspace MDO problems with linear coupling and state maps.

Design vectors of an :class:`MdoProblem` are laid out as
``z = (local variables of every subspace, shared variables)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .geometry import PolyhedralSet, Halfspace

__all__ = [
    "QuadraticObjective",
    "SpecialQdp",
    "Transition",
    "Subspace",
    "MdoProblem",
    "DesignState",
    "gradient_quadratic",
    "eval_coupling",
    "eval_transition",
    "objective_value",
    "gradient_special",
    "gradient_special_chain",
    "substitution_gap",
    "build_global_aggregate",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuadraticObjective:
    """``f(w) = w^T Q w + P^T w + constant`` with ``Q`` symmetric PSD."""

    Q: np.ndarray
    P: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        q = _frozen(np.atleast_2d(self.Q))
        p = _frozen(np.ravel(self.P))
        if q.shape != (p.size, p.size):
            raise ValueError(f"Q has shape {q.shape} but P has length {p.size}")
        if not np.allclose(q, q.T, rtol=0, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if p.size and np.linalg.eigvalsh(q).min() < -1e-9:
            raise ValueError("Q must be positive semidefinite")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "P", p)
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def zero(cls, n: int) -> "QuadraticObjective":
        return cls(np.zeros((n, n)), np.zeros(n))

    @classmethod
    def sum_of_squares(cls, rows, offsets, weights=None) -> "QuadraticObjective":
        """``sum_k weights_k (rows_k . w + offsets_k)^2``."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        offsets = np.asarray(offsets, dtype=float)
        weights = np.ones(len(offsets)) if weights is None else np.asarray(weights, dtype=float)
        q = rows.T @ (weights[:, None] * rows)
        p = 2.0 * rows.T @ (weights * offsets)
        return cls(q, p, float(weights @ offsets**2))

    @property
    def dim(self) -> int:
        return self.P.size

    def value(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.Q @ w + self.P @ w + self.constant)

    def gradient(self, w) -> np.ndarray:
        return 2.0 * self.Q @ np.asarray(w, dtype=float) + self.P

    def __add__(self, other: "QuadraticObjective") -> "QuadraticObjective":
        return QuadraticObjective(self.Q + other.Q, self.P + other.P, self.constant + other.constant)

    def scaled(self, s: float) -> "QuadraticObjective":
        return QuadraticObjective(s * self.Q, s * self.P, s * self.constant)

    def compose(self, M, c=None) -> "QuadraticObjective":
        """``g(z) = f(M z + c)``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)
        q = M.T @ self.Q @ M
        q = 0.5 * (q + q.T)
        p = 2.0 * M.T @ self.Q @ c + M.T @ self.P
        return QuadraticObjective(q, p, self.value(c))


def gradient_quadratic(obj: QuadraticObjective, w, z_indices=None) -> np.ndarray:
    """``(2 Q w + P)`` restricted to ``z_indices`` (all components when None)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (obj.dim,):
        raise ValueError(f"w has shape {w.shape}, expected ({obj.dim},)")
    g = obj.gradient(w)
    return g if z_indices is None else g[np.asarray(z_indices, dtype=int)]


# --------------------------------------------------------------------------
# special QDP


@dataclass(frozen=True)
class SpecialQdp:
    """``min sum_i c_i (z_i - y_i - t_i)^2`` with ``y = B z`` and one shared
    inequality ``sum_r (lambda_r z_r + mu_r y_r) <= budget``.

    ``b_prime[i] = 1 - sum_r B[r, i]`` is cached at construction.
    """

    c: np.ndarray
    t: np.ndarray
    B: np.ndarray
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    budget: float = np.inf
    b_prime: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = _frozen(np.ravel(self.c))
        m = c.size
        t = _frozen(np.broadcast_to(np.ravel(self.t), (m,)))
        b = _frozen(np.reshape(self.B, (m, m)))
        if np.any(c <= 0):
            raise ValueError("weights c_i must be positive")
        lam = _frozen(np.zeros(m) if self.lam is None else np.ravel(self.lam))
        mu = _frozen(np.zeros(m) if self.mu is None else np.ravel(self.mu))
        for name, v in (("c", c), ("t", t), ("B", b), ("lam", lam), ("mu", mu)):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "b_prime", _frozen(1.0 - b.sum(axis=0)))

    @property
    def m(self) -> int:
        return self.c.size

    def residuals(self, z) -> np.ndarray:
        z = self._check(z)
        return z - eval_coupling(self, z) - self.t

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.m,):
            raise ValueError(f"z has shape {z.shape}, expected ({self.m},)")
        return z

    def to_quadratic(self) -> QuadraticObjective:
        """The objective as ``z^T Q z + P^T z + const`` with ``y`` substituted."""
        return QuadraticObjective.sum_of_squares(np.eye(self.m) - self.B, -self.t, self.c)

    def shared_halfspace(self) -> Halfspace | None:
        """The shared inequality in terms of ``z`` alone, or None if it is void."""
        normal = self.lam + self.B.T @ self.mu
        if not np.isfinite(self.budget) or not np.any(normal):
            return None
        return Halfspace(normal, self.budget)


def eval_coupling(problem: SpecialQdp, z) -> np.ndarray:
    """``y_i = sum_r b_ir z_r``."""
    return problem.B @ problem._check(z)


def objective_value(problem: SpecialQdp, z) -> float:
    r = problem.residuals(z)
    return float(problem.c @ r**2)


def gradient_special(problem: SpecialQdp, z, agent: int) -> float:
    """Per-agent term ``2 c_i b'_i (b'_i z_i - t_i)`` obtained after substituting
    ``y_i`` by ``(1 - b'_i) z_i``.

    The substitution is exact only when every column of ``B`` is concentrated
    on its diagonal entry; :func:`gradient_special_chain` is the full gradient.
    """
    z = problem._check(z)
    i = agent
    bp = problem.b_prime[i]
    return float(2.0 * problem.c[i] * bp * (bp * z[i] - problem.t[i]))


def gradient_special_chain(problem: SpecialQdp, z) -> np.ndarray:
    """Unsubstituted gradient ``2 (I - B)^T diag(c) (z - B z - t)``."""
    r = problem.residuals(z)
    return 2.0 * (np.eye(problem.m) - problem.B).T @ (problem.c * r)


def substitution_gap(problem: SpecialQdp, z) -> float:
    """Largest gap between the substituted and the chain-rule gradient."""
    sub = np.array([gradient_special(problem, z, i) for i in range(problem.m)])
    return float(np.max(np.abs(sub - gradient_special_chain(problem, z))))


# --------------------------------------------------------------------------
# general linear MDO


@dataclass(frozen=True)
class Transition:
    """Explicit linear state map ``x = Ty @ y + Tz @ z + offset``.

    ``z`` is the full design vector, which lets a state read design
    variables owned by other subspaces.
    """

    Ty: np.ndarray | None
    Tz: np.ndarray
    offset: np.ndarray | None = None

    def __post_init__(self):
        tz = _frozen(np.atleast_2d(self.Tz))
        ty = _frozen(np.zeros((tz.shape[0], 0)) if self.Ty is None else np.atleast_2d(self.Ty))
        if ty.shape[0] != tz.shape[0]:
            raise ValueError("Ty and Tz must have the same number of rows")
        off = _frozen(np.zeros(tz.shape[0]) if self.offset is None else np.ravel(self.offset))
        object.__setattr__(self, "Ty", ty)
        object.__setattr__(self, "Tz", tz)
        object.__setattr__(self, "offset", off)

    @property
    def state_dim(self) -> int:
        return self.Tz.shape[0]


@dataclass(frozen=True)
class Subspace:
    """One discipline owned by one agent.

    ``local_vars`` index the local block of the design vector, ``shared_vars``
    the shared block. ``coupling_in`` lists ``(source_agent, row)`` pairs; the
    k-th coupling input is ``row @ x_source``. The objective acts on the
    stacked vector ``(x, y, z)`` with ``z`` the full design vector. The
    feasible set acts on the agent's own variables ``(local..., shared...)``.
    """

    index: int
    local_vars: tuple
    shared_vars: tuple
    transition: Transition
    objective: QuadraticObjective
    feasible_set: PolyhedralSet
    coupling_in: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "local_vars", tuple(int(v) for v in self.local_vars))
        object.__setattr__(self, "shared_vars", tuple(int(v) for v in self.shared_vars))
        object.__setattr__(self, "coupling_in", tuple((int(j), _frozen(np.ravel(r))) for j, r in self.coupling_in))
        if self.transition.Ty.shape[1] != len(self.coupling_in) and len(self.coupling_in):
            raise ValueError(f"subspace {self.index}: Ty has {self.transition.Ty.shape[1]} columns for {len(self.coupling_in)} coupling inputs")
        if self.feasible_set.dim != self.n_own:
            raise ValueError(f"subspace {self.index}: feasible set has dimension {self.feasible_set.dim}, expected {self.n_own}")

    @property
    def state_dim(self) -> int:
        return self.transition.state_dim

    @property
    def coupling_dim(self) -> int:
        return len(self.coupling_in)

    @property
    def n_own(self) -> int:
        return len(self.local_vars) + len(self.shared_vars)


def eval_transition(sub: Subspace, y, z) -> np.ndarray:
    """Explicit state update ``x_i = X_i(y_i, z)``."""
    y = np.asarray(y, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    tr = sub.transition
    if z.size != tr.Tz.shape[1]:
        raise ValueError(f"z has length {z.size}, transition expects {tr.Tz.shape[1]}")
    if sub.coupling_dim == 0:
        if y.size:
            raise ValueError("subspace has no coupling inputs")
        return tr.Tz @ z + tr.offset
    if y.size != sub.coupling_dim:
        raise ValueError(f"y has length {y.size}, expected {sub.coupling_dim}")
    return tr.Ty @ y + tr.Tz @ z + tr.offset


@dataclass(frozen=True)
class DesignState:
    """One agent's view at iteration ``iteration``."""

    local: np.ndarray
    shared: np.ndarray
    state: np.ndarray
    coupling: np.ndarray
    iteration: int = 0

    @property
    def own(self) -> np.ndarray:
        return np.concatenate([self.local, self.shared])


@dataclass(frozen=True)
class MdoProblem:
    """A distributed MDO instance with linear couplings and explicit states.

    ``global_objective`` (over the full design vector) is split evenly across
    subspaces when ``global_owner`` is None, otherwise given entirely to that
    subspace.
    """

    subspaces: tuple
    n_local: int
    n_shared: int
    global_objective: QuadraticObjective | None = None
    global_owner: int | None = None
    var_names: tuple = ()

    def __post_init__(self):
        subs = tuple(self.subspaces)
        object.__setattr__(self, "subspaces", subs)
        n = self.n_local + self.n_shared
        seen = set()
        for i, s in enumerate(subs):
            if s.index != i:
                raise ValueError(f"subspace at position {i} has index {s.index}")
            for v in s.local_vars:
                if not 0 <= v < self.n_local:
                    raise ValueError(f"subspace {i}: local variable {v} outside [0, {self.n_local})")
                if v in seen:
                    raise ValueError(f"local variable {v} owned twice")
                seen.add(v)
            for v in s.shared_vars:
                if not 0 <= v < self.n_shared:
                    raise ValueError(f"subspace {i}: shared variable {v} outside [0, {self.n_shared})")
            for j, row in s.coupling_in:
                if not 0 <= j < len(subs):
                    raise ValueError(f"subspace {i}: coupling source {j} does not exist")
            if s.transition.Tz.shape[1] != n:
                raise ValueError(f"subspace {i}: transition Tz has {s.transition.Tz.shape[1]} columns, expected {n}")
            expect = s.state_dim + s.coupling_dim + n
            if s.objective.dim != expect:
                raise ValueError(f"subspace {i}: objective has dimension {s.objective.dim}, expected {expect}")
        for i, s in enumerate(subs):
            for j, row in s.coupling_in:
                if row.size != subs[j].state_dim:
                    raise ValueError(f"subspace {i}: coupling row from {j} has length {row.size}, expected {subs[j].state_dim}")
        if self.global_objective is not None and self.global_objective.dim != n:
            raise ValueError("global objective must act on the full design vector")
        if self.var_names and len(self.var_names) != n:
            raise ValueError(f"{len(self.var_names)} variable names for {n} variables")

    @property
    def m(self) -> int:
        return len(self.subspaces)

    @property
    def n(self) -> int:
        return self.n_local + self.n_shared

    @property
    def names(self) -> tuple:
        if self.var_names:
            return tuple(self.var_names)
        return tuple([f"z{k + 1}" for k in range(self.n_local)] + [f"zs{k + 1}" for k in range(self.n_shared)])

    def own_indices(self, i: int) -> np.ndarray:
        """Positions of subspace ``i``'s variables in the full design vector."""
        s = self.subspaces[i]
        return np.array(list(s.local_vars) + [self.n_local + v for v in s.shared_vars], dtype=int)

    def owners(self, slot: int) -> list[int]:
        return [s.index for s in self.subspaces if slot in s.shared_vars]

    @cached_property
    def _coupling_matrix(self) -> np.ndarray:
        x_off = np.cumsum([0] + [s.state_dim for s in self.subspaces])
        y_off = np.cumsum([0] + [s.coupling_dim for s in self.subspaces])
        C = np.zeros((y_off[-1], x_off[-1]))
        for s in self.subspaces:
            for k, (j, row) in enumerate(s.coupling_in):
                C[y_off[s.index] + k, x_off[j] : x_off[j + 1]] = row
        return C

    @cached_property
    def state_maps(self):
        """Affine maps ``x = X z + x0`` and ``y = Y z + y0`` with coupling solved.

        States and coupling inputs are found jointly from
        ``x = Ty (C x) + Tz z + offset``; the system must be uniquely solvable.
        """
        nx = sum(s.state_dim for s in self.subspaces)
        ny = sum(s.coupling_dim for s in self.subspaces)
        Ty = np.zeros((nx, ny))
        Tz = np.vstack([s.transition.Tz for s in self.subspaces]) if nx else np.zeros((0, self.n))
        off = np.concatenate([s.transition.offset for s in self.subspaces]) if nx else np.zeros(0)
        r = c = 0
        for s in self.subspaces:
            if s.coupling_dim:
                Ty[r : r + s.state_dim, c : c + s.coupling_dim] = s.transition.Ty
            r += s.state_dim
            c += s.coupling_dim
        C = self._coupling_matrix
        system = np.eye(nx) - Ty @ C
        X = np.linalg.solve(system, Tz)
        x0 = np.linalg.solve(system, off)
        return X, x0, C @ X, C @ x0

    def _blocks(self, i: int):
        X, x0, Y, y0 = self.state_maps
        xs = np.cumsum([0] + [s.state_dim for s in self.subspaces])
        ys = np.cumsum([0] + [s.coupling_dim for s in self.subspaces])
        return (X[xs[i] : xs[i + 1]], x0[xs[i] : xs[i + 1]], Y[ys[i] : ys[i + 1]], y0[ys[i] : ys[i + 1]])

    def states_at(self, z) -> tuple[list, list]:
        """States ``x_i`` and coupling inputs ``y_i`` of every subspace at ``z``."""
        z = np.asarray(z, dtype=float)
        xs, ys = [], []
        for i in range(self.m):
            Xi, x0i, Yi, y0i = self._blocks(i)
            xs.append(Xi @ z + x0i)
            ys.append(Yi @ z + y0i)
        return xs, ys

    @cached_property
    def local_objectives(self) -> tuple:
        """Each subspace objective as a function of the design vector alone,
        including its share of the global objective."""
        out = []
        for i, s in enumerate(self.subspaces):
            Xi, x0i, Yi, y0i = self._blocks(i)
            M = np.vstack([Xi, Yi, np.eye(self.n)])
            c = np.concatenate([x0i, y0i, np.zeros(self.n)])
            f = s.objective.compose(M, c)
            if self.global_objective is not None:
                if self.global_owner is None:
                    f = f + self.global_objective.scaled(1.0 / self.m)
                elif self.global_owner == i:
                    f = f + self.global_objective
            out.append(f)
        return tuple(out)

    @cached_property
    def system_objective(self) -> QuadraticObjective:
        total = QuadraticObjective.zero(self.n)
        for f in self.local_objectives:
            total = total + f
        return total

    @cached_property
    def feasible_set(self) -> PolyhedralSet:
        """Intersection of all subspace sets embedded in the design space."""
        out = PolyhedralSet.whole_space(self.n)
        for i, s in enumerate(self.subspaces):
            out = out.intersect(s.feasible_set.embed(self.own_indices(i), self.n), probe=False)
        return PolyhedralSet(out.dim, out.halfspaces, out.equalities, out.lower, out.upper)


def build_global_aggregate(problem) -> tuple[QuadraticObjective, PolyhedralSet]:
    """Centralized objective and feasible set of a distributed instance.

    Accepts an :class:`MdoProblem` or a :class:`SpecialQdp` (whose shared
    inequality becomes the set).
    """
    if isinstance(problem, SpecialQdp):
        hs = problem.shared_halfspace()
        return problem.to_quadratic(), PolyhedralSet(problem.m, (hs,) if hs is not None else ())
    if isinstance(problem, MdoProblem):
        return problem.system_objective, problem.feasible_set
    raise TypeError(f"cannot aggregate {type(problem).__name__}")
