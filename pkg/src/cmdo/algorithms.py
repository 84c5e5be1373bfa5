"""Iterative kernels: consensus, constrained consensus, distributed projected
subgradient and the two collaborative MDO iterations.

Vector kernels take ``states`` as an ``(m, d)`` array (one row per agent) and
return a new array. The MDO iterations take and return lists of
:class:`~cmdo.model.DesignState`. Every kernel reads the iteration-``k``
snapshot only, so agents never see each other's iteration-``k+1`` values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import DEFAULT_TOL, PolyhedralSet, project_polyhedron
from .graph import WeightMatrix, effective_weights, restrict_weights
from .model import DesignState, MdoProblem, SpecialQdp, gradient_special

__all__ = [
    "StepsizeSchedule",
    "DerivedWeights",
    "DivergenceError",
    "consensus_step",
    "constrained_consensus_step",
    "projected_subgradient_step",
    "initial_states",
    "cmdo_multistep_iteration",
    "cmdo_interleaved_step",
    "build_derived_weights",
    "special_direct_step",
    "special_derived_step",
    "special_consensus_step",
    "step_equivalence_check",
]

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The inner optimizer kept increasing the objective."""

    def __init__(self, message, agent=None, values=None):
        super().__init__(message)
        self.agent = agent
        self.values = values


@dataclass(frozen=True)
class StepsizeSchedule:
    """``alpha_k = base`` (constant) or ``base / (k + 1)`` (harmonic)."""

    kind: str = "harmonic"
    base: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic"):
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if self.base <= 0:
            raise ValueError("stepsize base must be positive")

    def __call__(self, k: int) -> float:
        return self.base if self.kind == "constant" else self.base / (k + 1)


def _matrix(weights) -> np.ndarray:
    return weights.entries if isinstance(weights, WeightMatrix) else np.asarray(weights, dtype=float)


def _as_states(states) -> np.ndarray:
    z = np.asarray(states, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise ValueError("states must be an (m, d) array")
    return z


def _mix(states, weights) -> np.ndarray:
    z = _as_states(states)
    a = _matrix(weights)
    if a.shape != (z.shape[0], z.shape[0]):
        raise ValueError(f"weights have shape {a.shape} for {z.shape[0]} agents")
    return a @ z


def _like(out, states):
    return out.ravel() if np.ndim(states) == 1 else out


def consensus_step(states, weights) -> np.ndarray:
    """``z_i + sum_j a_ij (z_j - z_i)`` for every agent."""
    z = _as_states(states)
    a = _matrix(weights)
    if a.shape != (z.shape[0], z.shape[0]):
        raise ValueError(f"weights have shape {a.shape} for {z.shape[0]} agents")
    off = a * (1.0 - np.eye(len(a)))
    diff = z[None, :, :] - z[:, None, :]
    return _like(z + np.einsum("ij,ijd->id", off, diff), states)


def _project_all(points, sets, tol) -> np.ndarray:
    if sets is None:
        return points
    if len(sets) != len(points):
        raise ValueError(f"{len(sets)} sets for {len(points)} agents")
    return np.array([project_polyhedron(p, s, tol) for p, s in zip(points, sets)])


def constrained_consensus_step(states, weights, sets: Sequence[PolyhedralSet] | None, tol=DEFAULT_TOL):
    """``z_i <- P_{Z_i}[sum_j a_ij z_j]``; ``sets=None`` means no constraints."""
    return _like(_project_all(_mix(states, weights), sets, tol), states)


def projected_subgradient_step(states, weights, sets, gradients, alpha_k: float, tol=DEFAULT_TOL):
    """``v_i = sum_j a_ij z_j``, then ``z_i <- P_{Z_i}[v_i - alpha_k d_i]``.

    ``gradients`` is either an ``(m, d)`` array already evaluated at the mixed
    points, or a callable ``gradients(i, v_i)`` evaluated here.
    """
    v = _mix(states, weights)
    if callable(gradients):
        d = np.array([np.atleast_1d(gradients(i, v[i])) for i in range(len(v))], dtype=float)
    else:
        d = _as_states(gradients)
    if d.shape != v.shape:
        raise ValueError(f"gradients have shape {d.shape}, expected {v.shape}")
    return _like(_project_all(v - alpha_k * d, sets, tol), states)


# --------------------------------------------------------------------------
# collaborative MDO on MdoProblem


def initial_states(problem: MdoProblem, z0=None, tol=DEFAULT_TOL) -> list[DesignState]:
    """Start from ``z0`` (zero by default) projected onto every agent's set."""
    z0 = np.zeros(problem.n) if z0 is None else np.asarray(z0, dtype=float)
    states = []
    for i, s in enumerate(problem.subspaces):
        own = project_polyhedron(z0[problem.own_indices(i)], s.feasible_set, tol)
        nl = len(s.local_vars)
        states.append(DesignState(own[:nl], own[nl:], np.zeros(s.state_dim), np.zeros(s.coupling_dim), 0))
    return _refresh(problem, states, 0)


def consensus_point(problem: MdoProblem, states: Sequence[DesignState]) -> np.ndarray:
    """Design vector with each local variable from its owner and each shared
    variable averaged over its owners."""
    z = np.zeros(problem.n)
    acc = np.zeros(problem.n_shared)
    cnt = np.zeros(problem.n_shared)
    for s, st in zip(problem.subspaces, states):
        z[list(s.local_vars)] = st.local
        for k, v in enumerate(s.shared_vars):
            acc[v] += st.shared[k]
            cnt[v] += 1
    z[problem.n_local :] = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    return z


def agent_view(problem: MdoProblem, states, i: int, own=None, base=None) -> np.ndarray:
    """Agent ``i``'s picture of the design vector: its own estimates, other
    agents' local variables as received, and owners' average elsewhere."""
    z = consensus_point(problem, states) if base is None else base.copy()
    z[problem.own_indices(i)] = states[i].own if own is None else own
    return z


def _refresh(problem: MdoProblem, states, k) -> list[DesignState]:
    """Recompute coupling inputs and states from each agent's view."""
    base = consensus_point(problem, states)
    out = []
    for i, st in enumerate(states):
        xs, ys = problem.states_at(agent_view(problem, states, i, base=base))
        out.append(DesignState(st.local, st.shared, xs[i], ys[i], k))
    return out


def _shared_mixing(problem: MdoProblem, states, weights, active_edges):
    """Mixed shared estimates ``sum_j a_ij z_j`` per agent, each shared
    variable mixed only among the agents that own it."""
    w = weights if active_edges is None else effective_weights(weights, active_edges)
    mixed = [np.array(st.shared, dtype=float) for st in states]
    for slot in range(problem.n_shared):
        owners = problem.owners(slot)
        if len(owners) < 2:
            continue
        block = restrict_weights(w, owners)
        vals = np.array([states[j].shared[problem.subspaces[j].shared_vars.index(slot)] for j in owners])
        new = block @ vals
        for pos, j in enumerate(owners):
            mixed[j][problem.subspaces[j].shared_vars.index(slot)] = new[pos]
    return mixed


def _objective_for(problem: MdoProblem, i: int, objective: str):
    if objective == "system":
        return problem.system_objective
    if objective == "local":
        return problem.local_objectives[i]
    raise ValueError(f"objective must be 'system' or 'local', not {objective!r}")


def _combine(mixed_shared, current_shared, alpha, mode):
    if mode == "literal":
        return alpha * mixed_shared
    if mode == "standard":
        if alpha == 1.0:
            return mixed_shared
        return current_shared + alpha * (mixed_shared - current_shared)
    raise ValueError(f"mode must be 'literal' or 'standard', not {mode!r}")


def cmdo_interleaved_step(
    problem: MdoProblem,
    states: Sequence[DesignState],
    weights: WeightMatrix,
    alpha: float = 1.0,
    gamma: float = 0.0,
    active_edges=None,
    mode: str = "standard",
    objective: str = "system",
    tol: float = DEFAULT_TOL,
) -> list[DesignState]:
    """One interleaved iteration: mix, take one gradient step, project onto ``S_i``.

    ``mode="literal"`` scales the mixed sum itself,
    ``P[alpha * sum_j a_ij z_j - gamma * d_i]``. ``mode="standard"`` damps the
    mixing instead, ``P[z_i + alpha (sum_j a_ij z_j - z_i) - gamma * d_i]``,
    which keeps a convex combination and with ``alpha = 1`` is exactly the
    projected-subgradient update. Local design variables are not mixed.

    ``d_i`` is the gradient at the iteration-``k`` point ``(x_i, y_i, z_i)`` of
    either the summed system objective (``objective="system"``) or the
    agent's own objective (``"local"``), taken with respect to the agent's
    own variables.
    """
    k = states[0].iteration
    base = consensus_point(problem, states)
    mixed = _shared_mixing(problem, states, weights, active_edges)
    out = []
    for i, (sub, st) in enumerate(zip(problem.subspaces, states)):
        idx = problem.own_indices(i)
        f = _objective_for(problem, i, objective)
        shared = _combine(mixed[i], st.shared, alpha, mode)
        local = alpha * st.local if mode == "literal" else st.local
        point = np.concatenate([local, shared])
        if gamma:
            # literal: gradient at the iteration-k point; standard: at the mixed point
            at = st.own if mode == "literal" else point
            point = point - gamma * f.gradient(agent_view(problem, states, i, own=at, base=base))[idx]
        own = project_polyhedron(point, sub.feasible_set, tol)
        nl = len(sub.local_vars)
        out.append(DesignState(own[:nl], own[nl:], st.state, st.coupling, k + 1))
    return _refresh(problem, out, k + 1)


def cmdo_multistep_iteration(
    problem: MdoProblem,
    states: Sequence[DesignState],
    weights: WeightMatrix,
    alpha: float = 1.0,
    step: float = 0.1,
    inner_steps: int = 1,
    active_edges=None,
    objective: str = "system",
    tol: float = DEFAULT_TOL,
    max_halvings: int = 30,
) -> list[DesignState]:
    """One multi-step iteration: update, optimize, project.

    Update mixes the shared estimates (damped by ``alpha``) and refreshes
    coupling inputs and states. Optimization runs ``inner_steps`` gradient
    steps of size ``step`` from the mixed point, halving the step whenever the
    objective would increase. Projection maps the result onto ``S_i``.

    Raises :class:`DivergenceError` when three consecutive inner steps
    increase the objective even after halving.
    """
    k = states[0].iteration
    mixed = _shared_mixing(problem, states, weights, active_edges)
    updated = [
        DesignState(st.local, st.shared + alpha * (mixed[i] - st.shared), st.state, st.coupling, k)
        for i, st in enumerate(states)
    ]
    updated = _refresh(problem, updated, k)
    base = consensus_point(problem, updated)
    out = []
    for i, (sub, st) in enumerate(zip(problem.subspaces, updated)):
        idx = problem.own_indices(i)
        f = _objective_for(problem, i, objective)
        own = st.own.copy()
        view = agent_view(problem, updated, i, base=base)
        value = f.value(view)
        increases = 0
        for _ in range(inner_steps):
            g = f.gradient(view)[idx]
            t = step
            for _ in range(max_halvings + 1):
                trial = view.copy()
                trial[idx] = own - t * g
                trial_value = f.value(trial)
                if trial_value <= value:
                    break
                t *= 0.5
            if trial_value > value:
                increases += 1
                if increases >= 3:
                    raise DivergenceError(
                        f"agent {i}: objective increased on 3 consecutive inner steps at iteration {k}",
                        agent=i,
                        values=(value, trial_value),
                    )
                continue
            increases = 0
            own, view, value = trial[idx], trial, trial_value
        own = project_polyhedron(own, sub.feasible_set, tol)
        nl = len(sub.local_vars)
        out.append(DesignState(own[:nl], own[nl:], st.state, st.coupling, k + 1))
    return _refresh(problem, out, k + 1)


# --------------------------------------------------------------------------
# special QDP: derived weights


@dataclass(frozen=True)
class DerivedWeights:
    """``a'_ij = a_ij - 2 alpha_i c_j b'_j^2`` and the coefficient ``beta_ij`` on ``t_j``."""

    a_prime: np.ndarray
    beta: np.ndarray


def build_derived_weights(problem: SpecialQdp, weights, alpha) -> DerivedWeights:
    """Weights that fold one gradient step of the special QDP into mixing.

    ``beta_ij = 2 alpha_i c_j b'_j`` multiplies ``t_j``; expanding
    ``2 c_j b'_j (b'_j z_j - t_j)`` gives this factor. It coincides with
    ``2 alpha_i c_j b'_j^2`` whenever ``b'_j`` is 0 or 1, and only then does
    ``a' + beta = a`` hold.
    """
    a = _matrix(weights)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (problem.m,))
    cb = problem.c * problem.b_prime
    a_prime = a - 2.0 * np.outer(alpha, cb * problem.b_prime)
    beta = 2.0 * np.outer(alpha, cb)
    return DerivedWeights(a_prime, beta)


def special_direct_step(problem: SpecialQdp, states, weights, alpha, sets=None, tol=DEFAULT_TOL):
    """``z_i <- P[sum_j a_ij z_j - alpha_i sum_j 2 c_j b'_j (b'_j z_j - t_j)]``.

    Every agent applies the same aggregated direction built from all agents'
    substituted gradient terms.
    """
    z = np.asarray(states, dtype=float).ravel()
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (problem.m,))
    d = sum(gradient_special(problem, z, j) for j in range(problem.m))
    u = _matrix(weights) @ z - alpha * d
    return _project_scalar(u, sets, tol)


def special_derived_step(problem: SpecialQdp, states, weights, alpha, sets=None, tol=DEFAULT_TOL):
    """``z_i <- P[sum_j (a'_ij z_j + beta_ij t_j)]``.

    The target term enters with a plus sign: the descent step
    ``-alpha_i 2 c_j b'_j (b'_j z_j - t_j)`` contributes ``+beta_ij t_j``.
    """
    z = np.asarray(states, dtype=float).ravel()
    dw = build_derived_weights(problem, weights, alpha)
    u = dw.a_prime @ z + dw.beta @ problem.t
    return _project_scalar(u, sets, tol)


def special_consensus_step(problem: SpecialQdp, states, weights, alpha, sets=None, tol=DEFAULT_TOL):
    """Projected consensus with the derived weights only, ``P[sum_j a'_ij z_j]``."""
    z = np.asarray(states, dtype=float).ravel()
    dw = build_derived_weights(problem, weights, alpha)
    return _project_scalar(dw.a_prime @ z, sets, tol)


def _project_scalar(u, sets, tol):
    if sets is None:
        return u
    return np.array([project_polyhedron(np.array([ui]), s, tol)[0] for ui, s in zip(u, sets)])


def step_equivalence_check(problem: SpecialQdp, states, weights, alpha, sets=None) -> float:
    """Largest per-agent gap between the direct and the derived-weight step."""
    a = special_direct_step(problem, states, weights, alpha, sets)
    b = special_derived_step(problem, states, weights, alpha, sets)
    return float(np.max(np.abs(a - b)))
