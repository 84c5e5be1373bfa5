"""Centralized (all-in-once) reference solves.

:func:`solve_aio` runs projected gradient over the intersected feasible set;
:func:`active_set_oracle` is an independent brute-force check that
enumerates active sets and solves each KKT system directly.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_MAX_ITER, PolyhedralSet, project_polyhedron
from .model import QuadraticObjective

__all__ = [
    "AioSolution",
    "AioError",
    "UnboundedProblemError",
    "EnumerationLimitError",
    "solve_aio",
    "active_set_oracle",
    "projection_oracle",
    "kkt_residual",
]

log = logging.getLogger(__name__)

MAX_ENUMERATED_CONSTRAINTS = 20
DIVERGENCE_NORM = 1e12


class AioError(RuntimeError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class UnboundedProblemError(AioError):
    pass


class EnumerationLimitError(ValueError):
    pass


@dataclass(frozen=True)
class AioSolution:
    minimizer: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int


def kkt_residual(objective: QuadraticObjective, s: PolyhedralSet, w, step: float) -> float:
    """Norm of the projected-gradient map ``(w - P(w - step*grad)) / step``."""
    g = objective.gradient(w)
    return float(np.linalg.norm(w - project_polyhedron(w - step * g, s)) / step)


def solve_aio(
    objective: QuadraticObjective,
    feasible_set: PolyhedralSet,
    tol: float = 1e-9,
    max_iter: int = 200000,
    x0=None,
    stepsize: str = "lipschitz",
) -> AioSolution:
    """Minimize ``objective`` over ``feasible_set`` by projected gradient.

    ``stepsize="lipschitz"`` uses the constant step ``1/L`` with ``L`` the
    gradient's Lipschitz constant; ``"diminishing"`` uses ``1/(L * sqrt(k+1))``
    instead. Iteration stops once the projected-gradient residual drops
    below ``tol``.
    """
    n = feasible_set.dim
    lip = 2.0 * float(np.max(np.abs(np.linalg.eigvalsh(objective.Q)))) if n else 0.0
    lip = max(lip, 1e-12)
    w = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    w = project_polyhedron(w, feasible_set)
    res = np.inf
    for k in range(max_iter):
        t = 1.0 / lip if stepsize == "lipschitz" else 1.0 / (lip * np.sqrt(k + 1))
        w_next = project_polyhedron(w - t * objective.gradient(w), feasible_set, max_iter=DEFAULT_MAX_ITER)
        if not np.all(np.isfinite(w_next)) or np.linalg.norm(w_next) > DIVERGENCE_NORM:
            raise UnboundedProblemError(f"iterates diverged at iteration {k}; objective looks unbounded below", best=w)
        res = float(np.linalg.norm(w_next - w) * lip)
        w = w_next
        if res <= tol:
            break
    else:
        raise AioError(f"projected gradient hit max_iter={max_iter} with residual {res:.3e}", best=w, residual=res)
    final_res = kkt_residual(objective, feasible_set, w, 1.0 / lip)
    log.debug("aio converged in %d iterations, kkt residual %.3e", k + 1, final_res)
    return AioSolution(w, objective.value(w), final_res, k + 1)


def active_set_oracle(
    objective: QuadraticObjective, s: PolyhedralSet, tol: float = 1e-9
) -> np.ndarray:
    """Exact minimizer of a convex quadratic over a polyhedron by enumeration.

    Every subset of inequality constraints (box bounds included) small enough
    to have independent normals is tried as the active set. Each candidate
    solves the equality-constrained KKT system; the best candidate that is
    primal feasible and has nonnegative multipliers is returned.
    """
    a_in, b_in = s.inequality_form()
    n = s.dim
    if b_in.size > MAX_ENUMERATED_CONSTRAINTS:
        raise EnumerationLimitError(f"{b_in.size} inequalities exceed the enumeration bound {MAX_ENUMERATED_CONSTRAINTS}")
    if s.equalities is not None:
        e, d = s.equalities.matrix, s.equalities.rhs
    else:
        e, d = np.zeros((0, n)), np.zeros(0)
    h = objective.Q + objective.Q.T
    scale = max(1.0, float(np.max(np.abs(h))), float(np.max(np.abs(objective.P), initial=0.0)))
    n_free = n - (np.linalg.matrix_rank(e) if e.size else 0)

    best, best_val, any_feasible = None, np.inf, False
    for size in range(min(n_free, b_in.size) + 1):
        for active in itertools.combinations(range(b_in.size), size):
            act = list(active)
            c = np.vstack([a_in[act], e])
            rhs_c = np.concatenate([b_in[act], d])
            nc = c.shape[0]
            kkt = np.block([[h, c.T], [c, np.zeros((nc, nc))]])
            rhs = np.concatenate([-objective.P, rhs_c])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            if np.linalg.norm(kkt @ sol - rhs) > tol * scale * max(1.0, np.linalg.norm(rhs)):
                continue
            w, mult = sol[:n], sol[n : n + size]
            if b_in.size and np.max(a_in @ w - b_in) > tol * max(1.0, np.max(np.abs(b_in))):
                continue
            any_feasible = True
            if np.any(mult < -tol * scale * max(1.0, np.linalg.norm(sol))):
                continue
            val = objective.value(w)
            if val < best_val:
                best, best_val = w, val
    if best is None:
        if any_feasible:
            raise UnboundedProblemError("no KKT point exists; objective is unbounded below on the set")
        raise AioError("no feasible candidate found; the set is empty")
    return best


def projection_oracle(point, s: PolyhedralSet) -> np.ndarray:
    """Nearest point of ``s`` computed by :func:`active_set_oracle`."""
    p = np.asarray(point, dtype=float)
    return active_set_oracle(QuadraticObjective(np.eye(s.dim), -2.0 * p, float(p @ p)), s)
