"""Euclidean projections onto halfspaces, hyperplanes, affine sets, boxes and
their intersections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "Halfspace",
    "AffineSet",
    "PolyhedralSet",
    "ProjectionError",
    "InfeasibleSetError",
    "project_halfspace",
    "project_hyperplane",
    "project_affine",
    "project_box",
    "project_polyhedron",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITER",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000
STALL_CYCLES = 50
STALL_RATIO = 0.9


class ProjectionError(RuntimeError):
    """Dykstra's iteration ran out of budget; carries the best iterate found."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InfeasibleSetError(ProjectionError):
    """The constraint set appears to be empty."""


@dataclass(frozen=True)
class Halfspace:
    """``{w : normal . w <= offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = np.array(self.normal, dtype=float).ravel()
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        a.setflags(write=False)
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.size

    def residual(self, w) -> float:
        return float(self.normal @ w - self.offset)


@dataclass(frozen=True)
class AffineSet:
    """``{w : matrix @ w = rhs}``."""

    matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.array(self.matrix, dtype=float))
        d = np.array(self.rhs, dtype=float).ravel()
        if e.shape[0] != d.size:
            raise ValueError(f"{e.shape[0]} equality rows but {d.size} right-hand sides")
        e.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "matrix", e)
        object.__setattr__(self, "rhs", d)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def residual(self, w) -> np.ndarray:
        return self.matrix @ w - self.rhs


def _check_dim(point, dim):
    p = np.asarray(point, dtype=float)
    if p.shape != (dim,):
        raise ValueError(f"point has shape {p.shape}, expected ({dim},)")
    return p


def project_halfspace(point, hs: Halfspace) -> np.ndarray:
    """Nearest point of ``{w : a.w <= b}``: ``p - max(0, (a.p - b)/|a|^2) a``."""
    p = _check_dim(point, hs.dim)
    excess = hs.normal @ p - hs.offset
    if excess <= 0:
        return p.copy()
    return p - (excess / (hs.normal @ hs.normal)) * hs.normal


def project_hyperplane(point, a, b: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.any(a):
        raise ValueError("hyperplane normal must be nonzero")
    p = _check_dim(point, a.size)
    return p - ((a @ p - b) / (a @ a)) * a


def project_affine(point, aff: AffineSet, tol: float = 1e-10) -> np.ndarray:
    """Nearest point of ``{w : E w = d}`` via ``p - E^T (E E^T)^+ (E p - d)``.

    Rank-deficient ``E`` is fine as long as the system is consistent; an
    inconsistent system raises :class:`InfeasibleSetError`.
    """
    p = _check_dim(point, aff.dim)
    e = aff.matrix
    r = e @ p - aff.rhs
    lam, *_ = np.linalg.lstsq(e @ e.T, r, rcond=None)
    out = p - e.T @ lam
    res = np.linalg.norm(e @ out - aff.rhs)
    if res > tol * max(1.0, np.linalg.norm(aff.rhs), np.linalg.norm(p)):
        raise InfeasibleSetError(f"equalities are inconsistent: residual {res:.3e}", best=out, residual=res)
    return out


def project_box(point, lower, upper) -> np.ndarray:
    return np.clip(point, lower, upper)


@dataclass(frozen=True)
class PolyhedralSet:
    """Intersection of halfspaces, an affine set and a box.

    The set is probed for emptiness on construction by projecting the
    origin; an empty set raises :class:`InfeasibleSetError` right away.
    """

    dim: int
    halfspaces: tuple = ()
    equalities: AffineSet | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    probe: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        for h in hs:
            if h.dim != self.dim:
                raise ValueError(f"halfspace of dimension {h.dim} in a {self.dim}-dimensional set")
        if self.equalities is not None and self.equalities.dim != self.dim:
            raise ValueError("equalities do not match the set dimension")
        object.__setattr__(self, "halfspaces", hs)
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                fill = -np.inf if name == "lower" else np.inf
                v = np.broadcast_to(np.asarray(v, dtype=float), (self.dim,)).copy()
                v[np.isnan(v)] = fill
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        if self.lower is not None and self.upper is not None and np.any(self.lower > self.upper):
            raise InfeasibleSetError("box has lower > upper")
        if self.probe and self.num_blocks > 1:
            project_polyhedron(np.zeros(self.dim), self)

    @classmethod
    def whole_space(cls, dim: int) -> "PolyhedralSet":
        return cls(dim)

    @classmethod
    def from_constraints(cls, dim: int, constraints: Sequence, **kw) -> "PolyhedralSet":
        """Build from ``(coefficients, relation, rhs)`` triples, relation in ``<=, >=, ==``."""
        hs, eq_rows, eq_rhs = [], [], []
        for coef, rel, rhs in constraints:
            coef = np.asarray(coef, dtype=float)
            if rel == "<=":
                hs.append(Halfspace(coef, rhs))
            elif rel == ">=":
                hs.append(Halfspace(-coef, -rhs))
            elif rel in ("==", "="):
                eq_rows.append(coef)
                eq_rhs.append(rhs)
            else:
                raise ValueError(f"unknown relation {rel!r}")
        eq = AffineSet(np.array(eq_rows), np.array(eq_rhs)) if eq_rows else None
        return cls(dim, tuple(hs), eq, **kw)

    @property
    def has_box(self) -> bool:
        return self.lower is not None or self.upper is not None

    @property
    def num_blocks(self) -> int:
        return len(self.halfspaces) + (self.equalities is not None) + self.has_box

    def inequality_form(self):
        """All inequalities (halfspaces and finite box bounds) as ``A w <= b``."""
        rows = [h.normal for h in self.halfspaces]
        rhs = [h.offset for h in self.halfspaces]
        eye = np.eye(self.dim)
        if self.upper is not None:
            for i in np.flatnonzero(np.isfinite(self.upper)):
                rows.append(eye[i])
                rhs.append(self.upper[i])
        if self.lower is not None:
            for i in np.flatnonzero(np.isfinite(self.lower)):
                rows.append(-eye[i])
                rhs.append(-self.lower[i])
        return np.array(rows).reshape(-1, self.dim), np.array(rhs, dtype=float)

    def violation(self, w) -> float:
        """Largest constraint residual at ``w`` (0 when feasible)."""
        w = np.asarray(w, dtype=float)
        worst = 0.0
        a, b = self.inequality_form()
        if b.size:
            worst = max(worst, float(np.max(a @ w - b)))
        if self.equalities is not None:
            worst = max(worst, float(np.max(np.abs(self.equalities.residual(w)))))
        return worst

    def contains(self, w, tol: float = DEFAULT_TOL) -> bool:
        return self.violation(w) <= tol

    def embed(self, indices: Sequence[int], dim: int) -> "PolyhedralSet":
        """Same constraints, acting on coordinates ``indices`` of a ``dim``-vector."""
        idx = np.asarray(indices, dtype=int)

        def lift(a):
            out = np.zeros(dim)
            out[idx] = a
            return out

        hs = tuple(Halfspace(lift(h.normal), h.offset) for h in self.halfspaces)
        eq = None
        if self.equalities is not None:
            eq = AffineSet(np.array([lift(r) for r in self.equalities.matrix]), self.equalities.rhs)
        lower = upper = None
        if self.lower is not None:
            lower = np.full(dim, -np.inf)
            lower[idx] = self.lower
        if self.upper is not None:
            upper = np.full(dim, np.inf)
            upper[idx] = self.upper
        return PolyhedralSet(dim, hs, eq, lower, upper, probe=False)

    def intersect(self, other: "PolyhedralSet", probe: bool = True) -> "PolyhedralSet":
        if other.dim != self.dim:
            raise ValueError("cannot intersect sets of different dimension")
        eqs = [s.equalities for s in (self, other) if s.equalities is not None]
        eq = None
        if eqs:
            eq = AffineSet(np.vstack([e.matrix for e in eqs]), np.concatenate([e.rhs for e in eqs]))
        lower = _combine(self.lower, other.lower, np.maximum)
        upper = _combine(self.upper, other.upper, np.minimum)
        return PolyhedralSet(self.dim, self.halfspaces + other.halfspaces, eq, lower, upper, probe=probe)

    def project(self, point, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
        return project_polyhedron(point, self, tol, max_iter)


def _combine(a, b, op):
    if a is None:
        return b
    if b is None:
        return a
    return op(a, b)


def _blocks(s: PolyhedralSet):
    ops = [lambda p, h=h: project_halfspace(p, h) for h in s.halfspaces]
    if s.equalities is not None:
        ops.append(lambda p: project_affine(p, s.equalities))
    if s.has_box:
        lo = -np.inf if s.lower is None else s.lower
        hi = np.inf if s.upper is None else s.upper
        ops.append(lambda p: project_box(p, lo, hi))
    return ops


def _has_feasible_point(s: PolyhedralSet) -> bool:
    """LP feasibility certificate (zero objective) for the whole set."""
    a, b = s.inequality_form()
    eq = s.equalities
    res = linprog(
        np.zeros(s.dim),
        A_ub=a if b.size else None,
        b_ub=b if b.size else None,
        A_eq=None if eq is None else eq.matrix,
        b_eq=None if eq is None else eq.rhs,
        bounds=(None, None),
        method="highs",
    )
    return res.status == 0


def project_polyhedron(
    point, s: PolyhedralSet, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> np.ndarray:
    """Nearest point of ``s`` to ``point`` by Dykstra's alternating projections.

    A set made of a single block (one halfspace, the affine set or the box)
    is projected in closed form. Otherwise Dykstra cycles over the blocks,
    keeping one correction vector per block, until a full cycle changes
    neither the iterate nor any correction by ``tol`` or more and every
    constraint holds within ``tol``.
    """
    p = _check_dim(point, s.dim)
    ops = _blocks(s)
    if not ops:
        return p.copy()
    if len(ops) == 1:
        return ops[0](p)
    if s.violation(p) <= 0.0:
        return p.copy()

    x = p.copy()
    incr = np.zeros((len(ops), s.dim))
    best, best_res = x, np.inf
    # a stalled iterate whose residual stops shrinking means the blocks do not meet
    stalled, stall_ref, certified = 0, np.inf, False
    for _ in range(max_iter):
        x_prev, incr_prev = x, incr.copy()
        for k, op in enumerate(ops):
            y = op(x + incr[k])
            incr[k] = x + incr[k] - y
            x = y
        res = s.violation(x)
        if res < best_res:
            best, best_res = x, res
        x_still = np.linalg.norm(x - x_prev) < tol
        # x alone can sit still for a whole cycle while the corrections keep moving
        if x_still and res <= tol and np.max(np.abs(incr - incr_prev)) < tol:
            return x
        if not x_still or res <= np.sqrt(tol):
            stalled, stall_ref = 0, np.inf
            continue
        # on an empty set x settles at a residual that no longer shrinks
        if res < STALL_RATIO * stall_ref:
            stalled, stall_ref = 0, res
            continue
        stalled += 1
        if stalled >= STALL_CYCLES and not certified:
            # Dykstra can also pause like this on a nonempty set, so ask an LP
            if _has_feasible_point(s):
                certified = True
                continue
            raise InfeasibleSetError(
                f"projection stalled with constraint residual {res:.3e}; set looks empty",
                best=best,
                residual=best_res,
            )
    raise ProjectionError(
        f"Dykstra did not converge in {max_iter} cycles (residual {best_res:.3e})",
        best=best,
        residual=best_res,
    )
