"""The four-subproblem QDP example with its published reference values."""

from __future__ import annotations

import logging

import numpy as np

from ..geometry import PolyhedralSet
from ..graph import CommGraph
from ..model import MdoProblem, QuadraticObjective, Subspace, Transition

__all__ = ["build_example1", "example1_graph", "EXAMPLE1_AIO", "EXAMPLE1_CMDO", "EXAMPLE1_VARS", "EXAMPLE1_STEP"]

log = logging.getLogger(__name__)

EXAMPLE1_VARS = ("z1", "z2", "z3", "z4", "zs1", "zs2", "zs3", "zs4")
EXAMPLE1_AIO = np.array([-6.000, -6.000, 7.000, -0.999, 7.000, 0.999, -2.499, 0.000])
EXAMPLE1_CMDO = np.array([-5.999, -6.000, 7.000, -1.000, 7.000, 1.000, -2.499, 0.000])

#: optimization and consensus coefficients used for the published run, 0.1/m with m = 4
EXAMPLE1_STEP = 0.1 / 4

_N_LOCAL = 4
_N = 8


def _z(name: str) -> int:
    return EXAMPLE1_VARS.index(name)


def _subspace(index, local, shared, state_from, source, terms, constraint):
    """``terms`` are ``(sign of y, variable, target)``: the first couples a local
    variable with the received input, the rest pull a shared variable to a target."""
    tz = np.zeros((1, _N))
    for name in state_from:
        tz[0, _z(name)] = 1.0
    # objective acts on (x, y, z1..z4, zs1..zs4)
    rows, offsets = [], []
    (ysign, var, _), *targets = terms
    row = np.zeros(2 + _N)
    row[2 + _z(var)] = 1.0
    row[1] = ysign
    rows.append(row)
    offsets.append(0.0)
    for _, name, target in targets:
        row = np.zeros(2 + _N)
        row[2 + _z(name)] = 1.0
        rows.append(row)
        offsets.append(-target)
    coef, rel, rhs = constraint
    own = [local] + list(shared)
    return Subspace(
        index=index,
        local_vars=(_z(local),),
        shared_vars=tuple(_z(s) - _N_LOCAL for s in shared),
        transition=Transition(np.zeros((1, 1)), tz),
        objective=QuadraticObjective.sum_of_squares(rows, offsets),
        feasible_set=PolyhedralSet.from_constraints(len(own), [(coef, rel, rhs)]),
        coupling_in=((source, [1.0]),),
        name=f"P{index + 1}",
    )


def build_example1() -> MdoProblem:
    """Four coupled subproblems over ``z1..z4`` (local) and ``zs1..zs4`` (shared).

    P1: ``(z1 - y2)^2 + (zs1 - 10)^2 + (zs4 - 10)^2``, ``z1 + zs1 - zs4 <= 1``, ``x1 = z3 + z4``
    P2: ``(z2 + y1)^2 + (zs1 - 4)^2 + (zs2 - 4)^2``,   ``z2 - zs1 - zs2 <= 1``, ``x2 = z2``
    P3: ``(z3 - y4)^2 + (zs2 + 2)^2 + (zs3 - 5)^2``,   ``z3 + zs2 + zs3 >= -1``, ``x3 = zs2``
    P4: ``(z4 + y3)^2 + (zs3 + 10)^2 + (zs4 + 10)^2``, ``z4 - zs3 + zs4 >= -1``, ``x4 = zs1``

    with ``y_i = x_i`` published by subproblem ``i``. The subproblem objectives
    read the coupling input named in each formula, so P1 receives ``y2``, P2
    ``y1``, P3 ``y4`` and P4 ``y3``.
    """
    subs = (
        _subspace(0, "z1", ("zs1", "zs4"), ("z3", "z4"), 1,
                  [(-1.0, "z1", 0), (0, "zs1", 10.0), (0, "zs4", 10.0)], ([1, 1, -1], "<=", 1.0)),
        _subspace(1, "z2", ("zs1", "zs2"), ("z2",), 0,
                  [(1.0, "z2", 0), (0, "zs1", 4.0), (0, "zs2", 4.0)], ([1, -1, -1], "<=", 1.0)),
        _subspace(2, "z3", ("zs2", "zs3"), ("zs2",), 3,
                  [(-1.0, "z3", 0), (0, "zs2", -2.0), (0, "zs3", 5.0)], ([1, 1, 1], ">=", -1.0)),
        _subspace(3, "z4", ("zs3", "zs4"), ("zs1",), 2,
                  [(1.0, "z4", 0), (0, "zs3", -10.0), (0, "zs4", -10.0)], ([1, -1, 1], ">=", -1.0)),
    )
    problem = MdoProblem(subs, n_local=_N_LOCAL, n_shared=4, var_names=EXAMPLE1_VARS)
    for i, s in enumerate(subs):
        reads = set(np.flatnonzero(s.transition.Tz[0]))
        foreign = sorted(reads - set(problem.own_indices(i)))
        if foreign:
            log.info(
                "%s: state reads %s owned by other subproblems; delivered through the coupling channel",
                s.name,
                ", ".join(EXAMPLE1_VARS[v] for v in foreign),
            )
    return problem


def example1_graph() -> CommGraph:
    """Ring P1-P2-P3-P4-P1; neighbours share one design variable."""
    return CommGraph.ring(4)
