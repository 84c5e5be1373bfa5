"""Consensus-based distributed multidisciplinary design optimization.

Submodules
----------
graph
    Communication graphs, weight matrices, activation schedules.
geometry
    Projections onto polyhedral sets.
model
    Quadratic objectives and the coupled MDO problem description.
algorithms
    Consensus, constrained consensus, distributed projected subgradient and
    the two CMDO variants.
reference
    Centralized (all-in-one) solver and an exact active-set oracle.
harness
    Config files, experiment runner, the four-subproblem example.
"""

from .algorithms import (
    StepsizeSchedule,
    cmdo_interleaved_step,
    cmdo_multistep_iteration,
    consensus_point,
    consensus_step,
    constrained_consensus_step,
    initial_states,
    projected_subgradient_step,
)
from .geometry import InfeasibleSetError, PolyhedralSet, ProjectionError, project_polyhedron
from .graph import CommGraph, Schedule, WeightMatrix, build_weights, validate_assumptions
from .model import MdoProblem, QuadraticObjective, SpecialQdp, Subspace, Transition
from .reference import active_set_oracle, solve_aio

__version__ = "0.1.0"

__all__ = [
    "CommGraph", "Schedule", "WeightMatrix", "build_weights", "validate_assumptions",
    "PolyhedralSet", "ProjectionError", "InfeasibleSetError", "project_polyhedron",
    "QuadraticObjective", "SpecialQdp", "MdoProblem", "Subspace", "Transition",
    "StepsizeSchedule", "consensus_step", "constrained_consensus_step", "projected_subgradient_step",
    "initial_states", "consensus_point", "cmdo_interleaved_step", "cmdo_multistep_iteration",
    "solve_aio", "active_set_oracle",
]
