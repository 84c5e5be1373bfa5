"""Run an experiment config and record a per-iteration trace."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import algorithms as alg
from ..geometry import ProjectionError
from ..graph import build_weights, effective_weights, next_active_edges
from ..model import MdoProblem
from ..reference import AioSolution, solve_aio
from .config import ExperimentConfig, VectorProblem

__all__ = ["Trace", "MetricRow", "ExperimentError", "run_experiment", "compute_metrics", "run_aio", "TRACE_COLUMNS"]

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("k", "agent", "var", "value", "consensus_error", "feasibility", "f_local", "f_global")


class ExperimentError(RuntimeError):
    """Numerical failure during a run, tagged with the iteration it happened at."""

    def __init__(self, message, iteration, cause=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class MetricRow:
    consensus_error: float
    feasibility: float
    f_local: list
    f_global: float


def _fmt(x) -> str:
    return f"{x:.9g}"


@dataclass
class Trace:
    """Rows ``(k, agent, var, value, consensus_error, feasibility, f_local, f_global)``.

    Agents are numbered from 1 in the trace. When ``path`` is set, rows are
    streamed to that CSV file as they are recorded.
    """

    rows: list = field(default_factory=list)
    path: Path | None = None
    _fh: object = field(default=None, repr=False)
    _writer: object = field(default=None, repr=False)

    def open(self):
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(TRACE_COLUMNS)
        return self

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def record(self, k: int, values: list, names: list, metrics: MetricRow):
        for agent, (vals, vnames) in enumerate(zip(values, names)):
            for name, v in zip(vnames, vals):
                row = (k, agent + 1, name, float(v), metrics.consensus_error, metrics.feasibility,
                       metrics.f_local[agent], metrics.f_global)
                self.rows.append(row)
                if self._writer is not None:
                    self._writer.writerow(_format_row(row))
        if self._fh is not None:
            self._fh.flush()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows:
            w.writerow(_format_row(row))
        return buf.getvalue()

    def column(self, name: str) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        return np.array([r[idx] for r in self.rows])

    def at(self, k: int) -> dict:
        """``{(agent, var): value}`` at iteration ``k``."""
        return {(r[1], r[2]): r[3] for r in self.rows if r[0] == k}

    def metric(self, name: str) -> dict:
        """``{k: value}`` for one of the per-iteration metric columns."""
        idx = TRACE_COLUMNS.index(name)
        return {r[0]: r[idx] for r in self.rows}


def _format_row(row):
    k, agent, var, *nums = row
    return [k, agent, var] + [_fmt(x) for x in nums]


# --------------------------------------------------------------------------


def compute_metrics(states, problem) -> MetricRow:
    """Consensus error, worst constraint residual and objective values.

    ``states`` is a list of :class:`~cmdo.model.DesignState` for an
    :class:`MdoProblem`, or an ``(m, d)`` array for a :class:`VectorProblem`.
    """
    if isinstance(problem, MdoProblem):
        ce = 0.0
        for slot in range(problem.n_shared):
            owners = problem.owners(slot)
            if len(owners) > 1:
                vals = [states[j].shared[problem.subspaces[j].shared_vars.index(slot)] for j in owners]
                ce = max(ce, float(np.max(vals) - np.min(vals)))
        feas = max(max(0.0, s.feasible_set.violation(st.own)) for s, st in zip(problem.subspaces, states))
        base = alg.consensus_point(problem, states)
        f_local = [
            problem.local_objectives[i].value(alg.agent_view(problem, states, i, base=base))
            for i in range(problem.m)
        ]
        return MetricRow(ce, feas, f_local, problem.system_objective.value(base))
    z = np.asarray(states, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    ce = float(np.max(z.max(axis=0) - z.min(axis=0)))
    feas = max(max(0.0, s.violation(zi)) for s, zi in zip(problem.sets, z))
    f_local = [f.value(zi) for f, zi in zip(problem.objectives, z)]
    mean = z.mean(axis=0)
    return MetricRow(ce, feas, f_local, float(sum(f.value(mean) for f in problem.objectives)))


def _values(states, problem):
    if isinstance(problem, MdoProblem):
        names = problem.names
        vals = [st.own for st in states]
        vnames = [[names[v] for v in problem.own_indices(i)] for i in range(problem.m)]
        return vals, vnames
    vnames = [[f"w{c + 1}" for c in range(problem.dim)]] * problem.m
    return list(np.asarray(states)), vnames


def _initial(cfg: ExperimentConfig):
    p = cfg.problem
    if isinstance(p, MdoProblem):
        return alg.initial_states(p, cfg.initial)
    z0 = np.array(p.initial, dtype=float)
    if cfg.algorithm != "consensus":
        z0 = np.array([s.project(zi) for s, zi in zip(p.sets, z0)])
    return z0


def _step_norm(old, new, problem) -> float:
    if isinstance(problem, MdoProblem):
        return float(max(np.max(np.abs(a.own - b.own), initial=0.0) for a, b in zip(old, new)))
    return float(np.max(np.abs(np.asarray(new) - np.asarray(old))))


def _finite(states, problem) -> bool:
    if isinstance(problem, MdoProblem):
        return all(np.all(np.isfinite(st.own)) for st in states)
    return bool(np.all(np.isfinite(states)))


def _stepper(cfg: ExperimentConfig):
    p = cfg.problem
    weights = build_weights(cfg.graph, cfg.weights, cfg.eta)
    sched = alg.StepsizeSchedule(cfg.stepsize_kind, cfg.alpha_opt)
    synchronous = cfg.schedule.kind == "synchronous"

    def active(k):
        return None if synchronous else next_active_edges(cfg.schedule, k, cfg.graph)

    def w_at(k):
        act = active(k)
        return weights if act is None else effective_weights(weights, act)

    if cfg.algorithm == "consensus":
        return lambda z, k: alg.consensus_step(z, w_at(k))
    if cfg.algorithm == "constrained_consensus":
        return lambda z, k: alg.constrained_consensus_step(z, w_at(k), p.sets)
    if cfg.algorithm == "projected_subgradient":
        grads = lambda i, v: p.objectives[i].gradient(v)
        return lambda z, k: alg.projected_subgradient_step(z, w_at(k), p.sets, grads, sched(k))
    if cfg.algorithm == "cmdo_interleaved":
        return lambda st, k: alg.cmdo_interleaved_step(
            p, st, weights, cfg.alpha_con, sched(k), active(k), cfg.mode, cfg.objective)
    return lambda st, k: alg.cmdo_multistep_iteration(
        p, st, weights, cfg.alpha_con, sched(k), cfg.inner_steps, active(k), cfg.objective)


def run_experiment(cfg: ExperimentConfig, output=None):
    """Run ``cfg`` and return ``(trace, final_states)``.

    Stops after ``max_iter`` iterations, or earlier once both the consensus
    error and the largest per-iteration change fall below ``tol``. The trace
    holds every ``trace_every``-th iteration plus the last one. Numerical
    failures are re-raised as :class:`ExperimentError` after the partial
    trace has been written.
    """
    path = output if output is not None else cfg.output
    trace = Trace(path=Path(path) if path is not None else None).open()
    problem = cfg.problem
    step = _stepper(cfg)
    try:
        try:
            states = _initial(cfg)
        except (ProjectionError, np.linalg.LinAlgError) as exc:
            raise ExperimentError(f"initial projection failed: {exc}", 0, exc) from exc
        k = 0
        while True:
            with np.errstate(over="ignore", invalid="ignore"):
                metrics = compute_metrics(states, problem)
            last = k == cfg.max_iter
            new = None
            if not last:
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        new = step(states, k)
                    if not _finite(new, problem):
                        raise FloatingPointError("iterate is no longer finite; the stepsize is likely too large")
                except (ProjectionError, alg.DivergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
                    trace.record(k, *_values(states, problem), metrics)
                    raise ExperimentError(str(exc), k, exc) from exc
                if metrics.consensus_error < cfg.tol and _step_norm(states, new, problem) < cfg.tol:
                    last = True
            if last or k % cfg.trace_every == 0:
                trace.record(k, *_values(states, problem), metrics)
            if last:
                break
            states = new
            k += 1
        log.info("finished after %d iterations; consensus error %.3e", k, metrics.consensus_error)
        return trace, states
    finally:
        trace.close()


def run_aio(cfg: ExperimentConfig, tol: float = 1e-9) -> AioSolution:
    """Centralized solve of the config's problem."""
    p = cfg.problem
    obj, s = p.aggregate() if isinstance(p, VectorProblem) else (p.system_objective, p.feasible_set)
    return solve_aio(obj, s, tol=tol)
