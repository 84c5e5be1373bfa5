"""Experiment configuration files (TOML).

Agents and variables are numbered from 1 in configuration files and from 0
in code. See ``configs/README.md`` for the full schema.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..geometry import InfeasibleSetError, PolyhedralSet
from ..graph import CommGraph, Schedule, is_connected
from ..model import MdoProblem, QuadraticObjective, Subspace, Transition
from .example1 import EXAMPLE1_STEP, build_example1, example1_graph

__all__ = ["ConfigError", "ExperimentConfig", "VectorProblem", "load_config", "parse_config", "example1_config", "ALGORITHMS"]

ALGORITHMS = ("consensus", "constrained_consensus", "projected_subgradient", "cmdo_multistep", "cmdo_interleaved")
_MDO_ALGORITHMS = ("cmdo_multistep", "cmdo_interleaved")
BUILTINS = ("example1",)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted name, ``line`` its line (1-based) if known."""

    def __init__(self, message: str, key: str = "", line: int | None = None, source: str = ""):
        self.key = key
        self.line = line
        self.source = source
        where = f"{source}:" if source else ""
        where += f"{line}: " if line else (" " if source else "")
        super().__init__(f"{where}{key + ': ' if key else ''}{message}")


@dataclass(frozen=True)
class VectorProblem:
    """Agents estimating one common vector, each with its own set and objective."""

    dim: int
    sets: tuple
    objectives: tuple
    initial: np.ndarray

    @property
    def m(self) -> int:
        return len(self.sets)

    def aggregate(self):
        total = QuadraticObjective.zero(self.dim)
        for f in self.objectives:
            total = total + f
        s = PolyhedralSet.whole_space(self.dim)
        for z in self.sets:
            s = s.intersect(z, probe=False)
        return total, PolyhedralSet(s.dim, s.halfspaces, s.equalities, s.lower, s.upper)


@dataclass
class ExperimentConfig:
    problem: Any
    graph: CommGraph
    weights: str = "metropolis"
    eta: float | None = None
    schedule: Schedule = field(default_factory=Schedule)
    algorithm: str = "cmdo_interleaved"
    mode: str = "standard"
    objective: str = "system"
    stepsize_kind: str = "constant"
    stepsize_base: float = EXAMPLE1_STEP
    alpha_con: float = 1.0
    alpha_opt: float = EXAMPLE1_STEP
    inner_steps: int = 1
    max_iter: int = 1000
    tol: float = 0.0
    seed: int = 0
    output: Path | None = None
    trace_every: int = 1
    initial: np.ndarray | None = None
    source: str = ""


def example1_config(algorithm="interleaved", iterations=10000, mode="standard", objective="system",
                    alpha_con=EXAMPLE1_STEP, alpha_opt=EXAMPLE1_STEP, inner_steps=1, trace_every=None):
    """Settings of the published four-subproblem run (both coefficients 0.1/m)."""
    return ExperimentConfig(
        problem=build_example1(),
        graph=example1_graph(),
        algorithm=f"cmdo_{algorithm}",
        mode=mode,
        objective=objective,
        stepsize_kind="constant",
        stepsize_base=alpha_opt,
        alpha_con=alpha_con,
        alpha_opt=alpha_opt,
        inner_steps=inner_steps,
        max_iter=iterations,
        trace_every=trace_every or max(1, iterations // 100),
        source="example1",
    )


_TOP_KEYS = {"seed", "max_iter", "tol", "output", "trace_every", "problem", "graph", "schedule", "algorithm"}
_SECTION_KEYS = {
    "problem": {"builtin", "kind", "dim", "agents", "n_local", "n_shared", "names", "subspaces", "initial"},
    "graph": {"num_agents", "edges", "weights", "eta", "topology"},
    "schedule": {"kind", "seed", "bound_B"},
    "algorithm": {"name", "mode", "objective", "alpha_con", "alpha_opt", "inner_steps", "stepsize"},
    "algorithm.stepsize": {"kind", "base"},
}


class _Ctx:
    """Error helper that finds the line where a key is defined."""

    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def line_of(self, key: str) -> int | None:
        parts = key.split(".")
        leaf = re.sub(r"\[\d+\]", "", parts[-1])
        pat = re.compile(rf"^\s*{re.escape(leaf)}\s*=")
        for n, line in enumerate(self.lines, 1):
            if pat.match(line):
                return n
        for n, line in enumerate(self.lines, 1):
            if re.match(rf"^\s*\[+\s*{re.escape('.'.join(p for p in parts if not p.startswith('[')))}\s*\]+", line):
                return n
        return None

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, key, self.line_of(key), self.source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc
    cfg = parse_config(text, source=str(path))
    if cfg.output is not None and not cfg.output.is_absolute():
        cfg.output = (path.parent / cfg.output).resolve()
    return cfg


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    ctx = _Ctx(text, source)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None, source=source) from exc
    _check_keys(ctx, raw, _TOP_KEYS, "")
    for sec, allowed in _SECTION_KEYS.items():
        node = raw
        for part in sec.split("."):
            node = node.get(part, {}) if isinstance(node, dict) else {}
        if not isinstance(node, dict):
            raise ctx.error(sec, "must be a table")
        _check_keys(ctx, node, allowed, sec + ".")

    algo = raw.get("algorithm", {})
    name = _get(ctx, algo, "algorithm.name", str, "cmdo_interleaved")
    if name not in ALGORITHMS:
        raise ctx.error("algorithm.name", f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")

    problem, default_graph, initial = _parse_problem(ctx, raw.get("problem", {}), name)
    m = problem.m
    graph = _parse_graph(ctx, raw.get("graph", {}), m, default_graph)
    weights = _get(ctx, raw.get("graph", {}), "graph.weights", str, "metropolis")
    if weights not in ("metropolis", "uniform"):
        raise ctx.error("graph.weights", f"unknown weight scheme {weights!r}")
    if weights == "metropolis" and not is_connected(graph):
        raise ctx.error("graph.edges", "graph is disconnected; metropolis weights need a connected graph")
    eta = _get(ctx, raw.get("graph", {}), "graph.eta", float, None)

    seed = _get(ctx, raw, "seed", int, 0)
    sched_raw = raw.get("schedule", {})
    kind = _get(ctx, sched_raw, "schedule.kind", str, "synchronous")
    if kind not in ("synchronous", "gossip", "broadcast"):
        raise ctx.error("schedule.kind", f"unknown schedule {kind!r}")
    bound = _get(ctx, sched_raw, "schedule.bound_B", int, None)
    if bound is not None and bound < 1:
        raise ctx.error("schedule.bound_B", "must be a positive integer")
    schedule = Schedule(kind, _get(ctx, sched_raw, "schedule.seed", int, seed), bound)
    if kind != "synchronous" and not graph.edges:
        raise ctx.error("graph.edges", f"{kind} schedule needs at least one edge")

    mode = _get(ctx, algo, "algorithm.mode", str, "standard")
    if mode not in ("literal", "standard"):
        raise ctx.error("algorithm.mode", f"unknown mode {mode!r}; expected literal or standard")
    objective = _get(ctx, algo, "algorithm.objective", str, "system")
    if objective not in ("system", "local"):
        raise ctx.error("algorithm.objective", f"unknown objective {objective!r}; expected system or local")
    step = algo.get("stepsize", {})
    st_kind = _get(ctx, step, "algorithm.stepsize.kind", str, "constant" if name in _MDO_ALGORITHMS else "harmonic")
    if st_kind not in ("constant", "harmonic"):
        raise ctx.error("algorithm.stepsize.kind", f"unknown stepsize kind {st_kind!r}")
    st_base = _get(ctx, step, "algorithm.stepsize.base", float, EXAMPLE1_STEP if name in _MDO_ALGORITHMS else 1.0)
    alpha_opt = _get(ctx, algo, "algorithm.alpha_opt", float, st_base)
    alpha_con = _get(ctx, algo, "algorithm.alpha_con", float, 1.0)
    for key, val in (("algorithm.stepsize.base", st_base), ("algorithm.alpha_opt", alpha_opt), ("algorithm.alpha_con", alpha_con)):
        if val <= 0:
            raise ctx.error(key, "must be positive")
    inner = _get(ctx, algo, "algorithm.inner_steps", int, 1)
    if inner < 0:
        raise ctx.error("algorithm.inner_steps", "must be nonnegative")

    max_iter = _get(ctx, raw, "max_iter", int, 1000)
    if max_iter < 0:
        raise ctx.error("max_iter", "must be nonnegative")
    tol = _get(ctx, raw, "tol", float, 0.0)
    if tol < 0:
        raise ctx.error("tol", "must be nonnegative")
    trace_every = _get(ctx, raw, "trace_every", int, 1)
    if trace_every < 1:
        raise ctx.error("trace_every", "must be a positive integer")
    output = _get(ctx, raw, "output", str, None)

    return ExperimentConfig(
        problem=problem,
        graph=graph,
        weights=weights,
        eta=eta,
        schedule=schedule,
        algorithm=name,
        mode=mode,
        objective=objective,
        stepsize_kind=st_kind,
        stepsize_base=st_base,
        alpha_con=alpha_con,
        alpha_opt=alpha_opt,
        inner_steps=inner,
        max_iter=max_iter,
        tol=tol,
        seed=seed,
        output=Path(output) if output else None,
        trace_every=trace_every,
        initial=initial,
        source=source,
    )


def _check_keys(ctx, table, allowed, prefix):
    for key in table:
        if key not in allowed:
            raise ctx.error(prefix + key, f"unknown key; expected one of {', '.join(sorted(allowed))}")


_TYPES = {int: "an integer", float: "a number", str: "a string", list: "an array", bool: "a boolean"}


def _get(ctx, table, key, typ, default):
    leaf = key.split(".")[-1]
    if leaf not in table:
        return default
    val = table[leaf]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
        raise ctx.error(key, f"must be {_TYPES[typ]}, got {type(val).__name__}")
    return val


def _array(ctx, key, val, ndim, shape=None):
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ctx.error(key, "must be a numeric array") from None
    if arr.ndim != ndim:
        raise ctx.error(key, f"must be a {ndim}-dimensional numeric array")
    if shape is not None and arr.shape != shape:
        raise ctx.error(key, f"has shape {arr.shape}, expected {shape}")
    return arr


def _parse_constraints(ctx, key, items, dim, lower=None, upper=None):
    triples = []
    if not isinstance(items, list):
        raise ctx.error(key, "must be an array of [coefficients, relation, rhs] triples")
    for n, item in enumerate(items):
        k = f"{key}[{n}]"
        if isinstance(item, dict):
            item = [item.get("coef"), item.get("rel"), item.get("rhs")]
        if not (isinstance(item, list) and len(item) == 3):
            raise ctx.error(k, "must be [coefficients, relation, rhs]")
        coef = _array(ctx, k, item[0], 1, (dim,))
        if item[1] not in ("<=", ">=", "==", "="):
            raise ctx.error(k, f"relation must be <=, >= or ==, got {item[1]!r}")
        if not isinstance(item[2], (int, float)) or isinstance(item[2], bool):
            raise ctx.error(k, "right-hand side must be a number")
        if not np.any(coef):
            raise ctx.error(k, "coefficients must not all be zero")
        triples.append((coef, item[1], float(item[2])))
    lo = None if lower is None else _array(ctx, key.rsplit(".", 1)[0] + ".lower", lower, 1, (dim,))
    hi = None if upper is None else _array(ctx, key.rsplit(".", 1)[0] + ".upper", upper, 1, (dim,))
    try:
        return PolyhedralSet.from_constraints(dim, triples, lower=lo, upper=hi)
    except InfeasibleSetError as exc:
        raise ctx.error(key, f"constraint set is empty ({exc})") from None


def _parse_objective(ctx, key, node, dim):
    if "terms" in node:
        rows, offsets, weights = [], [], []
        for n, term in enumerate(node["terms"]):
            k = f"{key}.terms[{n}]"
            if not isinstance(term, dict) or "row" not in term:
                raise ctx.error(k, "each term needs a 'row' (and optional 'offset', 'weight')")
            rows.append(_array(ctx, k, term["row"], 1, (dim,)))
            offsets.append(float(term.get("offset", 0.0)))
            weights.append(float(term.get("weight", 1.0)))
            if weights[-1] < 0:
                raise ctx.error(k, "weight must be nonnegative")
        return QuadraticObjective.sum_of_squares(np.array(rows), offsets, weights)
    if "Q" not in node and "P" not in node:
        return QuadraticObjective.zero(dim)
    Q = _array(ctx, f"{key}.Q", node.get("Q", np.zeros((dim, dim)).tolist()), 2, (dim, dim))
    P = _array(ctx, f"{key}.P", node.get("P", [0.0] * dim), 1, (dim,))
    try:
        return QuadraticObjective(Q, P, float(node.get("constant", 0.0)))
    except ValueError as exc:
        raise ctx.error(f"{key}.Q", str(exc)) from None


def _parse_problem(ctx, node, algorithm):
    if not node:
        raise ctx.error("problem", "missing [problem] section")
    if "builtin" in node:
        name = node["builtin"]
        if name not in BUILTINS:
            raise ctx.error("problem.builtin", f"unknown builtin {name!r}; expected one of {', '.join(BUILTINS)}")
        if algorithm not in _MDO_ALGORITHMS:
            raise ctx.error("algorithm.name", f"builtin {name!r} needs cmdo_multistep or cmdo_interleaved")
        initial = None
        if "initial" in node:
            initial = _array(ctx, "problem.initial", node["initial"], 1, (8,))
        return build_example1(), example1_graph(), initial
    kind = node.get("kind")
    if kind == "vector":
        if algorithm in _MDO_ALGORITHMS:
            raise ctx.error("algorithm.name", f"{algorithm} needs an mdo problem (problem.kind = \"mdo\")")
        return _parse_vector(ctx, node)
    if kind == "mdo":
        if algorithm not in _MDO_ALGORITHMS:
            raise ctx.error("algorithm.name", f"{algorithm} needs a vector problem (problem.kind = \"vector\")")
        return _parse_mdo(ctx, node)
    raise ctx.error("problem.kind", "must be \"vector\" or \"mdo\" (or give problem.builtin)")


def _parse_vector(ctx, node):
    dim = _get(ctx, node, "problem.dim", int, None)
    if dim is None or dim < 1:
        raise ctx.error("problem.dim", "must be a positive integer")
    agents = node.get("agents")
    if not isinstance(agents, list) or not agents:
        raise ctx.error("problem.agents", "must be a nonempty array of agent tables")
    sets, objs, init = [], [], []
    allowed = {"constraints", "lower", "upper", "Q", "P", "constant", "terms", "initial"}
    for i, a in enumerate(agents):
        key = f"problem.agents[{i}]"
        _check_keys(ctx, a, allowed, key + ".")
        sets.append(_parse_constraints(ctx, f"{key}.constraints", a.get("constraints", []), dim, a.get("lower"), a.get("upper")))
        objs.append(_parse_objective(ctx, key, a, dim))
        init.append(_array(ctx, f"{key}.initial", a.get("initial", [0.0] * dim), 1, (dim,)))
    return VectorProblem(dim, tuple(sets), tuple(objs), np.array(init)), None, None


def _parse_mdo(ctx, node):
    n_local = _get(ctx, node, "problem.n_local", int, None)
    n_shared = _get(ctx, node, "problem.n_shared", int, None)
    if n_local is None or n_local < 0:
        raise ctx.error("problem.n_local", "must be a nonnegative integer")
    if n_shared is None or n_shared < 0:
        raise ctx.error("problem.n_shared", "must be a nonnegative integer")
    n = n_local + n_shared
    subs_raw = node.get("subspaces")
    if not isinstance(subs_raw, list) or not subs_raw:
        raise ctx.error("problem.subspaces", "must be a nonempty array of subspace tables")
    m = len(subs_raw)
    allowed = {"name", "local_vars", "shared_vars", "Tz", "Ty", "offset", "coupling_in",
               "Q", "P", "constant", "terms", "constraints", "lower", "upper"}
    parsed = []
    for i, s in enumerate(subs_raw):
        key = f"problem.subspaces[{i}]"
        _check_keys(ctx, s, allowed, key + ".")
        loc = [int(v) - 1 for v in s.get("local_vars", [])]
        sh = [int(v) - 1 for v in s.get("shared_vars", [])]
        for v in loc:
            if not 0 <= v < n_local:
                raise ctx.error(f"{key}.local_vars", f"variable {v + 1} outside 1..{n_local}")
        for v in sh:
            if not 0 <= v < n_shared:
                raise ctx.error(f"{key}.shared_vars", f"variable {v + 1} outside 1..{n_shared}")
        tz = _array(ctx, f"{key}.Tz", s.get("Tz", np.zeros((0, n)).tolist()), 2) if s.get("Tz") else np.zeros((0, n))
        if tz.shape[1] != n:
            raise ctx.error(f"{key}.Tz", f"needs {n} columns (one per design variable)")
        coupling = []
        for c_n, c in enumerate(s.get("coupling_in", [])):
            k = f"{key}.coupling_in[{c_n}]"
            if not isinstance(c, dict) or "source" not in c or "row" not in c:
                raise ctx.error(k, "needs 'source' (agent number) and 'row'")
            src = int(c["source"]) - 1
            if not 0 <= src < m:
                raise ctx.error(k, f"source {c['source']} outside 1..{m}")
            coupling.append((src, _array(ctx, k, c["row"], 1)))
        ty = None
        if "Ty" in s:
            ty = _array(ctx, f"{key}.Ty", s["Ty"], 2, (tz.shape[0], len(coupling)))
        elif coupling:
            ty = np.zeros((tz.shape[0], len(coupling)))
        offset = None if "offset" not in s else _array(ctx, f"{key}.offset", s["offset"], 1, (tz.shape[0],))
        obj = _parse_objective(ctx, key, s, tz.shape[0] + len(coupling) + n)
        fset = _parse_constraints(ctx, f"{key}.constraints", s.get("constraints", []), len(loc) + len(sh), s.get("lower"), s.get("upper"))
        parsed.append((key, Subspace(i, tuple(loc), tuple(sh), Transition(ty, tz, offset), obj, fset, tuple(coupling), s.get("name", f"P{i + 1}"))))
    names = tuple(node.get("names", ()))
    try:
        problem = MdoProblem(tuple(p for _, p in parsed), n_local, n_shared, var_names=names)
        problem.state_maps
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ctx.error("problem.subspaces", str(exc)) from None
    initial = None
    if "initial" in node:
        initial = _array(ctx, "problem.initial", node["initial"], 1, (n,))
    return problem, None, initial


def _parse_graph(ctx, node, m, default):
    num = _get(ctx, node, "graph.num_agents", int, m)
    if num != m:
        raise ctx.error("graph.num_agents", f"is {num} but the problem has {m} agents")
    topo = _get(ctx, node, "graph.topology", str, None)
    if "edges" in node:
        edges = node["edges"]
        if not isinstance(edges, list):
            raise ctx.error("graph.edges", "must be an array of [i, j] pairs")
        pairs = set()
        for e in edges:
            if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e)):
                raise ctx.error("graph.edges", f"bad edge {e!r}; expected [i, j] with agent numbers")
            i, j = e[0] - 1, e[1] - 1
            if i == j:
                raise ctx.error("graph.edges", f"self-loop on agent {e[0]}")
            if not (0 <= i < m and 0 <= j < m):
                raise ctx.error("graph.edges", f"edge {e} refers to an agent outside 1..{m}")
            pairs.add((i, j))
        return CommGraph(m, frozenset(pairs))
    if topo is not None:
        builders = {"ring": CommGraph.ring, "path": CommGraph.path, "complete": CommGraph.complete}
        if topo not in builders:
            raise ctx.error("graph.topology", f"unknown topology {topo!r}; expected ring, path or complete")
        return builders[topo](m)
    if default is not None:
        return default
    raise ctx.error("graph", "give graph.edges or graph.topology")
