"""Command-line entry point: ``cmdo run|aio|example1|validate``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures. Set ``CMDO_LOG_LEVEL`` (e.g. ``DEBUG``) to control log output.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from .algorithms import consensus_point
from .geometry import ProjectionError
from .graph import build_weights, intercommunication_gaps, validate_assumptions
from .harness.config import ConfigError, VectorProblem, example1_config, load_config
from .harness.example1 import EXAMPLE1_STEP, EXAMPLE1_CMDO, EXAMPLE1_VARS
from .harness.runner import ExperimentError, run_aio, run_experiment
from .reference import AioError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("cmdo")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.output or cfg.output
    t0 = time.perf_counter()
    trace, _ = run_experiment(cfg, output=out)
    last = trace.rows[-1]
    print(f"iterations: {last[0]}  consensus_error: {last[4]:.3e}  feasibility: {last[5]:.3e}  "
          f"f_global: {last[7]:.9g}  ({time.perf_counter() - t0:.2f} s)")
    if out is None:
        sys.stdout.write(trace.to_csv())
    else:
        print(f"trace written to {out}")
    return EXIT_OK


def _cmd_aio(args) -> int:
    cfg = load_config(args.config)
    sol = run_aio(cfg)
    p = cfg.problem
    names = p.names if not isinstance(p, VectorProblem) else tuple(f"w{c + 1}" for c in range(p.dim))
    rows = list(zip(names, sol.minimizer))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("var", "value"))
            w.writerows((n, f"{v:.9g}") for n, v in rows)
    for n, v in rows:
        print(f"{n:>8s} {v: .6f}")
    print(f"objective: {sol.objective:.9g}  kkt_residual: {sol.kkt_residual:.2e}  iterations: {sol.iterations}")
    return EXIT_OK


def _cmd_example1(args) -> int:
    cfg = example1_config(args.algorithm, args.iterations, args.mode, args.objective, alpha_con=args.alpha_con)
    problem = cfg.problem
    t0 = time.perf_counter()
    trace, states = run_experiment(cfg, output=args.output)
    z = consensus_point(problem, states)
    aio = run_aio(cfg)
    print(f"{'var':>5s} {'CMDO':>10s} {'published':>10s} {'AIO':>10s}")
    for name, v, ref, a in zip(EXAMPLE1_VARS, z, EXAMPLE1_CMDO, aio.minimizer):
        print(f"{name:>5s} {v:10.4f} {ref:10.3f} {a:10.4f}")
    last = trace.rows[-1]
    print(f"iterations: {last[0]}  consensus_error: {last[4]:.3e}  objective: {last[7]:.6f}  "
          f"max |CMDO - AIO|: {np.max(np.abs(z - aio.minimizer)):.2e}  ({time.perf_counter() - t0:.2f} s)")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    w = build_weights(cfg.graph, cfg.weights, cfg.eta)
    report = validate_assumptions([w], cfg.graph, eta=cfg.eta)
    print(f"config OK: {cfg.algorithm} on {cfg.problem.m} agents, {len(cfg.graph.edges)} edges")
    print(report)
    ok = report.all_passed
    sched = cfg.schedule
    if sched.kind != "synchronous" and sched.bound_B is not None:
        horizon = min(cfg.max_iter, 10000)
        gaps = intercommunication_gaps(sched, cfg.graph, horizon)
        late = {e: g for e, g in gaps.items() if g > sched.bound_B}
        print(f"bound_B={sched.bound_B} over {horizon} steps: {'pass' if not late else 'FAIL'}")
        for (i, j), g in sorted(late.items()):
            print(f"  edge ({i + 1}, {j + 1}) waited {g} steps")
        ok = ok and not late
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdo", description="Consensus-based distributed MDO experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the algorithm in a config file and write its trace")
    p.add_argument("config")
    p.add_argument("--output", "-o", help="trace CSV path (overrides the config)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("aio", help="solve the config's problem centrally")
    p.add_argument("config")
    p.add_argument("--csv", help="also write the minimizer to this CSV file")
    p.set_defaults(func=_cmd_aio)

    p = sub.add_parser("example1", help="reproduce the four-subproblem example")
    p.add_argument("--algorithm", choices=("interleaved", "multistep"), default="interleaved")
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--mode", choices=("standard", "literal"), default="standard")
    p.add_argument("--objective", choices=("system", "local"), default="system")
    p.add_argument("--alpha-con", type=float, default=EXAMPLE1_STEP, help="consensus damping (default 0.025)")
    p.add_argument("--output", "-o", help="trace CSV path")
    p.set_defaults(func=_cmd_example1)

    p = sub.add_parser("validate", help="check a config and its weight matrix")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CMDO_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, AioError, ProjectionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
