import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cmdo import algorithms as alg
from cmdo.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from cmdo.geometry import ProjectionError
from cmdo.harness import (
    ConfigError,
    ExperimentError,
    EXAMPLE1_AIO,
    compute_metrics,
    example1_config,
    load_config,
    parse_config,
    run_aio,
    run_experiment,
)
from cmdo.harness.runner import TRACE_COLUMNS
from cmdo.harness.example1 import build_example1

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = sorted((ROOT / "configs").glob("*.toml"))
INVALID = sorted((Path(__file__).parent / "data" / "invalid").glob("*.toml"))

VECTOR = """
max_iter = {max_iter}
tol = {tol}
seed = 7
[problem]
kind = "vector"
dim = 2
[[problem.agents]]
lower = [0.0, 0.0]
upper = [2.0, 2.0]
initial = {init1}
[[problem.agents]]
constraints = [[[1.0, 1.0], "<=", 3.0]]
initial = {init2}
[graph]
edges = [[1, 2]]
[algorithm]
name = "{algorithm}"
"""


def vector_config(algorithm="constrained_consensus", max_iter=100, tol=1e-12, init1="[2.0, 0.0]", init2="[0.0, 3.0]"):
    return parse_config(VECTOR.format(algorithm=algorithm, max_iter=max_iter, tol=tol, init1=init1, init2=init2))


class TestConfig:
    def test_shipped_configs_parse(self):
        assert CONFIGS
        for path in CONFIGS:
            cfg = load_config(path)
            assert cfg.output.is_absolute()
            assert cfg.problem.m == cfg.graph.num_agents

    def test_defaults(self):
        cfg = parse_config('[problem]\nbuiltin = "example1"\n')
        assert cfg.algorithm == "cmdo_interleaved"
        assert cfg.mode == "standard"
        assert cfg.stepsize_kind == "constant"
        assert cfg.alpha_opt == pytest.approx(0.025)
        assert cfg.alpha_con == 1.0
        assert cfg.schedule.kind == "synchronous"
        vec = vector_config()
        assert vec.stepsize_kind == "harmonic" and vec.stepsize_base == 1.0

    def test_schedule_seed_falls_back_to_top_level(self):
        cfg = parse_config('seed = 5\n[problem]\nbuiltin = "example1"\n[schedule]\nkind = "gossip"\n')
        assert cfg.schedule.seed == 5

    @pytest.mark.parametrize("path", INVALID, ids=[p.stem for p in INVALID])
    def test_invalid_corpus(self, path):
        expected = path.read_text().splitlines()[0].removeprefix("# expect: ")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert expected in str(err.value)

    @pytest.mark.parametrize("path", INVALID, ids=[p.stem for p in INVALID])
    def test_invalid_corpus_cli(self, path, capsys):
        expected = path.read_text().splitlines()[0].removeprefix("# expect: ")
        assert main(["validate", str(path)]) == EXIT_CONFIG
        assert expected in capsys.readouterr().err

    def test_error_carries_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config('[problem]\nbuiltin = "example1"\n\n[algorithm]\nmode = "x"\n')
        assert err.value.line == 5
        assert err.value.key == "algorithm.mode"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.toml")

    def test_mdo_inline_matches_builtin(self):
        inline = load_config(ROOT / "configs" / "example1_inline.toml").problem
        builtin = build_example1()
        np.testing.assert_array_equal(inline.system_objective.Q, builtin.system_objective.Q)
        np.testing.assert_array_equal(inline.system_objective.P, builtin.system_objective.P)
        assert inline.names == builtin.names


class TestMetrics:
    def test_agreement_is_zero(self):
        cfg = vector_config()
        m = compute_metrics(np.array([[1.0, 1.0], [1.0, 1.0]]), cfg.problem)
        assert m.consensus_error == 0
        assert m.feasibility == 0

    def test_pairwise_gap(self):
        cfg = parse_config(VECTOR.format(algorithm="consensus", max_iter=1, tol=0, init1="[0,0]", init2="[0,0]").replace("dim = 2", "dim = 1").replace("lower = [0.0, 0.0]\nupper = [2.0, 2.0]", "").replace('constraints = [[[1.0, 1.0], "<=", 3.0]]', "").replace("initial = [0,0]", "initial = [0]"))
        assert compute_metrics(np.array([[1.0], [3.0]]), cfg.problem).consensus_error == 2

    def test_feasibility_reported(self):
        cfg = vector_config()
        m = compute_metrics(np.array([[3.0, 0.0], [1.0, 1.0]]), cfg.problem)
        assert m.feasibility == pytest.approx(1.0)

    def test_mdo_metrics_at_optimum(self):
        ex = build_example1()
        states = alg.initial_states(ex, EXAMPLE1_AIO)
        m = compute_metrics(states, ex)
        assert m.consensus_error == 0
        assert m.feasibility <= 1e-2
        assert m.f_global == pytest.approx(ex.system_objective.value(alg.consensus_point(ex, states)))


class TestRunner:
    def test_immediate_exit_at_fixed_point(self):
        cfg = vector_config(init1="[1.0, 1.0]", init2="[1.0, 1.0]")
        trace, states = run_experiment(cfg)
        assert [r[0] for r in trace.rows] == [0, 0, 0, 0]
        assert trace.rows[0][4] == 0
        np.testing.assert_array_equal(states, [[1, 1], [1, 1]])

    def test_trace_order_and_columns(self, tmp_path):
        cfg = vector_config(max_iter=7, tol=0)
        cfg.trace_every = 3
        out = tmp_path / "t.csv"
        trace, _ = run_experiment(cfg, output=out)
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        keys = [(int(r.split(",")[0]), int(r.split(",")[1]), r.split(",")[2]) for r in lines[1:]]
        assert keys == sorted(keys)
        assert sorted({k for k, _, _ in keys}) == [0, 3, 6, 7]
        assert out.read_text() == trace.to_csv()

    def test_constrained_consensus_converges(self):
        trace, states = run_experiment(vector_config(max_iter=5000, tol=1e-12))
        assert np.ptp(states, axis=0).max() < 1e-12
        assert trace.rows[-1][0] < 5000

    def test_numerical_failure_has_iteration_and_partial_trace(self, tmp_path, monkeypatch):
        real = alg.constrained_consensus_step

        def failing(states, weights, sets, tol=1e-10):
            if failing.calls == 4:
                raise ProjectionError("boom", best=None, residual=1.0)
            failing.calls += 1
            return real(states, weights, sets, tol)

        failing.calls = 0
        monkeypatch.setattr(alg, "constrained_consensus_step", failing)
        out = tmp_path / "partial.csv"
        with pytest.raises(ExperimentError) as err:
            run_experiment(vector_config(max_iter=50, tol=0), output=out)
        assert err.value.iteration == 4
        ks = {int(line.split(",")[0]) for line in out.read_text().splitlines()[1:]}
        assert ks == {0, 1, 2, 3, 4}

    def test_blow_up_detected(self):
        text = VECTOR.format(algorithm="projected_subgradient", max_iter=5000, tol=0, init1="[1.0, 1.0]", init2="[1.0, 1.0]")
        text = text.replace("lower = [0.0, 0.0]\nupper = [2.0, 2.0]", "Q = [[1.0, 0.0], [0.0, 1.0]]").replace(
            'constraints = [[[1.0, 1.0], "<=", 3.0]]', "Q = [[1.0, 0.0], [0.0, 1.0]]")
        text += '[algorithm.stepsize]\nkind = "constant"\nbase = 10.0\n'
        with pytest.raises(ExperimentError, match="finite"):
            run_experiment(parse_config(text))

    def test_deterministic_with_gossip(self, tmp_path):
        text = VECTOR.format(algorithm="projected_subgradient", max_iter=300, tol=0, init1="[2.0, 0.0]", init2="[0.0, 3.0]")
        text += '[schedule]\nkind = "gossip"\n'
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(parse_config(text), output=a)
        run_experiment(parse_config(text), output=b)
        assert a.read_bytes() == b.read_bytes()

    def test_example1_short_run(self):
        cfg = example1_config(iterations=400)
        trace, states = run_experiment(cfg)
        assert trace.rows[-1][0] == 400
        assert trace.metric("consensus_error")[400] < 0.05

    def test_run_aio_vector(self):
        sol = run_aio(vector_config())
        assert sol.objective == 0.0


class TestCli:
    def test_run_prints_trace_without_output(self, capsys):
        cfg_path = ROOT / "tests" / "data" / "tiny.toml"
        assert main(["run", str(cfg_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert ",".join(TRACE_COLUMNS) in out

    def test_run_output_override(self, tmp_path, capsys):
        out = tmp_path / "x.csv"
        assert main(["run", str(ROOT / "configs" / "boxes_consensus.toml"), "--output", str(out)]) == EXIT_OK
        assert out.read_bytes() == (ROOT / "tests" / "pinned" / "boxes_consensus.csv").read_bytes()

    def test_aio(self, tmp_path, capsys):
        out = tmp_path / "aio.csv"
        assert main(["aio", str(ROOT / "configs" / "example1.toml"), "--csv", str(out)]) == EXIT_OK
        rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
        np.testing.assert_allclose([float(v) for _, v in rows], EXAMPLE1_AIO, atol=1e-2)
        assert "objective: 348.5" in capsys.readouterr().out

    def test_aio_numerical_failure(self, tmp_path, capsys):
        cfg = tmp_path / "unbounded.toml"
        cfg.write_text('[problem]\nkind = "vector"\ndim = 1\n[[problem.agents]]\nP = [1.0]\n[graph]\nnum_agents = 1\nedges = []\n[algorithm]\nname = "consensus"\n')
        assert main(["aio", str(cfg)]) == EXIT_NUMERIC
        assert "numerical failure" in capsys.readouterr().err

    def test_run_numerical_failure(self, tmp_path, capsys):
        cfg = tmp_path / "blowup.toml"
        cfg.write_text('max_iter = 2000\n[problem]\nkind = "vector"\ndim = 1\n[[problem.agents]]\nQ = [[1.0]]\n[[problem.agents]]\nQ = [[1.0]]\ninitial = [1.0]\n'
                       '[graph]\ntopology = "path"\n[algorithm]\nname = "projected_subgradient"\n[algorithm.stepsize]\nkind = "constant"\nbase = 10.0\n')
        assert main(["run", str(cfg), "-o", str(tmp_path / "t.csv")]) == EXIT_NUMERIC
        assert "iteration" in capsys.readouterr().err

    def test_example1_subcommand(self, capsys, tmp_path):
        assert main(["example1", "--iterations", "300", "--output", str(tmp_path / "e.csv")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "zs4" in out and "iterations: 300" in out
        assert main(["example1", "--iterations", "50", "--algorithm", "multistep", "--mode", "literal"]) == EXIT_OK

    def test_validate_ok(self, capsys):
        assert main(["validate", str(ROOT / "configs" / "qp_subgradient.toml")]) == EXIT_OK
        assert "E_inf connectivity  : pass" in capsys.readouterr().out

    def test_validate_reports_schedule_gaps(self, capsys):
        assert main(["validate", str(ROOT / "tests" / "data" / "gossip_bound.toml")]) == EXIT_CONFIG
        assert "bound_B" in capsys.readouterr().out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "cmdo", "validate", str(INVALID[0])], capture_output=True, text=True)
        assert res.returncode == EXIT_CONFIG
        res = subprocess.run([sys.executable, "-m", "cmdo", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "example1" in res.stdout

    def test_log_level_from_environment(self, monkeypatch, capsys):
        import logging

        monkeypatch.setenv("CMDO_LOG_LEVEL", "INFO")
        logging.getLogger().handlers.clear()
        main(["validate", str(ROOT / "configs" / "example1.toml")])
        assert "locality" in capsys.readouterr().err or logging.getLogger().level == logging.INFO
