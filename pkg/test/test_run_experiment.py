#!/usr/bin/env python3
"""
Unit tests for safebetsim.run_experiment module.
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest

from safebetsim import __version__
from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.harness.leak import LeakVerdict, LeakWitness
from safebetsim.report.config import TraceSource, parse_experiment_config
from safebetsim.report.emit import RUNS_CSV
from safebetsim.report.report import Report, RunRecord
from safebetsim.run_experiment import (
    EXIT_CONFIG,
    EXIT_LEAK,
    EXIT_OK,
    EXIT_RUN_FAILURE,
    ExperimentOrchestrator,
    RunJob,
    main,
    materialize_trace,
    run_experiment,
    simulate,
)
from safebetsim.utils.db import RunDatabase

GEOMETRY = "512x8-4096/64"


def config(**extra):
    values = {"SCENARIOS": "spectre_v1", "POLICIES": "baseline safebet"}
    values.update(extra)
    return parse_experiment_config(values)


@pytest.fixture(autouse=True)
def fresh_trace_cache():
    materialize_trace.cache_clear()
    yield
    materialize_trace.cache_clear()


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


def write_config(directory: Path, **extra) -> Path:
    values = {
        "SCENARIOS": "spectre_v1",
        "POLICIES": "baseline safebet",
        "OUTPUT_DIR": str(directory / "results"),
    }
    values.update(extra)
    path = directory / "exp.env"
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    return path


class TestSimulate:
    """Test cases for materialize_trace and simulate."""

    def test_materialize_scenario(self):
        trace = materialize_trace(TraceSource("scenario", "spectre_v2", 1))
        assert trace.header.secrets

    def test_materialize_workload(self):
        trace = materialize_trace(TraceSource("workload", "load_heavy", 0), 200)
        assert not trace.header.secrets

    def test_materialize_pins_allocator_thresholds(self):
        lazy_free = LazyFreeConfig(max_count=2, max_bytes=4096)
        trace = materialize_trace(TraceSource("scenario", "stale_permission", 0), None, lazy_free)
        assert (trace.header.heap.max_count, trace.header.heap.max_bytes) == (2, 4096)

    def test_simulate_with_lowered_thresholds(self):
        cfg = config(
            SCENARIOS="", WORKLOADS="free_heavy", POLICIES="baseline safebet", FREE_MAX_COUNT="1000"
        )
        records = [simulate(job) for job in ExperimentOrchestrator(cfg).jobs()]
        assert all(r.succeeded for r in records)
        # 25,001 frees in batches of 1,001 plus the final drain
        assert records[1].stats.handler_invocations == 25

    def test_materialize_unknown_kind(self):
        with pytest.raises(ValueError):
            materialize_trace(TraceSource("url", "x"))

    def test_materialize_missing_file(self):
        with pytest.raises(FileNotFoundError):
            materialize_trace(TraceSource("file", "/nonexistent/a.trace"))

    def test_simulate_scenario(self):
        job = ExperimentOrchestrator(config(POLICIES="baseline")).jobs()[0]
        record = simulate(job)
        assert record.key == ("spectre_v1@0", "baseline", GEOMETRY)
        assert record.scenario
        assert record.leaked
        assert record.succeeded

    def test_describe(self):
        job = ExperimentOrchestrator(config()).jobs()[1]
        assert isinstance(job, RunJob)
        assert job.describe() == f"spectre_v1@0 / safebet / {GEOMETRY}"


class TestExperimentOrchestrator:
    """Test cases for ExperimentOrchestrator."""

    def test_jobs_cover_the_matrix(self):
        cfg = config(SEEDS="0 1", GEOMETRIES="128x8 512x8")
        jobs = ExperimentOrchestrator(cfg).jobs()
        assert len(jobs) == cfg.matrix_size() == 8
        assert len({(j.source, j.policy, j.geometry) for j in jobs}) == 8

    @patch("safebetsim.run_experiment.get_logger")
    def test_run(self, mock_get_logger):
        mock_get_logger.return_value = MagicMock()

        report = ExperimentOrchestrator(config()).run()

        assert [r.policy for r in report.runs] == ["baseline", "safebet"]
        assert report.meta["policies"] == ["baseline", "safebet"]
        assert report.meta["seeds"] == [0]
        assert report.norm_time(report.runs[0]) == 1.0
        assert report.runs[0].leaked
        assert not report.runs[1].leaked

    @patch("safebetsim.run_experiment.get_logger")
    def test_failed_run_does_not_abort(self, mock_get_logger):
        mock_logger = MagicMock()
        mock_get_logger.return_value = mock_logger
        cfg = config(TRACES="/nonexistent/a.trace")

        report = ExperimentOrchestrator(cfg).run()

        assert len(report) == 4
        [failed_a, failed_b] = report.failed()
        assert failed_a.trace == "/nonexistent/a.trace"
        assert failed_a.error.startswith("FileNotFoundError")
        assert len([r for r in report.runs if r.succeeded]) == 2
        mock_logger.error.assert_called()

    @patch("safebetsim.run_experiment.simulate")
    def test_run_job_catches_simulation_errors(self, mock_simulate):
        mock_simulate.side_effect = RuntimeError("op 3: broke")
        orchestrator = ExperimentOrchestrator(config())

        record = orchestrator.run_job(orchestrator.jobs()[0])

        assert not record.succeeded
        assert record.error == "RuntimeError: op 3: broke"
        assert record.scenario

    def test_parallel_matches_serial(self):
        serial = run_experiment(config())
        parallel = run_experiment(config(WORKERS="2"))
        assert parallel.runs == serial.runs

    def test_results_database(self, temp_dir):
        db_path = str(temp_dir / "runs.db")
        orchestrator = ExperimentOrchestrator(config(RESULTS_DB=db_path))

        orchestrator.run()
        orchestrator.finish(EXIT_OK)

        db = RunDatabase(db_path)
        rows = db.get_runs(orchestrator.experiment_id)
        assert [r["policy"] for r in rows] == ["baseline", "safebet"]
        assert [r["policy"] for r in db.get_leaked_runs(orchestrator.experiment_id)] == [
            "baseline"
        ]
        [experiment] = db.get_experiments()
        assert experiment["exit_code"] == EXIT_OK


class TestExitCode:
    """Test cases for ExperimentOrchestrator.exit_code."""

    LEAK = LeakVerdict(leaked=True, witness=LeakWitness(4, "s"))

    def _code(self, runs):
        return ExperimentOrchestrator(config()).exit_code(Report.of(runs))

    def test_ok(self):
        assert self._code([RunRecord("a@0", "baseline", GEOMETRY, True, verdict=self.LEAK)]) == 0

    def test_run_failure(self):
        assert self._code([RunRecord("a@0", "baseline", GEOMETRY, error="x")]) == EXIT_RUN_FAILURE

    def test_leak_outranks_failure(self):
        runs = [
            RunRecord("a@0", "baseline", GEOMETRY, error="x"),
            RunRecord("a@0", "safebet", GEOMETRY, True, verdict=self.LEAK),
        ]
        assert self._code(runs) == EXIT_LEAK

    def test_ablation_leak_is_not_a_failure(self):
        runs = [RunRecord("a@0", "safebet-noinst", GEOMETRY, True, verdict=self.LEAK)]
        assert self._code(runs) == EXIT_OK


class TestMainFunction:
    """Test cases for the command line."""

    def _exit_code(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        return exc.value.code

    def test_version(self, capsys):
        assert self._exit_code(["version"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == f"safebet-sim {__version__}"

    def test_missing_subcommand(self):
        assert self._exit_code([]) == 2

    @patch("safebetsim.run_experiment.setup_logger")
    def test_run_missing_config(self, mock_setup_logger):
        assert self._exit_code(["run", "--config", "/nonexistent/exp.env"]) == EXIT_CONFIG

    @patch("safebetsim.run_experiment.setup_logger")
    def test_run_invalid_config(self, mock_setup_logger, temp_dir):
        path = write_config(temp_dir, POLICIES="safebet")
        assert self._exit_code(["run", "--config", str(path)]) == EXIT_CONFIG

    @patch("safebetsim.run_experiment.setup_logger")
    def test_run_writes_report(self, mock_setup_logger, temp_dir):
        path = write_config(temp_dir)

        assert self._exit_code(["run", "--config", str(path)]) == EXIT_OK

        csv = (temp_dir / "results" / RUNS_CSV).read_text().splitlines()
        assert len(csv) == 3

    @patch("safebetsim.run_experiment.setup_logger")
    def test_run_unwritable_output(self, mock_setup_logger, temp_dir):
        blocker = temp_dir / "blocker"
        blocker.write_text("")
        path = write_config(temp_dir, OUTPUT_DIR=str(blocker / "out"))
        assert self._exit_code(["run", "--config", str(path)]) == EXIT_RUN_FAILURE

    @patch("safebetsim.run_experiment.setup_logger")
    def test_scenario_to_stdout(self, mock_setup_logger, capsys):
        assert self._exit_code(["scenario", "spectre_v1", "--seed", "2"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("#region")

    @patch("safebetsim.run_experiment.setup_logger")
    def test_scenario_check(self, mock_setup_logger, temp_dir):
        out = temp_dir / "v2.trace"
        argv = ["scenario", "spectre_v2", "--out", str(out), "--check"]
        assert self._exit_code(argv) == EXIT_OK
        assert out.exists()

    def test_scenario_unknown_kind(self):
        assert self._exit_code(["scenario", "meltdown"]) == 2

    @patch("safebetsim.run_experiment.setup_logger")
    def test_dump_smact(self, mock_setup_logger, temp_dir, capsys):
        out = temp_dir / "v1.trace"
        self._exit_code(["scenario", "spectre_v1", "--out", str(out)])
        capsys.readouterr()

        assert self._exit_code(["dump-smact", "--trace", str(out)]) == EXIT_OK
        assert "inst=" in capsys.readouterr().out

    @patch("safebetsim.run_experiment.setup_logger")
    def test_dump_smact_bad_policy(self, mock_setup_logger, temp_dir):
        out = temp_dir / "v1.trace"
        self._exit_code(["scenario", "spectre_v1", "--out", str(out)])
        argv = ["dump-smact", "--trace", str(out), "--policy", "fast"]
        assert self._exit_code(argv) == EXIT_CONFIG

    @patch("safebetsim.run_experiment.setup_logger")
    def test_dump_smact_missing_trace(self, mock_setup_logger):
        argv = ["dump-smact", "--trace", os.path.join("/nonexistent", "t.trace")]
        assert self._exit_code(argv) == EXIT_CONFIG

    def _stored_experiment(self, temp_dir):
        db_path = str(temp_dir / "runs.db")
        orchestrator = ExperimentOrchestrator(config(RESULTS_DB=db_path))
        orchestrator.run()
        orchestrator.finish(EXIT_OK)
        return db_path, orchestrator.experiment_id

    @patch("safebetsim.run_experiment.setup_logger")
    def test_history_lists_experiments(self, mock_setup_logger, temp_dir, capsys):
        db_path, experiment = self._stored_experiment(temp_dir)
        capsys.readouterr()

        assert self._exit_code(["history", "--db", db_path]) == EXIT_OK
        [line] = capsys.readouterr().out.splitlines()
        assert line.startswith(experiment)
        assert "exit 0" in line

    @patch("safebetsim.run_experiment.setup_logger")
    def test_history_runs(self, mock_setup_logger, temp_dir, capsys):
        db_path, experiment = self._stored_experiment(temp_dir)
        capsys.readouterr()

        assert self._exit_code(["history", "--db", db_path, "--experiment", experiment]) == EXIT_OK
        baseline, safebet = capsys.readouterr().out.splitlines()
        assert baseline.split()[:2] == ["spectre_v1@0", "baseline"]
        assert baseline.endswith("LEAKED")
        assert safebet.split()[1] == "safebet"
        assert safebet.endswith("ok")

    @patch("safebetsim.run_experiment.setup_logger")
    def test_history_leaked_only(self, mock_setup_logger, temp_dir, capsys):
        db_path, experiment = self._stored_experiment(temp_dir)
        capsys.readouterr()

        argv = ["history", "--db", db_path, "--experiment", experiment, "--leaked"]
        assert self._exit_code(argv) == EXIT_OK
        [line] = capsys.readouterr().out.splitlines()
        assert line.split()[1] == "baseline"

    @patch("safebetsim.run_experiment.setup_logger")
    def test_history_unknown_experiment(self, mock_setup_logger, temp_dir):
        db_path, _ = self._stored_experiment(temp_dir)
        argv = ["history", "--db", db_path, "--experiment", "nope"]
        assert self._exit_code(argv) == EXIT_CONFIG

    @patch("safebetsim.run_experiment.setup_logger")
    def test_history_missing_database(self, mock_setup_logger, temp_dir):
        argv = ["history", "--db", str(temp_dir / "absent.db")]
        assert self._exit_code(argv) == EXIT_CONFIG
        assert not (temp_dir / "absent.db").exists()

    @patch("safebetsim.run_experiment.setup_logger")
    @patch("safebetsim.run_experiment.get_logger")
    @patch("safebetsim.run_experiment._cmd_run")
    def test_unexpected_exception(self, mock_cmd_run, mock_get_logger, mock_setup_logger):
        mock_logger = MagicMock()
        mock_get_logger.return_value = mock_logger
        mock_cmd_run.side_effect = Exception("Unexpected error")

        assert self._exit_code(["run", "--config", "x.env"]) == EXIT_RUN_FAILURE
        mock_logger.error.assert_called()


if __name__ == "__main__":
    pytest.main([__file__])
