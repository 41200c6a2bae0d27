#!/usr/bin/env python3
"""
Experiment Orchestrator

Runs a (trace x policy x geometry) matrix through the simulator, collects
the per-run statistics and leak verdicts into one Report and writes the
CSV/JSON views. Also hosts the ``safebet-sim`` command line.
"""

import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence

from safebetsim import __version__
from safebetsim.allocator.lazy_free import LazyFreeConfig
from safebetsim.harness.leak import monitored_run
from safebetsim.harness.scenarios import ScenarioError, ScenarioSpec, generate, scenario_kinds
from safebetsim.harness.workloads import generate_workload
from safebetsim.memory.hierarchy import HierarchyConfig
from safebetsim.pipeline.core import run as simulate_trace
from safebetsim.pipeline.policy import CoreConfig, PolicyConfig, default_policies
from safebetsim.report.config import (
    ConfigError,
    ExperimentConfig,
    TraceSource,
    load_experiment_config,
)
from safebetsim.report.emit import EmitError, emit
from safebetsim.report.report import Report, RunRecord
from safebetsim.smact.geometry import SmactGeometry
from safebetsim.smact.table import Smact
from safebetsim.trace.codec import TraceParseError, load_trace, save_trace, serialize_trace
from safebetsim.trace.model import Trace
from safebetsim.utils.db import RunDatabase
from safebetsim.utils.logger import get_logger, setup_logger
from safebetsim.utils.time import experiment_id, format_duration

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN_FAILURE = 2
EXIT_LEAK = 3


@dataclass(frozen=True)
class RunJob:
    """Everything one worker needs to simulate one matrix cell."""

    source: TraceSource
    policy: PolicyConfig
    geometry: SmactGeometry
    core: CoreConfig
    hierarchy: HierarchyConfig
    lazy_free: LazyFreeConfig
    workload_ops: Optional[int] = None

    def describe(self) -> str:
        return f"{self.source.label} / {self.policy.label()} / {self.geometry.label()}"


@lru_cache(maxsize=16)
def materialize_trace(
    source: TraceSource,
    workload_ops: Optional[int] = None,
    lazy_free: Optional[LazyFreeConfig] = None,
) -> Trace:
    """Load or generate the trace behind ``source``.

    Generated traces compute their heap handles with the ``lazy_free`` thresholds.
    """
    if source.kind == "file":
        return load_trace(source.name)
    lazy_free = lazy_free or LazyFreeConfig()
    if source.kind == "scenario":
        return generate(
            ScenarioSpec(
                kind=source.name,
                seed=source.seed,
                free_max_count=lazy_free.max_count,
                free_max_bytes=lazy_free.max_bytes,
            )
        )
    if source.kind == "workload":
        return generate_workload(
            source.name, seed=source.seed, ops=workload_ops, lazy_free=lazy_free
        )
    raise ValueError(f"unknown trace source kind {source.kind!r}")


def simulate(job: RunJob) -> RunRecord:
    """Run one cell; exceptions propagate to the orchestrator."""
    trace = materialize_trace(job.source, job.workload_ops, job.lazy_free)
    stats, verdict = monitored_run(
        trace,
        job.policy,
        core=job.core,
        geometry=job.geometry,
        hierarchy=job.hierarchy,
        lazy_free=job.lazy_free,
    )
    return RunRecord(
        trace=job.source.label,
        policy=job.policy.label(),
        geometry=job.geometry.label(),
        scenario=bool(trace.header.secrets),
        stats=stats,
        verdict=verdict,
    )


class ExperimentOrchestrator:
    def __init__(self, config: ExperimentConfig):
        """Initialize the orchestrator for one experiment matrix."""
        self.config = config
        self.logger = get_logger("ExperimentOrchestrator")
        self.experiment_id = experiment_id()
        self.db = RunDatabase(config.results_db) if config.results_db else None
        self.start_time: Optional[float] = None

    def jobs(self) -> List[RunJob]:
        cfg = self.config
        return [
            RunJob(
                source=source,
                policy=policy,
                geometry=geometry,
                core=cfg.core,
                hierarchy=cfg.hierarchy,
                lazy_free=cfg.lazy_free,
                workload_ops=cfg.workload_ops,
            )
            for source in cfg.traces
            for geometry in cfg.geometries
            for policy in cfg.policies
        ]

    def _failed(self, job: RunJob, error: Exception) -> RunRecord:
        self.logger.error(f"❌ {job.describe()} failed: {error}")
        return RunRecord(
            trace=job.source.label,
            policy=job.policy.label(),
            geometry=job.geometry.label(),
            scenario=job.source.kind == "scenario",
            error=f"{type(error).__name__}: {error}",
        )

    def _finished(self, job: RunJob, record: RunRecord) -> RunRecord:
        stats = record.stats
        leak = " LEAKED" if record.leaked else ""
        self.logger.info(
            f"✅ {job.describe()}: {stats.cycles} cycles, "  # type: ignore[union-attr]
            f"IPC {stats.ipc:.3f}{leak}"  # type: ignore[union-attr]
        )
        return record

    def run_job(self, job: RunJob) -> RunRecord:
        """Run a single cell in-process."""
        try:
            return self._finished(job, simulate(job))
        except Exception as e:
            return self._failed(job, e)

    def _run_parallel(self, jobs: Sequence[RunJob]) -> List[RunRecord]:
        records = []
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            futures = [(job, pool.submit(simulate, job)) for job in jobs]
            for job, future in futures:
                try:
                    records.append(self._finished(job, future.result()))
                except Exception as e:
                    records.append(self._failed(job, e))
        return records

    def run(self) -> Report:
        """Run the complete matrix."""
        self.start_time = time.time()
        cfg = self.config
        jobs = self.jobs()

        self.logger.info("=" * 60)
        self.logger.info("Starting SafeBet experiment")
        self.logger.info(f"Experiment: {self.experiment_id}")
        self.logger.info(
            f"Matrix: {len(cfg.traces)} traces x {len(cfg.policies)} policies x "
            f"{len(cfg.geometries)} geometries = {len(jobs)} runs"
        )
        self.logger.info("=" * 60)

        if self.db:
            self.db.start_experiment(self.experiment_id, cfg.source_path)

        if cfg.workers > 1 and len(jobs) > 1:
            records = self._run_parallel(jobs)
        else:
            records = [self.run_job(job) for job in jobs]

        report = Report.of(
            records,
            config=cfg.source_path,
            seeds=list(cfg.seeds),
            geometries=[g.label() for g in cfg.geometries],
            policies=[p.label() for p in cfg.policies],
        )
        self._summarize(report)

        if self.db:
            stored = self.db.insert_runs(
                self.experiment_id,
                [dict(row, error=r.error) for row, r in zip(report.run_rows(), report.runs)],
            )
            self.logger.debug(f"Stored {stored} runs in {cfg.results_db}")
        return report

    def _summarize(self, report: Report) -> None:
        total_duration = time.time() - (self.start_time or time.time())
        failed = report.failed()
        leaks = report.security_failures()

        self.logger.info("=" * 60)
        self.logger.info("Experiment Summary")
        self.logger.info("=" * 60)
        self.logger.info(f"Total Duration: {format_duration(total_duration)}")
        self.logger.info(f"Successful Runs: {len(report) - len(failed)}/{len(report)}")
        for record in failed:
            self.logger.error(f"❌ {' / '.join(record.key)}: {record.error}")
        for record in leaks:
            witness = record.verdict.witness  # type: ignore[union-attr]
            self.logger.error(
                f"🚨 {record.policy} leaked on {record.trace} "
                f"(op {witness.seq}, operand {witness.operand})"  # type: ignore[union-attr]
            )
        if not failed and not leaks:
            self.logger.info("🎉 Experiment completed successfully!")

    def exit_code(self, report: Report) -> int:
        """Security failures outrank run failures."""
        if report.security_failures():
            return EXIT_LEAK
        if report.failed():
            return EXIT_RUN_FAILURE
        return EXIT_OK

    def finish(self, exit_code: int) -> None:
        if self.db:
            self.db.finish_experiment(self.experiment_id, exit_code)


def run_experiment(config: ExperimentConfig) -> Report:
    """Run every (trace, policy, geometry) combination of ``config``."""
    return ExperimentOrchestrator(config).run()


# -- command line -------------------------------------------------------------


def _cmd_run(args, logger) -> int:
    try:
        config = load_experiment_config(args.config)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    setup_logger(log_level=config.log_level, log_file=config.log_file)
    orchestrator = ExperimentOrchestrator(config)
    report = orchestrator.run()
    try:
        emit(report, config.output_dir, config.formats)
    except EmitError as e:
        logger.error(str(e))
        orchestrator.finish(EXIT_RUN_FAILURE)
        return EXIT_RUN_FAILURE

    code = orchestrator.exit_code(report)
    orchestrator.finish(code)
    return code


def _cmd_scenario(args, logger) -> int:
    try:
        trace = generate(ScenarioSpec(kind=args.kind, seed=args.seed))
    except ScenarioError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    if args.out:
        path = save_trace(trace, args.out)
        logger.info(f"Wrote {args.kind} (seed {args.seed}) to {path}")
    else:
        sys.stdout.write(serialize_trace(trace))

    if not args.check:
        return EXIT_OK
    code = EXIT_OK
    for policy in default_policies():
        _, verdict = monitored_run(trace, policy)
        status = "leaked" if verdict.leaked else "safe"
        logger.info(f"{policy.label():<18} {status}")
        if verdict.leaked and policy.fully_protected:
            code = EXIT_LEAK
    return code


def _cmd_dump_smact(args, logger) -> int:
    try:
        trace = load_trace(args.trace)
        policy = PolicyConfig.parse(args.policy)
        geometry = SmactGeometry.parse(args.geometry)
    except (OSError, TraceParseError, ValueError) as e:
        logger.error(str(e))
        return EXIT_CONFIG

    smact = Smact(policy.geometry_for(geometry))
    try:
        simulate_trace(trace, policy, geometry=geometry, smact=smact)
    except Exception as e:
        logger.error(f"Simulation failed: {e}")
        return EXIT_RUN_FAILURE
    sys.stdout.write(smact.dump())
    return EXIT_OK


def _cmd_history(args, logger) -> int:
    if not os.path.exists(args.db):
        logger.error(f"Results database not found: {args.db}")
        return EXIT_CONFIG

    db = RunDatabase(args.db)
    if args.experiment is None:
        for exp in db.get_experiments():
            code = "running" if exp["exit_code"] is None else f"exit {exp['exit_code']}"
            print(f"{exp['id']}  {exp['started_at']}  {code}  {exp['config_path'] or '-'}")
        return EXIT_OK

    rows = db.get_leaked_runs(args.experiment) if args.leaked else db.get_runs(args.experiment)
    if not rows and not args.leaked:
        logger.error(f"No runs recorded for experiment {args.experiment}")
        return EXIT_CONFIG
    for row in rows:
        status = row.get("error") or ("LEAKED" if row.get("leaked") else "ok")
        cycles = row.get("cycles")
        print(
            f"{row['trace']:<24} {row['policy']:<18} {row['geometry']:<16} "
            f"{'-' if cycles is None else cycles:>10}  {status}"
        )
    return EXIT_OK


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        prog="safebet-sim",
        description="Trace-driven simulator for speculative memory access control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="Run an experiment matrix")
    run_p.add_argument("--config", required=True, help="Experiment KEY=VALUE file")

    scen_p = sub.add_parser("scenario", help="Generate an attack scenario trace")
    scen_p.add_argument("kind", choices=scenario_kinds())
    scen_p.add_argument("--seed", type=int, default=0)
    scen_p.add_argument("--out", help="Write the trace here instead of stdout")
    scen_p.add_argument(
        "--check", action="store_true", help="Report leak verdicts for the default policies"
    )

    dump_p = sub.add_parser("dump-smact", help="Print the SMACT contents after a trace")
    dump_p.add_argument("--trace", required=True)
    dump_p.add_argument("--policy", default="safebet")
    dump_p.add_argument("--geometry", default=SmactGeometry().label())

    hist_p = sub.add_parser("history", help="List experiments stored in a results database")
    hist_p.add_argument("--db", required=True, help="SQLite file written via RESULTS_DB")
    hist_p.add_argument("--experiment", help="Show the runs of this experiment id")
    hist_p.add_argument(
        "--leaked", action="store_true", help="Only runs with a positive leak verdict"
    )

    sub.add_parser("version", help="Print the version")
    return parser


def main(argv: Optional[Sequence[str]] = None):
    """Main entry point."""
    args = build_parser().parse_args(argv)

    if args.command == "version":
        print(f"safebet-sim {__version__}")
        sys.exit(EXIT_OK)

    setup_logger(log_level="INFO")
    logger = get_logger("main")

    handlers: Dict[str, Any] = {
        "run": _cmd_run,
        "scenario": _cmd_scenario,
        "dump-smact": _cmd_dump_smact,
        "history": _cmd_history,
    }
    try:
        code = handlers[args.command](args, logger)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        code = EXIT_RUN_FAILURE
    sys.exit(code)


if __name__ == "__main__":
    main()
