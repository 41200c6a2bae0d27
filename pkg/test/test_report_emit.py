#!/usr/bin/env python3
"""
Unit tests for safebetsim.report.emit module.
"""

import os
import sys
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from safebetsim.harness.leak import LeakVerdict, LeakWitness
from safebetsim.pipeline.stats import SimStats, SmactMissStats
from safebetsim.report.emit import (
    ABLATIONS_CSV,
    MPKI_CSV,
    REPORT_JSON,
    RUNS_CSV,
    SWEEP_CSV,
    EmitError,
    emit,
    load_report,
    read_runs_csv,
    write_json,
    write_runs_csv,
)
from safebetsim.report.report import RUN_COLUMNS, Report, RunRecord

GEOMETRY = "512x8-4096/64"
HEADER = ",".join(RUN_COLUMNS)


def two_run_report() -> Report:
    base = SimStats("baseline", GEOMETRY, cycles=1000, committed_instructions=3000)
    safe = SimStats(
        "safebet",
        GEOMETRY,
        cycles=1070,
        committed_instructions=3000,
        smact=SmactMissStats(lookups=10, miss_slab=2, miss_chunk=1, replays=3),
    )
    leaked = LeakVerdict(leaked=True, witness=LeakWitness(12, "s"))
    return Report.of(
        [
            RunRecord("spectre_v1@0", "baseline", GEOMETRY, True, base, leaked),
            RunRecord("spectre_v1@0", "safebet", GEOMETRY, True, safe, LeakVerdict(False)),
        ],
        seeds=[0],
    )


@pytest.fixture
def out_dir():
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


class TestWriteRunsCsv:
    """Test cases for the runs CSV."""

    def test_empty_report_is_header_only(self, out_dir):
        path = write_runs_csv(Report(), out_dir / RUNS_CSV)
        assert path.read_text() == HEADER + "\n"

    def test_two_runs(self, out_dir):
        path = write_runs_csv(two_run_report(), out_dir / RUNS_CSV)
        lines = path.read_text().splitlines()

        assert lines[0] == HEADER
        assert len(lines) == 3
        assert lines[1].startswith("spectre_v1@0,baseline,512x8-4096/64,1000,3000,3.0,1.0,")
        assert lines[1].endswith(",true")
        assert lines[2].endswith(",false")

    def test_numbers_read_back_exactly(self, out_dir):
        report = two_run_report()
        frame = read_runs_csv(write_runs_csv(report, out_dir / RUNS_CSV))

        assert list(frame.columns) == list(RUN_COLUMNS)
        assert frame.loc[1, "norm_time"] == 1070 / 1000
        assert frame.loc[1, "smact_miss_total"] == 3
        assert frame["leaked"].tolist() == [True, False]

    def test_failed_run_has_empty_cells(self, out_dir):
        report = Report.of([RunRecord("x.trace", "baseline", GEOMETRY, error="boom")])
        line = write_runs_csv(report, out_dir / RUNS_CSV).read_text().splitlines()[1]
        assert line == "x.trace,baseline,512x8-4096/64" + "," * (len(RUN_COLUMNS) - 3)


class TestWriteJson:
    """Test cases for the JSON report."""

    def test_round_trip(self, out_dir):
        report = two_run_report()
        path = write_json(report, out_dir / REPORT_JSON)
        assert load_report(path) == report

    def test_meta(self, out_dir):
        path = write_json(two_run_report(), out_dir / REPORT_JSON)
        assert load_report(path).meta["handler_cost_model"] == "single-core"


class TestEmit:
    """Test cases for emit."""

    @patch.object(sys.modules["safebetsim.report.emit"], "logger")
    def test_writes_all_views(self, mock_logger, out_dir):
        written = emit(two_run_report(), out_dir / "nested")

        names = sorted(p.name for p in written)
        assert names == sorted([RUNS_CSV, MPKI_CSV, ABLATIONS_CSV, SWEEP_CSV, REPORT_JSON])
        assert all(p.exists() for p in written)
        mock_logger.info.assert_called_once()

    def test_csv_only(self, out_dir):
        written = emit(two_run_report(), out_dir, formats=("csv",))
        assert REPORT_JSON not in [p.name for p in written]

    def test_byte_identical_reruns(self, out_dir):
        first = emit(two_run_report(), out_dir / "a")
        second = emit(two_run_report(), out_dir / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_unwritable_directory(self, out_dir):
        blocker = out_dir / "file"
        blocker.write_text("not a directory")
        with pytest.raises(EmitError):
            emit(two_run_report(), blocker / "sub")

    def test_emit_error_is_os_error(self):
        assert issubclass(EmitError, OSError)

    @pytest.mark.skipif(os.name != "posix", reason="uses POSIX permissions")
    def test_read_only_directory(self, out_dir):
        if os.geteuid() == 0:
            pytest.skip("root ignores directory permissions")
        locked = out_dir / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        try:
            with pytest.raises(EmitError):
                emit(two_run_report(), locked)
        finally:
            locked.chmod(0o700)


if __name__ == "__main__":
    pytest.main([__file__])
