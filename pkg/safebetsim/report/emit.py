"""
CSV and JSON writers for experiment reports.

CSV cells keep Python's shortest float repr so that re-reading them gives
the exact same numbers; missing values are empty cells in CSV and null in
JSON.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import pandas as pd
from loguru import logger

from .report import (
    ABLATION_COLUMNS,
    MPKI_COLUMNS,
    RUN_COLUMNS,
    SWEEP_COLUMNS,
    Report,
)

RUNS_CSV = "runs.csv"
MPKI_CSV = "smact_mpki.csv"
ABLATIONS_CSV = "ablations.csv"
SWEEP_CSV = "size_sweep.csv"
REPORT_JSON = "report.json"


class EmitError(OSError):
    """The output directory or one of its files cannot be written."""


def _cell(value: Any) -> Any:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value


def write_table(
    rows: Iterable[Dict[str, Any]], columns: Sequence[str], path: Union[str, Path]
) -> Path:
    """Write ``rows`` with a fixed column order; an empty table is header-only."""
    frame = pd.DataFrame(
        [[_cell(row.get(c)) for c in columns] for row in rows],
        columns=list(columns),
        dtype=object,
    )
    out = Path(path)
    frame.to_csv(out, index=False, na_rep="", lineterminator="\n")
    return out


def write_runs_csv(report: Report, path: Union[str, Path]) -> Path:
    return write_table(report.run_rows(), RUN_COLUMNS, path)


def read_runs_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a runs CSV back with numeric columns parsed exactly."""
    frame = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip")
    frame["leaked"] = frame["leaked"].map({"true": True, "false": False, True: True, False: False})
    return frame


def write_json(report: Report, path: Union[str, Path]) -> Path:
    out = Path(path)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_report(path: Union[str, Path]) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))


def emit(
    report: Report, output_dir: Union[str, Path], formats: Sequence[str] = ("csv", "json")
) -> List[Path]:
    """Write the report views into ``output_dir``; returns the files written."""
    out_dir = Path(output_dir)
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            written.append(write_runs_csv(report, out_dir / RUNS_CSV))
            written.append(write_table(report.smact_mpki_rows(), MPKI_COLUMNS, out_dir / MPKI_CSV))
            written.append(
                write_table(report.ablation_rows(), ABLATION_COLUMNS, out_dir / ABLATIONS_CSV)
            )
            written.append(write_table(report.size_sweep_rows(), SWEEP_COLUMNS, out_dir / SWEEP_CSV))
        if "json" in formats:
            written.append(write_json(report, out_dir / REPORT_JSON))
    except OSError as e:
        raise EmitError(f"cannot write report to {out_dir}: {e}") from e

    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written
