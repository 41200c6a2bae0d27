import json
import os
import sqlite3
from typing import Any, Dict, List, Optional

from loguru import logger

from safebetsim.utils.time import get_current_timestamp


class RunDatabase:
    """SQLite store of experiment matrices and their per-run rows."""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._init_database()

    def _init_database(self):
        """Initialize the database schema."""
        db_dir = os.path.dirname(self.db_path)
        if db_dir:
            os.makedirs(db_dir, exist_ok=True)

        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS experiments (
                    id TEXT PRIMARY KEY,
                    config_path TEXT,
                    started_at TEXT NOT NULL,
                    finished_at TEXT,
                    exit_code INTEGER
                )
            """
            )
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    experiment_id TEXT NOT NULL,
                    trace TEXT NOT NULL,
                    policy TEXT NOT NULL,
                    geometry TEXT NOT NULL,
                    cycles INTEGER,
                    leaked BOOLEAN DEFAULT FALSE,
                    error TEXT,
                    row_json TEXT NOT NULL,
                    recorded_at TEXT NOT NULL,
                    UNIQUE (experiment_id, trace, policy, geometry)
                )
            """
            )
            conn.commit()

    def start_experiment(self, experiment_id: str, config_path: Optional[str]) -> bool:
        """Record the start of an experiment matrix."""
        try:
            with sqlite3.connect(self.db_path) as conn:
                conn.execute(
                    """
                    INSERT INTO experiments (id, config_path, started_at)
                    VALUES (?, ?, ?)
                """,
                    (experiment_id, config_path, get_current_timestamp()),
                )
                conn.commit()
                return True
        except sqlite3.Error as e:
            logger.error(f"Error recording experiment {experiment_id}: {e}")
            return False

    def finish_experiment(self, experiment_id: str, exit_code: int) -> bool:
        """Stamp an experiment with its finish time and exit code."""
        try:
            with sqlite3.connect(self.db_path) as conn:
                cursor = conn.execute(
                    """
                    UPDATE experiments SET finished_at = ?, exit_code = ?
                    WHERE id = ?
                """,
                    (get_current_timestamp(), exit_code, experiment_id),
                )
                conn.commit()
                return cursor.rowcount > 0
        except sqlite3.Error as e:
            logger.error(f"Error finishing experiment {experiment_id}: {e}")
            return False

    def insert_runs(self, experiment_id: str, rows: List[Dict[str, Any]]) -> int:
        """Insert report rows; returns how many were stored."""
        stored = 0
        try:
            with sqlite3.connect(self.db_path) as conn:
                for row in rows:
                    conn.execute(
                        """
                        INSERT OR REPLACE INTO runs
                        (experiment_id, trace, policy, geometry, cycles, leaked,
                         error, row_json, recorded_at)
                        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
                    """,
                        (
                            experiment_id,
                            row["trace"],
                            row["policy"],
                            row["geometry"],
                            row.get("cycles"),
                            bool(row.get("leaked")),
                            row.get("error"),
                            json.dumps(row, sort_keys=True),
                            get_current_timestamp(),
                        ),
                    )
                    stored += 1
                conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error inserting runs for {experiment_id}: {e}")
            return 0
        return stored

    def get_runs(self, experiment_id: str) -> List[Dict[str, Any]]:
        """Get the stored rows of one experiment, in report order."""
        try:
            with sqlite3.connect(self.db_path) as conn:
                cursor = conn.execute(
                    """
                    SELECT row_json FROM runs
                    WHERE experiment_id = ?
                    ORDER BY trace, policy, geometry
                """,
                    (experiment_id,),
                )
                return [json.loads(r[0]) for r in cursor.fetchall()]
        except sqlite3.Error as e:
            logger.error(f"Error reading runs for {experiment_id}: {e}")
            return []

    def get_leaked_runs(self, experiment_id: str) -> List[Dict[str, Any]]:
        """Get rows whose leak verdict was positive."""
        return [r for r in self.get_runs(experiment_id) if r.get("leaked")]

    def get_experiments(self) -> List[Dict[str, Any]]:
        """List recorded experiments, newest first."""
        try:
            with sqlite3.connect(self.db_path) as conn:
                conn.row_factory = sqlite3.Row
                cursor = conn.execute(
                    """
                    SELECT id, config_path, started_at, finished_at, exit_code
                    FROM experiments ORDER BY started_at DESC
                """
                )
                return [dict(row) for row in cursor.fetchall()]
        except sqlite3.Error as e:
            logger.error(f"Error listing experiments: {e}")
            return []
