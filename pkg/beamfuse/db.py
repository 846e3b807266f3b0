"""SQLite-backed ledger of benchmark runs."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

SQLITE_PREFIX = "sqlite://"


def resolve_sqlite_path(database_url: str) -> Path:
    """Translate a BEAMFUSE_DATABASE_URL into a filesystem path."""
    if not database_url:
        raise ValueError("database URL must not be empty")

    if database_url.startswith(SQLITE_PREFIX):
        raw_path = database_url[len(SQLITE_PREFIX):]
        # Allow sqlite:///path/to/file and sqlite://path/to/file styles.
        if raw_path.startswith("/"):
            raw_path = raw_path[1:]
        path = Path(raw_path)
    else:
        path = Path(database_url)

    if not path.is_absolute():
        path = Path.cwd() / path

    return path.expanduser().resolve()


@dataclass
class ResultStore:
    """Thin wrapper around sqlite3 for benchmark runs and their rows."""

    path: Path

    def connect(self) -> sqlite3.Connection:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        return sqlite3.connect(self.path)

    def initialize(self) -> None:
        with self.connect() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    executed_at TEXT NOT NULL,
                    benchmark TEXT NOT NULL,
                    status TEXT NOT NULL,
                    notes TEXT
                )
                """)
            conn.execute("""
                CREATE TABLE IF NOT EXISTS bench_rows (
                    run_id INTEGER NOT NULL REFERENCES runs(id),
                    position INTEGER NOT NULL,
                    payload TEXT NOT NULL,
                    PRIMARY KEY (run_id, position)
                )
                """)
            conn.commit()

    def add_run(self,
                executed_at: str,
                benchmark: str,
                status: str,
                notes: str | None,
                rows: Sequence[Dict[str, object]] = ()) -> int:
        """Store one run and its result rows; returns the run id."""
        with self.connect() as conn:
            cursor = conn.execute(
                "INSERT INTO runs (executed_at, benchmark, status, notes) VALUES (?, ?, ?, ?)",
                (executed_at, benchmark, status, notes),
            )
            run_id = int(cursor.lastrowid)
            conn.executemany(
                "INSERT INTO bench_rows (run_id, position, payload) VALUES (?, ?, ?)",
                [(run_id, position, json.dumps(row))
                 for position, row in enumerate(rows)],
            )
            conn.commit()
        return run_id

    def recent_runs(
            self,
            limit: int = 10) -> Iterable[Tuple[int, str, str, str, str | None]]:
        with self.connect() as conn:
            cursor = conn.execute(
                "SELECT id, executed_at, benchmark, status, notes FROM runs ORDER BY id DESC LIMIT ?",
                (limit, ),
            )
            yield from cursor.fetchall()

    def fetch_rows(self, run_id: int) -> List[Dict[str, object]]:
        with self.connect() as conn:
            cursor = conn.execute(
                "SELECT payload FROM bench_rows WHERE run_id = ? ORDER BY position",
                (run_id, ),
            )
            return [json.loads(payload) for (payload, ) in cursor.fetchall()]

    def export_to_xlsx(self, destination: Path) -> None:
        """Export the run ledger plus one sheet of rows per benchmark."""
        try:
            from openpyxl import Workbook
        except ImportError as exc:  # pragma: no cover - dependency error surfaced at call sites
            raise RuntimeError(
                "openpyxl is required to export results; please install it via `pip install openpyxl`."
            ) from exc

        with self.connect() as conn:
            cursor = conn.execute(
                "SELECT id, executed_at, benchmark, status, notes FROM runs ORDER BY id")
            columns = [description[0] for description in cursor.description]
            runs = cursor.fetchall()

        destination.parent.mkdir(parents=True, exist_ok=True)
        workbook = Workbook()
        worksheet = workbook.active
        worksheet.title = "runs"
        worksheet.append(columns)
        for run in runs:
            worksheet.append(list(run))

        sheets: Dict[str, object] = {}
        for run_id, _, name, _, _ in runs:
            for row in self.fetch_rows(run_id):
                sheet = sheets.get(name)
                if sheet is None:
                    sheet = workbook.create_sheet(title=name[:31])
                    sheet.append(["run_id", *row.keys()])
                    sheets[name] = sheet
                sheet.append([run_id, *row.values()])
        workbook.save(destination)
