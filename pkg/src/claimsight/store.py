"""Single-file embedded review store.

SQLite backs the case queue, the simulation clock, and an append-only
decision log. Reads are concurrent; writes go through one connection guarded
by a lock, and the UNIQUE constraint on decisions guarantees exactly one
concurrent duplicate post succeeds.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from pathlib import Path


class DuplicateDecisionError(RuntimeError):
    pass


class UnknownCaseError(KeyError):
    pass


_SCHEMA = """
CREATE TABLE IF NOT EXISTS clock (
    id INTEGER PRIMARY KEY CHECK (id = 1),
    week INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS cases (
    patient_id TEXT PRIMARY KEY,
    status TEXT NOT NULL DEFAULT 'pending',
    surfaced_at INTEGER NOT NULL,
    snapshot TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS decisions (
    patient_id TEXT PRIMARY KEY,
    call INTEGER NOT NULL,
    predicted_complication TEXT NOT NULL,
    note TEXT NOT NULL DEFAULT '',
    decided_at_week INTEGER NOT NULL
);
"""


class ReviewStore:
    def __init__(self, path: str | Path):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        # one shared connection: every access serializes through the lock
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            cur = self._conn.execute("SELECT week FROM clock WHERE id = 1")
            if cur.fetchone() is None:
                self._conn.execute("INSERT INTO clock (id, week) VALUES (1, 0)")
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    @property
    def clock_week(self) -> int:
        with self._lock:
            cur = self._conn.execute("SELECT week FROM clock WHERE id = 1")
            return int(cur.fetchone()[0])

    def advance_clock(self, weeks: int) -> int:
        if weeks < 0:
            raise ValueError("clock is monotone; weeks must be >= 0")
        with self._lock:
            week = self.clock_week + weeks
            self._conn.execute("UPDATE clock SET week = ? WHERE id = 1", (week,))
            self._conn.commit()
        return week

    def surface_case(self, patient_id: str, week: int, snapshot: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR IGNORE INTO cases (patient_id, status, surfaced_at, snapshot) "
                "VALUES (?, 'pending', ?, ?)",
                (patient_id, week, json.dumps(snapshot, sort_keys=True)),
            )
            self._conn.commit()

    def case(self, patient_id: str) -> dict | None:
        with self._lock:
            cur = self._conn.execute(
                "SELECT patient_id, status, surfaced_at, snapshot FROM cases WHERE patient_id = ?",
                (patient_id,),
            )
            row = cur.fetchone()
        if row is None:
            return None
        return {
            "patient_id": row[0],
            "status": row[1],
            "surfaced_at": row[2],
            "snapshot": json.loads(row[3]),
        }

    def list_cases(self, status: str | None = None, page: int = 0, page_size: int = 20) -> tuple[list[dict], int]:
        """Stable-ordered (surfaced_at, patient_id) page of cases."""
        where = ""
        params: tuple = ()
        if status is not None:
            where = "WHERE status = ?"
            params = (status,)
        with self._lock:
            total = self._conn.execute(f"SELECT COUNT(*) FROM cases {where}", params).fetchone()[0]
            cur = self._conn.execute(
                f"SELECT patient_id, status, surfaced_at, snapshot FROM cases {where} "
                "ORDER BY surfaced_at, patient_id LIMIT ? OFFSET ?",
                params + (page_size, page * page_size),
            )
            rows = [
                {
                    "patient_id": r[0],
                    "status": r[1],
                    "surfaced_at": r[2],
                    "snapshot": json.loads(r[3]),
                }
                for r in cur.fetchall()
            ]
        return rows, int(total)

    def record_decision(
        self,
        patient_id: str,
        call: bool,
        predicted_complication: str,
        note: str,
        week: int,
    ) -> None:
        """Append one decision; duplicates conflict, first writer wins."""
        with self._lock:
            exists = self._conn.execute(
                "SELECT 1 FROM cases WHERE patient_id = ?", (patient_id,)
            ).fetchone()
            if exists is None:
                raise UnknownCaseError(patient_id)
            try:
                self._conn.execute(
                    "INSERT INTO decisions (patient_id, call, predicted_complication, note, "
                    "decided_at_week) VALUES (?, ?, ?, ?, ?)",
                    (patient_id, int(call), predicted_complication, note, week),
                )
            except sqlite3.IntegrityError as exc:
                self._conn.rollback()
                raise DuplicateDecisionError(patient_id) from exc
            self._conn.execute(
                "UPDATE cases SET status = 'reviewed' WHERE patient_id = ?", (patient_id,)
            )
            self._conn.commit()

    def decision(self, patient_id: str) -> dict | None:
        with self._lock:
            cur = self._conn.execute(
                "SELECT patient_id, call, predicted_complication, note, decided_at_week "
                "FROM decisions WHERE patient_id = ?",
                (patient_id,),
            )
            row = cur.fetchone()
        if row is None:
            return None
        return {
            "patient_id": row[0],
            "call": bool(row[1]),
            "predicted_complication": row[2],
            "note": row[3],
            "decided_at_week": row[4],
        }
