from __future__ import annotations

import csv
import json
import sqlite3
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .rates import RateFit, RateTable


RATE_TABLE = "slowfast_rate_log"
FIT_TABLE = "slowfast_fit_log"
RATE_CSV_COLUMNS = ["epsilon", "error", "stderr", "n_effective", "aborted"]
RATE_DB_COLUMNS = {
    "RunId": "TEXT",
    "Experiment": "TEXT",
    "Epsilon": "REAL",
    "Error": "REAL",
    "Stderr": "REAL",
    "NEffective": "INTEGER",
    "Aborted": "INTEGER",
    "MasterSeed": "TEXT",
}
FIT_DB_COLUMNS = {
    "RunId": "TEXT",
    "Experiment": "TEXT",
    "Slope": "REAL",
    "SlopeStderr": "REAL",
    "Intercept": "REAL",
    "RSquared": "REAL",
    "ReferenceSlope": "REAL",
    "PointsUsed": "INTEGER",
    "MasterSeed": "TEXT",
}


def emit(obj: dict[str, Any]) -> None:
    """One-line JSON event on stdout."""
    print(json.dumps(to_jsonable(obj), ensure_ascii=False, sort_keys=True), flush=True)


def to_jsonable(value: Any) -> Any:
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        number = float(value)
        return number if np.isfinite(number) else None
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def write_table_csv(csv_path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(columns))
        for row in rows:
            writer.writerow(["" if value is None else value for value in row])
    return csv_path


def write_rate_csv(csv_path: Path, table: RateTable) -> Path:
    return write_table_csv(
        csv_path,
        RATE_CSV_COLUMNS,
        (
            [repr(row.epsilon), repr(row.error), repr(row.stderr), row.n_effective, row.aborted]
            for row in table.rows
        ),
    )


def write_dataclass_csv(csv_path: Path, rows: Sequence[Any]) -> Path:
    if not rows:
        raise ValueError(f"No rows to write to {csv_path}.")
    columns = list(asdict(rows[0]).keys())
    return write_table_csv(csv_path, columns, ([asdict(row)[column] for column in columns] for row in rows))


def write_manifest(manifest_path: Path, manifest: dict[str, Any]) -> Path:
    if manifest_path.exists():
        raise FileExistsError(f"Run manifest already written: {manifest_path}")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(to_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest_path


def _connect(db_path: Path) -> sqlite3.Connection:
    connection = sqlite3.connect(db_path, timeout=5.0)
    connection.execute("PRAGMA journal_mode=WAL;")
    connection.execute("PRAGMA synchronous=NORMAL;")
    return connection


def _ensure_table(connection: sqlite3.Connection, table: str, columns: dict[str, str]) -> None:
    column_sql = ", ".join(f'"{name}" {kind}' for name, kind in columns.items())
    connection.execute(f'CREATE TABLE IF NOT EXISTS "{table}" ({column_sql});')
    existing_columns = {row[1] for row in connection.execute(f'PRAGMA table_info("{table}");').fetchall()}
    for column_name, column_type in columns.items():
        if column_name in existing_columns:
            continue
        connection.execute(f'ALTER TABLE "{table}" ADD COLUMN "{column_name}" {column_type};')


def ensure_results_db(db_path: Path) -> None:
    db_path.parent.mkdir(parents=True, exist_ok=True)
    connection = _connect(db_path)
    try:
        _ensure_table(connection, RATE_TABLE, RATE_DB_COLUMNS)
        _ensure_table(connection, FIT_TABLE, FIT_DB_COLUMNS)
        connection.commit()
    finally:
        connection.close()


def _insert(connection: sqlite3.Connection, table: str, columns: dict[str, str], row: Sequence[Any]) -> None:
    names = ", ".join(f'"{name}"' for name in columns)
    placeholders = ", ".join("?" for _ in columns)
    connection.execute(f'INSERT INTO "{table}" ({names}) VALUES ({placeholders});', list(row))


def log_rate_result(
    db_path: Path,
    run_id: str,
    table: RateTable,
    fit: RateFit | None,
    reference_slope: float | None,
    master_seed: int,
) -> None:
    ensure_results_db(db_path)
    connection = _connect(db_path)
    try:
        for row in table.rows:
            _insert(
                connection,
                RATE_TABLE,
                RATE_DB_COLUMNS,
                [run_id, table.experiment, row.epsilon, row.error, row.stderr, row.n_effective, row.aborted, str(master_seed)],
            )
        if fit is not None:
            _insert(
                connection,
                FIT_TABLE,
                FIT_DB_COLUMNS,
                [
                    run_id,
                    table.experiment,
                    fit.slope,
                    fit.slope_stderr,
                    fit.intercept,
                    fit.r_squared,
                    reference_slope,
                    len(fit.used),
                    str(master_seed),
                ],
            )
        connection.commit()
    finally:
        connection.close()
