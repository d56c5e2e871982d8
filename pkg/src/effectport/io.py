"""File formats: study CSV, aggregated GLM CSV, JSON payloads, atomic writes."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataValidationError
from .glm import Dataset
from .meta import StudyRow

SCHEMA_VERSION = "1"
STUDY_COLUMNS = ("meta_id", "study_id", "t_events", "t_total", "c_events", "c_total")
AGGREGATED_COLUMNS = ("pattern_id", "X", "Z", "events", "trials")


def _integral(value: str, column: str, line: int) -> int:
    try:
        number = float(value)
    except ValueError:
        raise DataValidationError(
            f"line {line}: {column} is not a number: {value!r}"
        ) from None
    if not number.is_integer() or number < 0:
        raise DataValidationError(
            f"line {line}: {column} must be a nonnegative integer, got {value!r}"
        )
    return int(number)


def read_study_csv(path: str | Path) -> list[StudyRow]:
    """Read `meta_id,study_id,t_events,t_total,c_events,c_total` rows."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: no studies (empty file)")
        missing = set(STUDY_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataValidationError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for line, record in enumerate(reader, start=2):
            try:
                rows.append(
                    StudyRow(
                        meta_id=record["meta_id"],
                        study_id=record["study_id"],
                        t_events=_integral(record["t_events"], "t_events", line),
                        t_total=_integral(record["t_total"], "t_total", line),
                        c_events=_integral(record["c_events"], "c_events", line),
                        c_total=_integral(record["c_total"], "c_total", line),
                    )
                )
            except DataValidationError as err:
                raise DataValidationError(f"{path}: {err}") from None
    if not rows:
        raise DataValidationError(f"{path}: no studies")
    seen = set()
    for row in rows:
        key = (row.meta_id, row.study_id)
        if key in seen:
            raise DataValidationError(f"{path}: duplicate study {key}")
        seen.add(key)
    return rows


def write_study_csv(rows: Sequence[StudyRow], path: str | Path) -> None:
    records = [
        {
            "meta_id": r.meta_id,
            "study_id": r.study_id,
            "t_events": int(r.t_events),
            "t_total": int(r.t_total),
            "c_events": int(r.c_events),
            "c_total": int(r.c_total),
        }
        for r in rows
    ]
    write_csv_atomic(records, STUDY_COLUMNS, path)


def read_aggregated_csv(path: str | Path) -> Dataset:
    """Read `pattern_id,X,Z,events,trials` rows into a Dataset."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataValidationError(f"{path}: no records (empty file)")
        missing = set(AGGREGATED_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataValidationError(f"{path}: missing columns {sorted(missing)}")
        records = []
        for line, record in enumerate(reader, start=2):
            try:
                covariates = {
                    "X": float(record["X"]),
                    "Z": float(record["Z"]),
                }
            except ValueError:
                raise DataValidationError(
                    f"{path}: line {line}: X and Z must be numeric"
                ) from None
            events = _integral(record["events"], "events", line)
            trials = _integral(record["trials"], "trials", line)
            if events > trials:
                raise DataValidationError(
                    f"{path}: line {line}: events exceed trials"
                )
            if trials == 0:
                raise DataValidationError(f"{path}: line {line}: zero trials")
            records.append((covariates, events, trials))
    if not records:
        raise DataValidationError(f"{path}: no records")
    return Dataset.from_aggregated(records)


def dataset_from_studies(studies: Sequence[StudyRow]) -> Dataset:
    """Expand study rows to covariate form: X is the arm, Z the study index.

    Intended for small fixed designs (for example two strata treated as
    studies); larger corpora should use the aggregated CSV directly.
    """
    records = []
    for index, study in enumerate(studies):
        records.append(({"X": 1.0, "Z": float(index)}, study.t_events, study.t_total))
        records.append(({"X": 0.0, "Z": float(index)}, study.c_events, study.c_total))
    return Dataset.from_aggregated(records)


def _atomic_write_text(text: str, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor, temp_name = tempfile.mkstemp(
        dir=path.parent, prefix=path.name, suffix=".tmp"
    )
    try:
        with os.fdopen(descriptor, "w", newline="") as handle:
            handle.write(text)
        os.replace(temp_name, path)
    except BaseException:
        os.unlink(temp_name)
        raise


def write_json_atomic(payload: Mapping, path: str | Path) -> None:
    _atomic_write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", path)


def write_csv_atomic(
    records: Iterable[Mapping], fieldnames: Sequence[str], path: str | Path
) -> None:
    import io as _io

    buffer = _io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record)
    _atomic_write_text(buffer.getvalue(), path)


def write_text_atomic(text: str, path: str | Path) -> None:
    _atomic_write_text(text, path)


def result_payload(tool_version: str, config: Mapping, result: Mapping) -> dict:
    """Standard output envelope: schema version, tool identity, run config."""
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "effectport", "version": tool_version},
        "config": dict(config),
        "result": dict(result),
    }
