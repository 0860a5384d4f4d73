"""CSV readers/writers for user-supplied or generated raw signals.

Schemas (header row required):

* ECG: ``t_seconds,amplitude``
* accelerometer: ``t_seconds,ax,ay,az``
* interbeat intervals: ``ibi_ms``

Readers reject NaN/inf and unparsable cells with the 1-based data row number.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .signals import EcgTrace, IbiSequence

ECG_COLUMNS = ("t_seconds", "amplitude")
ACCEL_COLUMNS = ("t_seconds", "ax", "ay", "az")
IBI_COLUMNS = ("ibi_ms",)


def _read_columns(path, columns) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(header) != tuple(columns):
            raise DataError(f"{path}: expected header {','.join(columns)}, got {','.join(header)}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise DataError(f"{path}: row {row_no}: expected {len(columns)} fields, got {len(row)}")
            values = []
            for name, cell in zip(columns, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {row_no}: {name}={cell!r} is not a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {row_no}: {name} is not finite ({cell.strip()})")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _rate_from_time(t: np.ndarray, path) -> float:
    if len(t) < 2:
        raise DataError(f"{path}: need at least 2 samples to infer a sample rate")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DataError(f"{path}: t_seconds must be strictly increasing")
    return float(1.0 / np.median(dt))


def read_ecg_csv(path, lead_name: str = "II") -> EcgTrace:
    data = _read_columns(path, ECG_COLUMNS)
    return EcgTrace(data[:, 1], _rate_from_time(data[:, 0], path), lead_name)


def read_accel_csv(path):
    """Returns ``(ax, ay, az, sample_rate_hz)``; the rate is inferred from ``t_seconds``."""
    data = _read_columns(path, ACCEL_COLUMNS)
    return data[:, 1], data[:, 2], data[:, 3], _rate_from_time(data[:, 0], path)


def read_ibi_csv(path) -> IbiSequence:
    return IbiSequence(_read_columns(path, IBI_COLUMNS)[:, 0])


def _write(path, columns, rows, fmt):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt % v for v in row) + "\n")
    return path


def write_ecg_csv(path, ecg: EcgTrace):
    t = np.arange(len(ecg.samples)) / ecg.sample_rate_hz
    return _write(path, ECG_COLUMNS, zip(t, ecg.samples), "%.6f")


def write_accel_csv(path, ax, ay, az, sample_rate_hz: float):
    t = np.arange(len(ax)) / sample_rate_hz
    return _write(path, ACCEL_COLUMNS, zip(t, ax, ay, az), "%.6f")


def write_ibi_csv(path, ibis):
    values = ibis.intervals_ms if isinstance(ibis, IbiSequence) else np.asarray(ibis, dtype=float)
    return _write(path, IBI_COLUMNS, ((v,) for v in values), "%.3f")


def write_records_csv(path, records: list[dict]):
    """Flat dict records (calories, wearable days, PHQ) with keys as header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(records[0].keys())
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
    return path
