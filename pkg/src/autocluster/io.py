"""Deterministic on-disk formats for feature matrices and JSON artifacts."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, SchemaError
from .indicators import FeatureMatrix


def fmt_float(v: float) -> str:
    # repr round-trips exactly and does not depend on locale
    return repr(float(v))


def write_features(m: FeatureMatrix, path) -> None:
    """CSV with a ``vehicle_id`` column followed by one column per feature."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", *m.feature_names])
        for vid, row in zip(m.vehicle_ids, m.values):
            w.writerow([int(vid), *(fmt_float(v) for v in row)])


def read_features(path, state: str = "rectified") -> FeatureMatrix:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"feature file not found: {path}") from None
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if not header or header[0] != "vehicle_id":
        raise SchemaError("vehicle_id")
    if not body:
        raise DataError(f"{path} has no rows")
    try:
        ids = np.array([int(r[0]) for r in body], dtype=np.int64)
        values = np.array([[float(x) for x in r[1:]] for r in body], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    if values.shape[1] != len(header) - 1:
        raise DataError(f"{path}: ragged rows")
    return FeatureMatrix(ids, tuple(header[1:]), values, state)


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path) -> None:
    """Sorted keys, non-finite floats as ``null``, trailing newline."""
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
