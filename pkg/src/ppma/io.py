"""File formats: field snapshots, diagnostics CSV and JSON summaries."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ParameterError

SNAPSHOT_MAGIC = "ppma-field"
SNAPSHOT_VERSION = "v1"
SUMMARY_SCHEMA = "ppma-summary v1"


def write_snapshot(path, values, n, p, m, mode):
    """Header ``ppma-field v1 n p m mode kind`` then little-endian float64 data.

    Axis order is ``x_1..x_n, y_1..y_n`` (row-major); complex values are
    written as interleaved ``re, im`` pairs.
    """
    values = np.asarray(values)
    naxes = 2 * n if mode == "full" else n
    if values.shape != (m,) * naxes:
        raise ParameterError(f"snapshot shape {values.shape} does not match m={m}, mode={mode}")
    kind = "complex" if np.iscomplexobj(values) else "real"
    data = values.astype("<c16" if kind == "complex" else "<f8")
    with open(path, "wb") as fh:
        fh.write(f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {n} {p} {m} {mode} {kind}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_snapshot(path):
    """Return ``(header, values)`` where ``header`` has keys n, p, m, mode, kind."""
    with open(path, "rb") as fh:
        line = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(line) != 7 or line[0] != SNAPSHOT_MAGIC or line[1] != SNAPSHOT_VERSION:
        raise ParameterError(f"{path}: not a {SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} file")
    n, p, m = (int(v) for v in line[2:5])
    mode, kind = line[5], line[6]
    naxes = 2 * n if mode == "full" else n
    dtype = "<c16" if kind == "complex" else "<f8"
    values = np.frombuffer(payload, dtype=dtype)
    if values.size != m ** naxes:
        raise ParameterError(f"{path}: expected {m ** naxes} values, found {values.size}")
    header = {"n": n, "p": p, "m": m, "mode": mode, "kind": kind}
    return header, values.reshape((m,) * naxes).astype(complex if kind == "complex" else float)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload):
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
