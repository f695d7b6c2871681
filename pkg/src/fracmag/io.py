"""Atomic file output: field CSVs with a fixed header and JSON run reports."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.16e"


def atomic_write_text(path, text: str):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_csv(grid, columns: dict) -> str:
    """Header ``x0[,x1],<columns...>,in_omega``; one row per node."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    coords = [f"x{d}" for d in range(grid.dim)]
    writer.writerow(coords + list(columns) + ["in_omega"])
    data = [grid.points[:, d] for d in range(grid.dim)] + [np.asarray(v, dtype=float) for v in columns.values()]
    for i in range(grid.n_nodes):
        writer.writerow([FLOAT_FMT % col[i] for col in data] + [int(grid.interior[i])])
    return buf.getvalue()


def write_field_csv(path, grid, columns: dict):
    atomic_write_text(path, field_csv(grid, columns))


def read_field_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[c]) for r in body]) for c, name in enumerate(header)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(path, report: dict):
    atomic_write_text(path, json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
