"""Curve CSV format and delimited report writers.

Curve files::

    # optional header block, one "# key: value" per line
    id,stratum,<t_1>,...,<t_d>
    <unit id>,<stratum label>,<value or empty>,...

An empty cell means the value was not observed (r = 0).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .grid_kernel import TimeGrid


@dataclass
class CurveTable:
    grid: TimeGrid
    ids: list
    strata: np.ndarray
    values: np.ndarray
    observed: np.ndarray
    header: dict


def fmt(x) -> str:
    """Shortest round-trip text for a float."""
    return repr(float(x))


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def header_lines(meta: dict) -> str:
    return "".join(f"# {k}: {meta[k]}\n" for k in meta)


def read_curves(path) -> CurveTable:
    """Parse a curve CSV; raises :class:`InputError` naming the offending line."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    header = {}
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
            continue
        rows.append((lineno, next(csv.reader([line]))))
    if not rows:
        raise InputError(f"{path}: no data")
    lineno, first = rows[0]
    if len(first) < 4 or first[0].strip().lower() != "id" or first[1].strip().lower() != "stratum":
        raise InputError(f"{path}, line {lineno}: expected 'id,stratum,t_1,...,t_d' header row")
    try:
        instants = np.array([float(c) for c in first[2:]])
        grid = TimeGrid.from_instants(instants)
    except (ValueError, Exception) as exc:
        raise InputError(f"{path}, line {lineno}: bad time instants ({exc})") from exc
    width = len(first)
    ids, strata, values = [], [], []
    for lineno, row in rows[1:]:
        if len(row) != width:
            raise InputError(
                f"{path}, line {lineno}: expected {width} cells, found {len(row)} (ragged row)"
            )
        try:
            strata.append(int(row[1]))
            values.append([float(c) if c.strip() != "" else np.nan for c in row[2:]])
        except ValueError as exc:
            raise InputError(f"{path}, line {lineno}: {exc}") from exc
        ids.append(row[0])
    if not ids:
        raise InputError(f"{path}: no unit rows")
    values = np.array(values, dtype=float)
    if np.any(np.isinf(values)):
        raise InputError(f"{path}: infinite values are not allowed")
    return CurveTable(grid, ids, np.array(strata, dtype=int), values, ~np.isnan(values), header)


def write_curves(path, grid, ids, strata, values, observed=None, meta=None):
    buf = io.StringIO()
    if meta:
        buf.write(header_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "stratum"] + [fmt(t) for t in grid.instants])
    for i, (uid, lab) in enumerate(zip(ids, strata)):
        row = values[i]
        obs = np.ones(row.shape, bool) if observed is None else observed[i]
        w.writerow([uid, int(lab)] + [fmt(v) if o else "" for v, o in zip(row, obs)])
    _write_text(path, buf.getvalue())


def write_table(path, columns, rows, meta=None):
    buf = io.StringIO()
    if meta:
        buf.write(header_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    _write_text(path, buf.getvalue())


def write_json(path, payload):
    _write_text(path, json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc
