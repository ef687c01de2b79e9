"""CSV input parsing and deterministic artifact writing.

Input files are plain CSV with a header. Datasets use columns y and
w1..wp; replicate files use column pairs wj_rep1 / wj_rep2 for every
coordinate measured twice. Output artifacts are written atomically
(temp file + rename) and are byte-identical across reruns of the same
invocation: CSV artifacts carry the resolved configuration in a leading
"# config:" comment line, JSON artifacts embed it under "config".
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import re
import tempfile

import numpy as np

from .data import Dataset, MeasurementErrorSpec
from .errors import DataError, MissingColumn, ParseError

_W_COLUMN = re.compile(r"w([1-9][0-9]*)")
_REP_COLUMN = re.compile(r"w([1-9][0-9]*)_rep([12])")


def _read_rows(path):
    try:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [cell.strip() for cell in rows[0]]
    return header, rows[1:]


def _parse_cell(row_values, row_number: int, position: int, column: str) -> float:
    try:
        value = float(row_values[position])
    except (ValueError, IndexError):
        raise ParseError(row_number, column,
                         f"could not parse {row_values[position]!r}"
                         if position < len(row_values) else "missing field") from None
    if not math.isfinite(value):
        raise ParseError(row_number, column, f"non-finite value {value!r}")
    return value


def load_dataset(path) -> Dataset:
    """Read a dataset CSV with columns y and w1..wp.

    Row numbers in errors are 1-based data rows (header excluded). Extra
    columns are ignored; a gap in the w1..wp sequence is an error.
    """
    header, body = _read_rows(path)
    if "y" not in header:
        raise MissingColumn("y")
    y_pos = header.index("y")
    w_pos = {}
    for pos, name in enumerate(header):
        match = _W_COLUMN.fullmatch(name)
        if match:
            w_pos[int(match.group(1))] = pos
    if not w_pos:
        raise MissingColumn("w1")
    p = max(w_pos)
    for j in range(1, p + 1):
        if j not in w_pos:
            raise MissingColumn(f"w{j}")
    n = len(body)
    y = np.empty(n)
    w = np.empty((n, p))
    for i, row in enumerate(body):
        number = i + 1
        y[i] = _parse_cell(row, number, y_pos, "y")
        for j in range(1, p + 1):
            w[i, j - 1] = _parse_cell(row, number, w_pos[j], f"w{j}")
    return Dataset(y=y, w=w)


def save_dataset(data: Dataset, path) -> None:
    """Write a dataset CSV that load_dataset reads back exactly."""
    buffer = _io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["y"] + [f"w{j}" for j in range(1, data.p + 1)])
    for i in range(data.n):
        writer.writerow([repr(float(data.y[i]))] +
                        [repr(float(v)) for v in data.w[i]])
    _atomic_write(path, buffer.getvalue())


def error_spec_from_replicates(path, n_coords: int | None = None) -> MeasurementErrorSpec:
    """Estimate a diagonal noise covariance from paired remeasurements.

    The file needs columns wj_rep1 and wj_rep2 for every coordinate j
    measured twice; the estimate for that coordinate is half the mean
    squared replicate difference. Coordinates without replicate columns
    are treated as error-free. n_coords fixes the total coordinate count
    (defaults to the largest j present).
    """
    header, body = _read_rows(path)
    pairs = {}
    for pos, name in enumerate(header):
        match = _REP_COLUMN.fullmatch(name)
        if match:
            j, rep = int(match.group(1)), int(match.group(2))
            pairs.setdefault(j, {})[rep] = pos
    if not pairs:
        raise MissingColumn("w1_rep1", "no replicate column pairs found")
    for j, reps in sorted(pairs.items()):
        for rep in (1, 2):
            if rep not in reps:
                raise MissingColumn(f"w{j}_rep{rep}")
    p = max(pairs) if n_coords is None else int(n_coords)
    if p < max(pairs):
        raise DataError(
            f"n_coords={p} but replicate columns go up to w{max(pairs)}"
        )
    if not body:
        raise DataError(f"{path} has no data rows")
    n = len(body)
    cov = np.zeros((p, p))
    for j, reps in sorted(pairs.items()):
        total = 0.0
        for i, row in enumerate(body):
            r1 = _parse_cell(row, i + 1, reps[1], f"w{j}_rep1")
            r2 = _parse_cell(row, i + 1, reps[2], f"w{j}_rep2")
            total += (r1 - r2) ** 2
        cov[j - 1, j - 1] = total / (2.0 * n)
    return MeasurementErrorSpec.from_covariance(cov)


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sisimex-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows, config: dict) -> None:
    """Write a CSV artifact with the config echoed in a comment line."""
    buffer = _io.StringIO()
    buffer.write("# config: " + json.dumps(config, sort_keys=True) + "\r\n")
    writer = csv.writer(buffer)
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([_format_value(v) for v in row])
    _atomic_write(path, buffer.getvalue())


def write_json(path, payload: dict) -> None:
    """Write a JSON artifact with stable key order."""
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def jsonable(value):
    """Recursively convert numpy containers to JSON-encodable values."""
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        out = float(value)
        return out if math.isfinite(out) else None
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {key: jsonable(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value
