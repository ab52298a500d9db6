"""CSV persistence with deterministic number formatting and atomic writes."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("t", "S", "rho", "mean_x", "var_x")


def fmt(v) -> str:
    """Shortest round-trip decimal for floats; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def trajectory_rows(traj):
    return zip(traj.times, traj.S, traj.rho, traj.mean_x, traj.var_x)


def write_trajectory(path, traj) -> Path:
    return write_csv(path, TRAJECTORY_COLUMNS, trajectory_rows(traj))


def snapshot_name(index: int, t: float) -> str:
    return f"snap_{index}_t{fmt(float(t))}.csv"


def write_snapshots(directory, traj) -> list:
    """One ``x,n`` CSV per recorded snapshot."""
    if traj.snapshots is None:
        return []
    directory = Path(directory)
    x = traj.domain.nodes
    return [
        write_csv(directory / snapshot_name(i, t), ("x", "n"), zip(x, n))
        for i, (t, n) in enumerate(zip(traj.snapshot_times, traj.snapshots))
    ]


def write_key_values(path, items) -> Path:
    return atomic_write_text(path, "".join(f"{k}={fmt(v)}\n" for k, v in items))


def read_columns(path) -> dict:
    """Read a numeric CSV into ``{column: array}``; empty cells become NaN."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataError(f"{path}: empty file")
    header, data = rows[0], rows[1:]
    if not data:
        raise EmptyDataError(f"{path}: no data rows")
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in data])
    return cols


class EmptyDataError(OSError):
    pass
