"""CSV and JSON export with fixed formatting, so equal inputs give equal bytes."""
from __future__ import annotations

import csv
import enum
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .trajectory import FilippovTrajectory

SCHEMA = 1
TRAJECTORY_HEADER = ("t", "x", "y", "z", "mode", "segment_index")


def fmt(v) -> str:
    """17 significant digits; round-trips every double."""
    if isinstance(v, (str, enum.Enum)):
        return v.value if isinstance(v, enum.Enum) else v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "{:.17g}".format(float(v))


def jsonable(obj):
    """Recursively convert numpy scalars/arrays, complex numbers and enums.

    Non-finite floats become None so the output is strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False,
                      ensure_ascii=False) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """RFC 4180 CSV (CRLF line ends) with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def trajectory_rows(traj: FilippovTrajectory, n_per_unit: float = 100.0):
    """Uniform samples of each segment, both segment ends included."""
    for i, seg in enumerate(traj.segments):
        ts, ys = seg.path.resample(n_per_unit)
        for t, y in zip(ts, ys):
            yield (t, y[0], y[1], y[2], seg.mode.value, i)


def write_trajectory_csv(traj: FilippovTrajectory, path, n_per_unit: float = 100.0) -> Path:
    return write_rows(path, TRAJECTORY_HEADER, trajectory_rows(traj, n_per_unit))


def trajectory_events(traj: FilippovTrajectory) -> dict:
    return {
        "events": [{"t": e.t, "kind": e.kind, "state": e.state} for e in traj.events],
        "segments": [{"index": i, "mode": s.mode, "t_start": s.t_start, "t_end": s.t_end,
                      "exit": s.exit_event, "detail": s.exit_detail}
                     for i, s in enumerate(traj.segments)],
    }


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
