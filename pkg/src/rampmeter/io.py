"""CSV readers and writers for trips, logs, space-time matrices and result tables.

Floats are written with ``repr`` so that files round-trip exactly and repeated
runs produce byte-identical output.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import TripRecord

TRIP_COLUMNS = ("origin", "destination", "depart_s", "arrive_s", "distance_km",
                "freeflow_time_s", "weight")
RAMP_LOG_COLUMNS = ("cycle_index", "ramp_id", "occupancy", "flow_command_vph", "rate", "queue_len")


def _num(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _open(path: Path):
    return open(path, "w", newline="", encoding="utf-8")


def write_trips(path: Path, trips: Iterable[TripRecord]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for tr in trips:
            w.writerow([tr.origin, tr.destination, _num(tr.depart_s), _num(tr.arrive_s),
                        _num(tr.distance_km), _num(tr.freeflow_time_s), _num(tr.weight)])


def read_trips(path: Path) -> list[TripRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIP_COLUMNS:
            raise ValueError(f"{path}: unexpected trip columns {reader.fieldnames}")
        for row in reader:
            out.append(TripRecord(
                origin=row["origin"], destination=row["destination"],
                depart_s=float(row["depart_s"]),
                arrive_s=float(row["arrive_s"]) if row["arrive_s"] else math.nan,
                distance_km=float(row["distance_km"]),
                freeflow_time_s=float(row["freeflow_time_s"]),
                weight=float(row["weight"])))
    return out


def write_ramp_log(path: Path, rows: Iterable[tuple]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAMP_LOG_COLUMNS)
        for cycle, rid, occ, q, r, queue in rows:
            w.writerow([cycle, rid, _num(occ), _num(q), _num(r), _num(queue)])


def write_spacetime(path: Path, times_s: Sequence[float], positions_m: Sequence[float],
                    matrix: np.ndarray) -> None:
    """Rows are time steps, columns are cells; the header carries cell positions (m)."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s"] + [_num(p) for p in positions_m])
        for t, row in zip(times_s, matrix):
            w.writerow([_num(t)] + [_num(v) for v in row])


def read_matrix(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (times, positions, matrix) from a space-time CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    positions = np.array([float(x) for x in rows[0][1:]])
    body = np.array([[float(x) for x in r] for r in rows[1:]])
    return body[:, 0], positions, body[:, 1:]


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(list(r))


def read_table(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cell(mean: float, std: float, digits: int) -> str:
    """Table entry in the ``mean (std)`` layout."""
    if mean is None or math.isnan(mean):
        return "n/a"
    return f"{mean:.{digits}f} ({std:.{digits}f})"
