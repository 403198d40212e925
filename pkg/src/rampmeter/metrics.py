"""Efficiency panel and fairness statistics computed from trip records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dynamics import TripRecord


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EfficiencyReport:
    departed: float
    arrived: float
    arrival_rate: float  # percent; nan without departures
    total_travel_time_h: float
    total_distance_km: float
    total_delay_h: float
    avg_speed_kmh: float
    avg_delay_s_per_veh: float
    unfinished: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class FairnessReport:
    per_ramp_avg_delay: Mapping[str, float]
    harsanyian: float
    gini: float
    rawlsian_max: float
    aristotelian: float


EFFICIENCY_FIELDS = ("departed", "arrived", "arrival_rate", "total_travel_time_h",
                     "total_distance_km", "total_delay_h", "avg_speed_kmh",
                     "avg_delay_s_per_veh", "unfinished")
FAIRNESS_FIELDS = ("harsanyian", "gini", "rawlsian_max", "aristotelian")


def _in_window(trips: Iterable[TripRecord], window) -> list[TripRecord]:
    if window is None:
        return list(trips)
    t0, t1 = window
    return [tr for tr in trips if t0 <= tr.depart_s < t1]


def efficiency(trips: Sequence[TripRecord], window=None) -> EfficiencyReport:
    """Weighted totals over trips departing in ``[t0, t1)``.

    Unfinished trips count as departed only.  Ratios are nan when undefined.
    """
    sel = _in_window(trips, window)
    departed = math.fsum(tr.weight for tr in sel)
    done = [tr for tr in sel if tr.finished]
    arrived = math.fsum(tr.weight for tr in done)
    tt = math.fsum(tr.weight * tr.travel_time_s for tr in done)
    dist = math.fsum(tr.weight * tr.distance_km for tr in done)
    delay = math.fsum(tr.weight * tr.delay_s for tr in done)
    return EfficiencyReport(
        departed=departed,
        arrived=arrived,
        arrival_rate=100.0 * arrived / departed if departed > 0 else math.nan,
        total_travel_time_h=tt / 3600.0,
        total_distance_km=dist,
        total_delay_h=delay / 3600.0,
        avg_speed_kmh=dist / (tt / 3600.0) if tt > 0 else math.nan,
        avg_delay_s_per_veh=delay / arrived if arrived > 0 else math.nan,
        unfinished=departed - arrived,
    )


def ramp_demand(trips: Sequence[TripRecord], window=None,
                ramps: Iterable[str] | None = None) -> dict[str, float]:
    """Originating vehicle-equivalents per origin over the window (finished or not)."""
    out: dict[str, list[float]] = {}
    for tr in _in_window(trips, window):
        out.setdefault(tr.origin, []).append(tr.weight)
    totals = {k: math.fsum(v) for k, v in out.items()}
    if ramps is not None:
        keep = set(ramps)
        totals = {k: v for k, v in totals.items() if k in keep}
    return dict(sorted(totals.items()))


def per_ramp_avg_delay(trips: Sequence[TripRecord], window=None, min_demand: float = 0.0,
                       ramps: Iterable[str] | None = None) -> dict[str, float]:
    """Weighted mean whole-trip delay of finished trips, keyed by origin ramp.

    Ramps whose originating demand in the window is below ``min_demand`` are
    left out entirely.
    """
    if min_demand < 0:
        raise MetricsError("demand threshold must be non-negative")
    demand = ramp_demand(trips, window, ramps)
    sums: dict[str, list[tuple[float, float]]] = {}
    for tr in _in_window(trips, window):
        if tr.finished and tr.origin in demand:
            sums.setdefault(tr.origin, []).append((tr.weight, tr.delay_s))
    out = {}
    for rid, tot in demand.items():
        if tot < min_demand or rid not in sums:
            continue
        w = math.fsum(x for x, _ in sums[rid])
        out[rid] = math.fsum(x * d for x, d in sums[rid]) / w
    return out


def gini(values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted Gini coefficient (mean absolute difference over twice the mean).

    Computed in O(n log n) from sorted values.  Returns 0 when the weighted
    mean is 0.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1:
        raise MetricsError("values and weights must be matching 1-d sequences")
    if np.any(x < 0):
        raise MetricsError("Gini needs non-negative values")
    if np.any(w < 0) or not np.any(w > 0):
        raise MetricsError("need non-negative weights with a positive total")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    total = w.sum()
    mu = (w * x).sum() / total
    if mu == 0:
        return 0.0
    cum = np.cumsum(w)
    # sum_i sum_j w_i w_j |x_i - x_j| = 2 sum_i w_i x_i (2 W_<=i - w_i - W)
    pair_sum = 2.0 * np.sum(w * x * (2.0 * cum - w - total))
    return float(max(pair_sum / (2.0 * total * total * mu), 0.0))


def fairness(per_ramp: Mapping[str, float], demands: Mapping[str, float]) -> FairnessReport:
    """The four fairness notions over per-ramp average delays."""
    if not per_ramp:
        raise MetricsError("no ramps to assess")
    ids = sorted(per_ramp)
    missing = [r for r in ids if r not in demands]
    if missing:
        raise MetricsError(f"no demand given for ramps {missing}")
    d = np.array([per_ramp[r] for r in ids])
    q = np.array([demands[r] for r in ids], dtype=float)
    arist = math.fsum(q * d) / math.fsum(q) if q.sum() > 0 else math.nan
    return FairnessReport(
        per_ramp_avg_delay={r: per_ramp[r] for r in ids},
        harsanyian=math.fsum(d) / len(d),
        gini=gini(np.maximum(d, 0.0)),
        rawlsian_max=float(d.max()),
        aristotelian=arist,
    )


def fairness_from_trips(trips: Sequence[TripRecord], window=None, min_share: float = 0.005,
                        ramps: Iterable[str] | None = None) -> FairnessReport:
    """Fairness over on-ramps, dropping those below ``min_share`` of total ramp demand."""
    demand = ramp_demand(trips, window, ramps)
    threshold = min_share * math.fsum(demand.values())
    per_ramp = per_ramp_avg_delay(trips, window, threshold, ramps)
    return fairness(per_ramp, demand)


@dataclass(frozen=True)
class DistanceDelayReport:
    per_bin: Mapping[tuple[float, float], float | None]  # None marks an empty bin
    gini: float
    rejected: float  # weight of zero-distance trips


def relative_delay_by_distance(trips: Sequence[TripRecord], bin_edges_km: Sequence[float],
                               window=None) -> DistanceDelayReport:
    """Weighted mean delay per kilometre of finished trips, by trip-length bin."""
    edges = [float(e) for e in bin_edges_km]
    if len(edges) < 2 or any(e < 0 for e in edges) or any(b <= a for a, b in zip(edges, edges[1:])):
        raise MetricsError("bin edges must be sorted, non-negative and at least two")
    acc: dict[int, list[tuple[float, float]]] = {}
    rejected = 0.0
    for tr in _in_window(trips, window):
        if not tr.finished:
            continue
        if tr.distance_km <= 0:
            rejected += tr.weight
            continue
        k = int(np.searchsorted(edges, tr.distance_km, side="right")) - 1
        if k < 0 or k >= len(edges) - 1:
            if tr.distance_km == edges[-1]:
                k = len(edges) - 2
            else:
                continue
        acc.setdefault(k, []).append((tr.weight, tr.delay_s / tr.distance_km))
    per_bin = {}
    for k in range(len(edges) - 1):
        vals = acc.get(k)
        if vals:
            w = math.fsum(a for a, _ in vals)
            per_bin[(edges[k], edges[k + 1])] = math.fsum(a * b for a, b in vals) / w
        else:
            per_bin[(edges[k], edges[k + 1])] = None
    present = [v for v in per_bin.values() if v is not None]
    g = gini(np.maximum(present, 0.0)) if present else math.nan
    return DistanceDelayReport(per_bin=per_bin, gini=g, rejected=rejected)
