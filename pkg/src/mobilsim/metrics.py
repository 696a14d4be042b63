"""Post-processing: travel times, regime split, detector passages, speed fields."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

FREE_FLOW = "free-flow"
CONGESTED = "congested"
REGIMES = (FREE_FLOW, CONGESTED)


def travel_time(record) -> Optional[float]:
    """Exit minus entry time; ``None`` while the vehicle is still on the road."""
    if record.exit_time is None:
        return None
    tt = record.exit_time - record.entry_time
    assert tt > 0, f"vehicle {record.id} left no later than it entered"
    return tt


def classify_regime(entry_time: float, config_or_onset) -> str:
    """Free-flow iff the vehicle entered strictly before the congestion onset."""
    onset = getattr(config_or_onset, "congestion_onset", config_or_onset)
    return FREE_FLOW if entry_time < onset else CONGESTED


def average_travel_time(records: Iterable, regime: Optional[str] = None, congestion_onset: float = 5400.0) -> float:
    """Mean travel time of the completed records, optionally restricted to one regime.

    Raises:
        ValueError: if no completed record matches.
    """
    if regime is not None and regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    times = [
        tt
        for r in records
        if (tt := travel_time(r)) is not None
        and (regime is None or classify_regime(r.entry_time, congestion_onset) == regime)
    ]
    if not times:
        raise ValueError(f"no completed vehicles in regime {regime or 'any'}")
    return math.fsum(times) / len(times)


def regime_averages(records: Iterable, congestion_onset: float) -> Dict[str, float]:
    """Average per regime; NaN where a regime has no completed vehicle."""
    records = list(records)
    out = {}
    for reg in REGIMES:
        try:
            out[reg] = average_travel_time(records, reg, congestion_onset)
        except ValueError:
            out[reg] = math.nan
    return out


def write_travel_times_csv(records: Iterable, path, congestion_onset: float, probes_only: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "entry", "exit", "travel_time", "regime", "probe"])
        for r in records:
            if probes_only and not r.probe:
                continue
            tt = travel_time(r)
            w.writerow(
                [
                    r.id,
                    f"{r.entry_time:.6g}",
                    "NA" if r.exit_time is None else f"{r.exit_time:.6g}",
                    "NA" if tt is None else f"{tt:.6g}",
                    classify_regime(r.entry_time, congestion_onset),
                    int(r.probe),
                ]
            )


# -- detectors


def detector_passages(trajectory: Mapping[str, np.ndarray], detectors: Sequence[float]) -> Dict[str, np.ndarray]:
    """Crossings of each detector, interpolated linearly between consecutive samples.

    A crossing of detector ``d`` happens between samples ``(t0, x0)`` and
    ``(t1, x1)`` of one vehicle when ``x0 <= d < x1``. The lane recorded is
    the one of the later sample. Rows are sorted by (id, detector).
    """
    det = np.asarray(detectors, dtype=float)
    cols = ("id", "detector", "t", "v", "lane")
    ids = np.asarray(trajectory["id"])
    if not len(ids) or not len(det):
        return _empty_passages(cols)
    order = np.lexsort((trajectory["t"], ids))
    ids = ids[order]
    t = np.asarray(trajectory["t"], dtype=float)[order]
    x = np.asarray(trajectory["x"], dtype=float)[order]
    v = np.asarray(trajectory["v"], dtype=float)[order]
    lane = np.asarray(trajectory["lane"])[order]

    same = ids[1:] == ids[:-1]
    k0 = np.nonzero(same)[0]
    k1 = k0 + 1
    lo = np.searchsorted(det, x[k0], side="left")
    hi = np.searchsorted(det, x[k1], side="left")
    count = np.maximum(hi - lo, 0)
    rep = np.repeat(np.arange(len(k0)), count)
    if not len(rep):
        return _empty_passages(cols)
    offsets = np.arange(len(rep)) - np.repeat(np.cumsum(count) - count, count)
    d_idx = lo[rep] + offsets
    a, b = k0[rep], k1[rep]
    frac = (det[d_idx] - x[a]) / (x[b] - x[a])
    out = {
        "id": ids[a],
        "detector": d_idx.astype(np.int64),
        "t": t[a] + frac * (t[b] - t[a]),
        "v": v[a] + frac * (v[b] - v[a]),
        "lane": lane[b],
    }
    o = np.lexsort((out["detector"], out["id"]))
    return {c: out[c][o] for c in cols}


def _empty_passages(cols):
    return {c: np.array([], dtype=float if c in ("t", "v") else np.int64) for c in cols}


def sort_passages(passages: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    o = np.lexsort((passages["detector"], passages["id"]))
    return {c: np.asarray(passages[c])[o] for c in passages}


# -- speed fields


@dataclass(frozen=True)
class SpeedField:
    """Mean speed per (space cell, time cell); NaN marks cells without samples."""

    dx: float
    dt: float
    values: np.ndarray  # shape (n_x, n_t)
    counts: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def _cells(q, width, extent):
    if extent is None:
        n = int(np.floor_divide(q.max(), width)) + 1 if len(q) else 0
        return np.floor_divide(q, width).astype(np.int64), n
    n = max(1, int(round(extent / width)))
    # the last cell absorbs the remainder of a non-divisible extent
    return np.minimum(np.floor_divide(q, width).astype(np.int64), n - 1), n


def speed_field(
    trajectory: Mapping[str, np.ndarray],
    dx: float,
    dt_agg: float,
    lane: Optional[int] = None,
    length: Optional[float] = None,
    duration: Optional[float] = None,
) -> SpeedField:
    """Space-time mean-speed matrix from a trajectory log.

    Cell (i, j) averages samples with ``x`` in ``[i*dx, (i+1)*dx)`` and ``t`` in
    ``[j*dt_agg, (j+1)*dt_agg)``. With ``length``/``duration`` given the grid has
    ``round(length/dx)`` rows (``round(duration/dt_agg)`` columns) and the last
    row/column also takes the remainder; otherwise it just covers the samples.
    ``lane=None`` pools all lanes.
    """
    if not dx > 0 or not dt_agg > 0:
        raise ValueError(f"dx and dt_agg must be > 0, got dx={dx}, dt_agg={dt_agg}")
    x = np.asarray(trajectory["x"], dtype=float)
    t = np.asarray(trajectory["t"], dtype=float)
    v = np.asarray(trajectory["v"], dtype=float)
    keep = (x >= 0) & (t >= 0)
    if length is not None:
        keep &= x < length
    if lane is not None:
        keep &= np.asarray(trajectory["lane"]) == lane
    x, t, v = x[keep], t[keep], v[keep]
    i, n_x = _cells(x, dx, length)
    j, n_t = _cells(t, dt_agg, duration)
    if duration is not None:
        keep = t <= duration
        i, j, v = i[keep], j[keep], v[keep]
    sums = np.zeros((n_x, n_t))
    counts = np.zeros((n_x, n_t), dtype=np.int64)
    np.add.at(sums, (i, j), v)
    np.add.at(counts, (i, j), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return SpeedField(float(dx), float(dt_agg), values, counts)


def speed_fields_by_lane(trajectory, dx, dt_agg, length=None, duration=None) -> Dict[int, SpeedField]:
    lanes = sorted(int(k) for k in np.unique(np.asarray(trajectory["lane"])))
    return {k: speed_field(trajectory, dx, dt_agg, k, length, duration) for k in lanes}


def write_speed_field_csv(field: SpeedField, path) -> None:
    """Rows are space cells (labelled by their lower edge), columns time cells."""
    n_x, n_t = field.values.shape
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x\\t"] + [f"{j * field.dt:.6g}" for j in range(n_t)])
        for i in range(n_x):
            w.writerow(
                [f"{i * field.dx:.6g}"]
                + ["NA" if math.isnan(val) else f"{val:.6g}" for val in field.values[i]]
            )


def read_trajectory_csv(path) -> Dict[str, np.ndarray]:
    """Parse a ``t,id,lane,x,v,a`` log.

    Raises:
        ValueError: on a wrong header or a malformed row (with its line number).
    """
    cols = ("t", "id", "lane", "x", "v", "a")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file, expected header {','.join(cols)}")
        if tuple(h.strip() for h in header) != cols:
            raise ValueError(f"{path}: line 1: expected header {','.join(cols)}, got {','.join(header)}")
        data = {c: [] for c in cols}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(cols):
                raise ValueError(f"{path}: line {lineno}: expected {len(cols)} fields, got {len(row)}")
            try:
                data["t"].append(float(row[0]))
                data["id"].append(int(row[1]))
                data["lane"].append(int(row[2]))
                data["x"].append(float(row[3]))
                data["v"].append(float(row[4]))
                data["a"].append(float(row[5]))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    ints = ("id", "lane")
    return {c: np.array(data[c], dtype=np.int64 if c in ints else float) for c in cols}


@dataclass(frozen=True)
class Standstill:
    """A contiguous stretch of samples with speed below the threshold.

    ``end`` is the time of the first sample at or above the threshold (the
    last sample if the vehicle never moved again); ``x`` and ``lane`` are taken
    at the first stopped sample.
    """

    start: float
    end: float
    x: float
    lane: int

    @property
    def duration(self) -> float:
        return self.end - self.start


def standstills(trajectory: Mapping[str, np.ndarray], vehicle_id: int, v_max: float = 0.5) -> list:
    sel = np.asarray(trajectory["id"]) == vehicle_id
    order = np.argsort(np.asarray(trajectory["t"])[sel], kind="stable")
    t = np.asarray(trajectory["t"], dtype=float)[sel][order]
    v = np.asarray(trajectory["v"], dtype=float)[sel][order]
    x = np.asarray(trajectory["x"], dtype=float)[sel][order]
    lane = np.asarray(trajectory["lane"])[sel][order]
    out = []
    k, n = 0, len(t)
    while k < n:
        if v[k] >= v_max:
            k += 1
            continue
        j = k
        while j + 1 < n and v[j + 1] < v_max:
            j += 1
        end = t[j + 1] if j + 1 < n else t[j]
        out.append(Standstill(float(t[k]), float(end), float(x[k]), int(lane[k])))
        k = j + 1
    return out
