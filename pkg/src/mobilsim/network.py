"""Static road topology and neighbor queries against a vehicle population."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from mobilsim.core import DEFAULT_LENGTH, Neighbor, NeighborView, Vehicle


@dataclass(frozen=True)
class LaneSpec:
    """Longitudinal extent of one lane.

    A lane index may carry several disjoint extents (e.g. the acceleration
    lanes of two on-ramps share the auxiliary index).
    """

    index: int
    start_x: float
    end_x: float

    def __post_init__(self):
        if not self.start_x < self.end_x:
            raise ValueError(f"lane {self.index}: start_x must be < end_x")

    def covers(self, x: float) -> bool:
        return self.start_x <= x <= self.end_x


@dataclass(frozen=True)
class RampSpec:
    kind: str  # "on" | "off"
    attach_lane: int
    position_x: float
    segment: int

    def __post_init__(self):
        if self.kind not in ("on", "off"):
            raise ValueError(f"ramp kind must be 'on' or 'off', got {self.kind!r}")


@dataclass
class RoadNetwork:
    total_length: float
    lanes: List[LaneSpec]
    ramps: List[RampSpec] = field(default_factory=list)
    detectors: List[float] = field(default_factory=list)
    segment_count: int = 0
    offramp_window: float = 500.0

    def __post_init__(self):
        idx = sorted({ln.index for ln in self.lanes})
        if idx != list(range(len(idx))):
            raise ValueError(f"lane indices must be contiguous from 0, got {idx}")
        if not any(ln.start_x <= 0 and ln.end_x >= self.total_length for ln in self.lanes):
            raise ValueError("at least one lane must span the full road length")
        for k in idx:
            segs = sorted((ln for ln in self.lanes if ln.index == k), key=lambda ln: ln.start_x)
            for s1, s2 in zip(segs, segs[1:]):
                if s2.start_x <= s1.end_x:
                    raise ValueError(f"lane {k}: overlapping extents")
        if any(d2 <= d1 for d1, d2 in zip(self.detectors, self.detectors[1:])):
            raise ValueError("detector positions must be strictly increasing")
        for r in self.ramps:
            if r.attach_lane not in idx:
                raise ValueError(f"ramp at {r.position_x} references missing lane {r.attach_lane}")
            if not 0 <= r.position_x <= self.total_length:
                raise ValueError(f"ramp position {r.position_x} outside the road")
        self._build_tables()

    def _build_tables(self):
        self.n_lanes = max(ln.index for ln in self.lanes) + 1
        self._segs = []
        for k in range(self.n_lanes):
            segs = sorted((ln for ln in self.lanes if ln.index == k), key=lambda ln: ln.start_x)
            self._segs.append(
                (np.array([s.start_x for s in segs]), np.array([s.end_x for s in segs]))
            )
        # Side to merge toward when a terminating extent ends: the neighbor lane that continues.
        self._merge_dir = {}
        for ln in self.lanes:
            if self.terminates(ln):
                self._merge_dir[(ln.index, ln.end_x)] = 1 if self.lane_exists(ln.index + 1, ln.end_x) else -1
        self._build_lookup()
        self.on_ramps = [r for r in self.ramps if r.kind == "on"]
        self.off_ramps = [r for r in self.ramps if r.kind == "off"]

    def terminates(self, lane: LaneSpec) -> bool:
        return lane.end_x < self.total_length

    def segment(self, lane: int, x: float) -> Optional[LaneSpec]:
        for ln in self.lanes:
            if ln.index == lane and ln.covers(x):
                return ln
        return None

    def lane_exists(self, lane: int, x: float) -> bool:
        return 0 <= lane < self.n_lanes and self.segment(lane, x) is not None

    def lanes_at(self, x: float) -> List[int]:
        return [k for k in range(self.n_lanes) if self.lane_exists(k, x)]

    @property
    def full_lanes(self) -> List[int]:
        return sorted(
            {ln.index for ln in self.lanes if ln.start_x <= 0 and ln.end_x >= self.total_length}
        )

    def merge_direction(self, lane: int, x: float) -> int:
        seg = self.segment(lane, x)
        if seg is None or not self.terminates(seg):
            return 0
        return self._merge_dir[(seg.index, seg.end_x)]

    # Vectorized forms used by the engine.

    def _build_lookup(self):
        # Per-lane tables padded by one slot on each side so lane-1 and lane+1 index safely.
        n = self.n_lanes
        self._lo = np.full(n + 2, np.inf)
        self._hi = np.full(n + 2, -np.inf)
        self._mdir = np.zeros(n + 2, dtype=np.int64)
        self._multi = []
        for k, (starts, ends) in enumerate(self._segs):
            if len(starts) == 1:
                self._lo[k + 1], self._hi[k + 1] = starts[0], ends[0]
                self._mdir[k + 1] = self._merge_dir.get((k, ends[0]), 0)
            else:
                self._multi.append(k)

    def geometry(self, lane, x):
        """Vectorized (exists, distance to lane end, merge direction) at (lane, x).

        Distance is inf where the lane runs to the road end or does not exist.
        """
        lane = np.asarray(lane)
        x = np.asarray(x, dtype=float)
        li = np.clip(lane + 1, 0, self.n_lanes + 1)
        hi = self._hi[li]
        exists = (x >= self._lo[li]) & (x <= hi)
        ends = exists & (hi < self.total_length)
        dist = np.where(ends, hi - x, np.inf)
        mdir = np.where(ends, self._mdir[li], 0)
        for k in self._multi:
            m = lane == k
            if not m.any():
                continue
            starts, seg_ends = self._segs[k]
            for s, e in zip(starts, seg_ends):
                inside = m & (x >= s) & (x <= e)
                exists |= inside
                if e < self.total_length:
                    dist = np.where(inside, e - x, dist)
                    mdir = np.where(inside, self._merge_dir[(k, e)], mdir)
        return exists, dist, mdir

    def exists_array(self, lane, x):
        return self.geometry(lane, x)[0]


def distance_to_lane_end(lane: int, x: float, network: RoadNetwork) -> Optional[float]:
    """Remaining length of the lane at x, or ``None`` if the lane runs to the road end.

    Raises:
        ValueError: if the lane does not exist at x (a vehicle escaped its lane).
    """
    seg = network.segment(lane, x)
    if seg is None:
        raise ValueError(f"lane {lane} does not exist at x={x}")
    if not network.terminates(seg):
        return None
    return seg.end_x - x


def build_default_network(
    total_length: float = 9000.0,
    n_full_lanes: int = 3,
    drop_x: float = 3600.0,
    segment_count: int = 23,
    off_segments: Sequence[int] = (8, 15),
    on_segments: Sequence[int] = (11, 18),
    onramp_length: float = 300.0,
    offramp_window: float = 500.0,
) -> RoadNetwork:
    """Motorway stretch modeled on the A20 test site.

    Lane 0 (median side) ends at ``drop_x``; lanes 1..n_full_lanes run the full
    length. On-ramps feed short acceleration lanes to the right of the rightmost
    mainline lane; off-ramps leave from the rightmost mainline lane. Detectors
    split the road into ``segment_count`` equal segments (1-based numbering).
    """
    lanes = [LaneSpec(0, 0.0, drop_x)]
    lanes += [LaneSpec(k, 0.0, total_length) for k in range(1, n_full_lanes + 1)]
    right = n_full_lanes
    aux = n_full_lanes + 1
    seg_len = total_length / segment_count
    detectors = [i * seg_len for i in range(segment_count + 1)]

    def mid(seg):
        return (seg - 0.5) * seg_len

    ramps = [RampSpec("off", right, mid(s), s) for s in off_segments]
    for s in on_segments:
        pos = mid(s)
        lanes.append(LaneSpec(aux, pos, pos + onramp_length))
        ramps.append(RampSpec("on", aux, pos, s))
    ramps.sort(key=lambda r: r.position_x)
    return RoadNetwork(
        total_length=total_length,
        lanes=lanes,
        ramps=ramps,
        detectors=detectors,
        segment_count=segment_count,
        offramp_window=offramp_window,
    )


class LaneIndex:
    """Per-lane position-sorted index over a vehicle population."""

    def __init__(self, vehicles: Iterable[Vehicle]):
        self._by_lane = {}
        self._vehicles = {}
        for veh in vehicles:
            self._vehicles[veh.id] = veh
            self._by_lane.setdefault(veh.lane, []).append((veh.x, veh.id))
        for entries in self._by_lane.values():
            entries.sort()
        self._xs = {k: [e[0] for e in v] for k, v in self._by_lane.items()}

    def neighbors(
        self, lane: int, x: float, exclude: Optional[int] = None, length: Optional[float] = None
    ) -> NeighborView:
        """Nearest vehicles ahead (front bumper > x) and behind (front bumper <= x).

        Gaps are bumper-to-bumper for a subject whose front is at x. The
        follower gap needs the subject's length: ``length`` if given, else the
        excluded vehicle's length, else the default vehicle length.
        """
        entries = self._by_lane.get(lane, [])
        xs = self._xs.get(lane, [])
        if length is None:
            length = self._vehicles[exclude].length if exclude in self._vehicles else DEFAULT_LENGTH

        leader = None
        j = bisect.bisect_right(xs, x)
        for pos in range(j, len(entries)):
            vid = entries[pos][1]
            if vid == exclude:
                continue
            lv = self._vehicles[vid]
            leader = Neighbor(lv.x - lv.length - x, lv.v, vid, lv.idm)
            break

        follower = None
        for pos in range(j - 1, -1, -1):
            vid = entries[pos][1]
            if vid == exclude:
                continue
            fv = self._vehicles[vid]
            follower = Neighbor(x - length - fv.x, fv.v, vid, fv.idm)
            break
        return NeighborView(leader, follower)


def neighbors(
    vehicles, lane: int, x: float, exclude: Optional[int] = None, length: Optional[float] = None
) -> NeighborView:
    index = vehicles if isinstance(vehicles, LaneIndex) else LaneIndex(vehicles)
    return index.neighbors(lane, x, exclude, length)
