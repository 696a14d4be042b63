"""Deterministic time-stepped simulation loop.

Each step runs seven phases in fixed order: neighbor snapshot, IDM
accelerations, MOBIL decisions (all from the same snapshot), id-ordered
lane-change execution with safety re-validation, ballistic integration,
despawn, and demand injection.

The population is held as parallel numpy arrays so that the per-step work is
vectorized; :mod:`mobilsim.mobil` holds the equivalent scalar rules.
"""

from __future__ import annotations

import bisect
import csv
import math
from collections import deque
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from mobilsim.core import NO_LEADER_GAP, DEFAULT_LENGTH, IdmParams, MobilParams, Vehicle
from mobilsim.idm import raw_acceleration
from mobilsim.network import RoadNetwork

MAINLINE = "mainline"
PROBE_ID_BASE = 1_000_000
# Gap floor used only to keep arithmetic finite once vehicles overlap (a recorded collision).
_GAP_FLOOR = 1e-6

_IDM_FIELDS = ("v0", "T", "s0", "a", "b", "delta")
_FIELDS = {
    "id": np.int64,
    "lane": np.int64,
    "x": float,
    "v": float,
    "acc": float,
    "length": float,
    "entry_time": float,
    "dest": np.int64,
    "origin": np.int64,
    "entry_lane": np.int64,
    "probe_slot": np.int64,
    "p": float,
    "th": float,
    "bsafe": float,
    **{f: float for f in _IDM_FIELDS},
}

STAY, LEFT, RIGHT = 0, -1, 1
_ACTION_NAMES = {STAY: "stay", LEFT: "left", RIGHT: "right"}


@dataclass(frozen=True)
class DemandInterval:
    """Constant arrival rate over [start, end).

    ``destinations`` maps ``"mainline"`` or an off-ramp index to a fraction.
    """

    start: float
    end: float
    flow: float  # veh/h
    destinations: Dict[Union[str, int], float] = field(default_factory=lambda: {MAINLINE: 1.0})

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"demand interval end ({self.end}) must exceed start ({self.start})")
        if self.flow < 0:
            raise ValueError(f"demand flow must be >= 0, got {self.flow}")
        if any(f < 0 for f in self.destinations.values()):
            raise ValueError("destination fractions must be >= 0")
        if abs(sum(self.destinations.values()) - 1.0) > 1e-9:
            raise ValueError(f"destination fractions must sum to 1, got {dict(self.destinations)}")


@dataclass(frozen=True)
class DemandProfile:
    origin: Union[str, int]  # "mainline" or on-ramp index
    intervals: Tuple[DemandInterval, ...]

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(sorted(self.intervals, key=lambda iv: iv.start)))
        for a, b in zip(self.intervals, self.intervals[1:]):
            if b.start < a.end:
                raise ValueError(f"demand intervals overlap at t={b.start}")


@dataclass(frozen=True)
class ProbeSpec:
    """An instrumented vehicle entering the mainline at ``entry_time`` (earliest)."""

    name: str
    entry_time: float
    lane: int
    mobil: Optional[MobilParams] = None


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.4
    duration: float = 14_400.0
    seed: int = 0
    idm: IdmParams = IdmParams()
    mobil: MobilParams = MobilParams()
    vehicle_length: float = DEFAULT_LENGTH
    # Spawn speed is min(spawn_speed_fraction * v0, speed of the nearest downstream vehicle).
    spawn_speed_fraction: float = 0.85
    congestion_onset: float = 5_400.0
    # Mandatory merge zone before a lane end; the last relax_zone metres relax b_safe.
    merge_zone: float = 300.0
    relax_zone: float = 200.0
    b_safe_relaxed: float = 6.0
    yield_window: float = 150.0
    trajectory_every: int = 0  # 0 disables the trajectory log
    trajectory_probes_only: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"duration {self.duration} is not a multiple of dt {self.dt}")
        if not 0 < self.spawn_speed_fraction < 1:
            raise ValueError("spawn_speed_fraction must lie in (0, 1)")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


class VehicleRecord(NamedTuple):
    id: int
    entry_time: float
    exit_time: Optional[float]
    entry_lane: int
    origin: Union[str, int]
    destination: Optional[int]
    exit_kind: str  # "mainline" | "offramp" | "present"
    probe: bool
    probe_name: Optional[str] = None


class ProbeLogRow(NamedTuple):
    t: float
    id: int
    lane: int
    inc_left: float
    inc_right: float
    threshold: float
    decision: str


class CollisionEvent(NamedTuple):
    t: float
    follower: int
    leader: int
    lane: int
    gap: float


@dataclass
class SimulationOutput:
    records: List[VehicleRecord]
    probe_log: List[ProbeLogRow]
    passages: Dict[str, np.ndarray]
    trajectory: Optional[Dict[str, np.ndarray]]
    collisions: List[CollisionEvent]
    min_gap: float
    counters: Dict[str, int]
    lane_violations: int
    probe_ids: Dict[str, int]
    incomplete_probes: List[str]
    steps: int

    @property
    def completed(self) -> List[VehicleRecord]:
        return [r for r in self.records if r.exit_time is not None]

    def probe_records(self) -> Dict[str, VehicleRecord]:
        return {r.probe_name: r for r in self.records if r.probe}


def _empty_population():
    return {k: np.empty(0, dtype=t) for k, t in _FIELDS.items()}


def _acc_scalar(s, v, vl, v0, T, s0, a, b, delta):
    s_star = s0 + max(0.0, v * T + v * (v - vl) / (2.0 * math.sqrt(a * b)))
    return a * (1.0 - (v / v0) ** delta - (s_star / s) ** 2)


class SimulationState:
    """Mutable simulation state; advanced in place by :func:`step`."""

    def __init__(
        self,
        network: RoadNetwork,
        config: SimConfig,
        demand: Sequence[DemandProfile] = (),
        probes: Sequence[ProbeSpec] = (),
        vehicles: Sequence[Vehicle] = (),
    ):
        self.network = network
        self.config = config
        self.t = 0.0
        self.step_index = 0
        self.pop = _empty_population()
        self.demand = list(demand)
        self.probes = list(probes)
        for prof in self.demand:
            if prof.origin != MAINLINE and not 0 <= int(prof.origin) < len(network.on_ramps):
                raise ValueError(f"demand origin {prof.origin!r} is not an on-ramp index")
        for spec in self.probes:
            if not network.lane_exists(spec.lane, 0.0):
                raise ValueError(f"probe {spec.name}: lane {spec.lane} does not exist at the entry")

        self._off_x = np.array([r.position_x for r in network.off_ramps], dtype=float)
        self._off_lane = np.array([r.attach_lane for r in network.off_ramps], dtype=np.int64)
        self._entry_lanes = network.lanes_at(0.0)

        seq = np.random.SeedSequence(config.seed)
        self._rngs = [np.random.default_rng(s) for s in seq.spawn(len(self.demand))]
        self._next_arrival = [self._draw_arrival(k, 0.0) for k in range(len(self.demand))]
        self._queues: Dict[Tuple, deque] = {}
        self._next_id = 1
        self._next_probe = 0
        self._probe_active = False
        self._uniform_idm = True

        self.records: List[VehicleRecord] = []
        self.probe_log: List[ProbeLogRow] = []
        self.collisions: List[CollisionEvent] = []
        self.min_gap = math.inf
        self.lane_violations = 0
        self.counters = {"arrivals": 0, "spawned": 0, "despawned": 0}
        self.probe_ids: Dict[str, int] = {}
        self._passages: List[Tuple[np.ndarray, ...]] = []
        self._trajectory: List[Tuple[np.ndarray, ...]] = []

        for veh in vehicles:
            self.add_vehicle(veh)

    # -- population management

    def add_vehicle(self, veh: Vehicle, origin: int = -1, probe_slot: int = -1):
        """Insert a vehicle. Probes supplied directly (not via the plan) get slot ``len(probes)``."""
        if veh.probe and probe_slot < 0:
            probe_slot = len(self.probes)
        row = {
            "id": veh.id,
            "lane": veh.lane,
            "x": veh.x,
            "v": veh.v,
            "acc": 0.0,
            "length": veh.length,
            "entry_time": veh.entry_time,
            "dest": -1 if veh.destination is None else veh.destination,
            "origin": origin,
            "entry_lane": veh.lane,
            "probe_slot": probe_slot,
            "p": veh.mobil.p,
            "th": veh.mobil.delta_a_th,
            "bsafe": veh.mobil.b_safe,
            **{f: getattr(veh.idm, f) for f in _IDM_FIELDS},
        }
        if veh.idm != self.config.idm:
            self._uniform_idm = False
        self.pop = self._append(row)
        if veh.id < PROBE_ID_BASE:
            self._next_id = max(self._next_id, veh.id + 1)

    def _append(self, row):
        return {k: np.append(self.pop[k], np.asarray(row[k], dtype=_FIELDS[k])) for k in _FIELDS}

    def vehicles(self) -> List[Vehicle]:
        P = self.pop
        out = []
        for i in range(len(P["x"])):
            idm = IdmParams(**{f: float(P[f][i]) for f in _IDM_FIELDS})
            out.append(
                Vehicle(
                    id=int(P["id"][i]),
                    lane=int(P["lane"][i]),
                    x=float(P["x"][i]),
                    v=float(P["v"][i]),
                    length=float(P["length"][i]),
                    idm=idm,
                    mobil=MobilParams(float(P["p"][i]), float(P["th"][i]), float(P["bsafe"][i])),
                    entry_time=float(P["entry_time"][i]),
                    destination=None if P["dest"][i] < 0 else int(P["dest"][i]),
                    probe=bool(P["probe_slot"][i] >= 0),
                )
            )
        return out

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self._queues.values())

    @property
    def probes_finished(self) -> bool:
        return self._next_probe == len(self.probes) and not self._probe_active

    def idm_for(self, idx):
        if self._uniform_idm:
            return self.config.idm
        return SimpleNamespace(**{f: self.pop[f][idx] for f in _IDM_FIELDS})

    # -- demand

    def _draw_arrival(self, k: int, after: float) -> float:
        """Next arrival of a piecewise-constant Poisson process after time ``after``."""
        rng = self._rngs[k]
        tau = after
        for iv in self.demand[k].intervals:
            if iv.end <= tau:
                continue
            tau = max(tau, iv.start)
            if iv.flow <= 0:
                tau = iv.end
                continue
            arrival = tau + rng.exponential(3600.0 / iv.flow)
            if arrival < iv.end:
                return arrival
            tau = iv.end  # memoryless: restart in the next interval
        return math.inf

    def _interval_at(self, k: int, t: float) -> Optional[DemandInterval]:
        for iv in self.demand[k].intervals:
            if iv.start <= t < iv.end:
                return iv
        return None

    def output(self) -> SimulationOutput:
        P = self.pop
        records = list(self.records)
        for i in range(len(P["x"])):
            records.append(self._record(i, None, "present"))
        done = {r.id for r in records if r.exit_time is not None}
        incomplete = [s.name for s in self.probes if self.probe_ids.get(s.name) not in done]
        return SimulationOutput(
            records=sorted(records, key=lambda r: r.id),
            probe_log=list(self.probe_log),
            passages=_concat(self._passages, ("id", "detector", "t", "v", "lane"), (np.int64, np.int64, float, float, np.int64)),
            trajectory=(
                _concat(self._trajectory, ("t", "id", "lane", "x", "v", "a"), (float, np.int64, np.int64, float, float, float))
                if self.config.trajectory_every > 0
                else None
            ),
            collisions=list(self.collisions),
            min_gap=self.min_gap,
            counters=dict(self.counters, present=len(P["x"]), queued=self.queued),
            lane_violations=self.lane_violations,
            probe_ids=dict(self.probe_ids),
            incomplete_probes=incomplete,
            steps=self.step_index,
        )

    def _record(self, i, exit_time, kind) -> VehicleRecord:
        P = self.pop
        slot = int(P["probe_slot"][i])
        origin = int(P["origin"][i])
        name = None
        if 0 <= slot < len(self.probes):
            name = self.probes[slot].name
        elif slot >= 0:
            name = str(int(P["id"][i]))
        return VehicleRecord(
            id=int(P["id"][i]),
            entry_time=float(P["entry_time"][i]),
            exit_time=exit_time,
            entry_lane=int(P["entry_lane"][i]),
            origin=MAINLINE if origin < 0 else origin,
            destination=None if P["dest"][i] < 0 else int(P["dest"][i]),
            exit_kind=kind,
            probe=slot >= 0,
            probe_name=name,
        )


def _concat(chunks, names, dtypes):
    if not chunks:
        return {n: np.empty(0, dtype=d) for n, d in zip(names, dtypes)}
    return {n: np.concatenate([c[j] for c in chunks]).astype(d) for j, (n, d) in enumerate(zip(names, dtypes))}


class _Snapshot(NamedTuple):
    leader: np.ndarray
    follower: np.ndarray
    groups: List[np.ndarray]
    xs: List[np.ndarray]


def _snapshot(lane, x, n_lanes) -> _Snapshot:
    n = len(x)
    order = np.lexsort((x, lane))
    sl = lane[order]
    leader = np.full(n, -1, dtype=np.int64)
    follower = np.full(n, -1, dtype=np.int64)
    same = sl[1:] == sl[:-1]
    leader[order[:-1][same]] = order[1:][same]
    follower[order[1:][same]] = order[:-1][same]
    bounds = np.searchsorted(sl, np.arange(n_lanes + 1))
    groups = [order[bounds[k] : bounds[k + 1]] for k in range(n_lanes)]
    return _Snapshot(leader, follower, groups, [x[g] for g in groups])


def _target_neighbors(snap: _Snapshot, target, x):
    n = len(x)
    tl = np.full(n, -1, dtype=np.int64)
    tf = np.full(n, -1, dtype=np.int64)
    for k, (g, xs) in enumerate(zip(snap.groups, snap.xs)):
        q = np.nonzero(target == k)[0]
        if not len(q):
            continue
        j = np.searchsorted(xs, x[q], side="right")
        has_l = j < len(g)
        tl[q[has_l]] = g[j[has_l]]
        has_f = j > 0
        tf[q[has_f]] = g[j[has_f] - 1]
    return tl, tf


def _leader_view(P, idx, x, end):
    """Leader gap/speed with the lane-end obstacle folded in; gap is NO_LEADER_GAP if none."""
    has = idx >= 0
    safe_idx = np.where(has, idx, 0)
    gap = np.where(has, P["x"][safe_idx] - P["length"][safe_idx] - x, NO_LEADER_GAP)
    speed = np.where(has, P["v"][safe_idx], np.nan)
    obst = end < gap
    gap = np.where(obst, end, gap)
    speed = np.where(obst, 0.0, speed)
    return has | obst, gap, speed


def _offramp_pressure(state, lane, x, dest):
    """Mandatory-merge zone of off-ramp bound vehicles not yet in the exit lane.

    Returns (distance to the ramp, required direction); inf/0 outside the zone.
    The zone starts ``offramp_window`` metres upstream per lane still to cross.
    """
    dist = np.full(len(x), np.inf)
    direction = np.zeros(len(x), dtype=np.int64)
    m = np.nonzero(dest >= 0)[0]
    if not len(m):
        return dist, direction
    rx = state._off_x[dest[m]]
    need = state._off_lane[dest[m]] - lane[m]
    start = rx - state.network.offramp_window * np.abs(need)
    active = (need != 0) & (x[m] >= start) & (x[m] < rx)
    dist[m[active]] = rx[active] - x[m[active]]
    direction[m[active]] = np.sign(need[active])
    return dist, direction


def step(state: SimulationState, network: RoadNetwork, config: SimConfig) -> SimulationState:
    """Advance the state by one time step (in place); returns the same state."""
    dt = config.dt
    t0 = state.t
    t1 = (state.step_index + 1) * dt
    P = state.pop
    n = len(P["x"])
    if n:
        _move(state, network, config, t0, t1)
        _despawn(state, network, t1)
    _inject(state, network, config, t1)
    state.t = t1
    state.step_index += 1
    return state


def _move(state, network, config, t0, t1):
    P = state.pop
    dt = config.dt
    lane, x, v, length, dest = P["lane"], P["x"], P["v"], P["length"], P["dest"]
    n = len(x)
    idm_all = state.idm_for(slice(None))

    # (1) snapshot
    snap = _snapshot(lane, x, network.n_lanes)

    # (2) IDM accelerations
    _, end_own, merge_own = network.geometry(lane, x)
    has_cl, s_cl, v_cl = _leader_view(P, snap.leader, x, end_own)
    acc = raw_acceleration(np.maximum(s_cl, _GAP_FLOOR), v, np.where(has_cl, v_cl, v), idm_all)
    d_off, dir_off = _offramp_pressure(state, lane, x, dest)

    # (3) MOBIL decisions
    merge_dir = np.where(end_own <= config.merge_zone, merge_own, 0)
    mand_dir = np.where(merge_dir != 0, merge_dir, dir_off)
    mandatory = mand_dir != 0
    remaining = np.where(merge_dir != 0, end_own, d_off)
    relax = np.clip(1.0 - remaining / config.relax_zone, 0.0, 1.0) if config.relax_zone > 0 else 0.0
    bsafe = np.where(
        mandatory, np.maximum(P["bsafe"], P["bsafe"] + (config.b_safe_relaxed - P["bsafe"]) * relax), P["bsafe"]
    )
    # Exit-lane lock: off-ramp vehicles already in the exit lane inside their zone stay put.
    lock = np.zeros(n, dtype=bool)
    m = np.nonzero(dest >= 0)[0]
    if len(m):
        rx = state._off_x[dest[m]]
        lock[m] = (lane[m] == state._off_lane[dest[m]]) & (x[m] >= rx - network.offramp_window) & (x[m] < rx)

    of = snap.follower
    has_of = of >= 0
    of_i = np.where(has_of, of, 0)
    s_of = x - length - x[of_i]
    v_of = v[of_i]
    idm_of = state.idm_for(of_i)
    a_o = raw_acceleration(np.maximum(s_of, _GAP_FLOOR), v_of, v, idm_of)
    s_o_new = np.where(has_cl, s_of + length + s_cl, NO_LEADER_GAP)
    at_o = raw_acceleration(np.maximum(s_o_new, _GAP_FLOOR), v_of, np.where(has_cl, v_cl, v_of), idm_of)
    old_term = np.where(has_of, at_o - a_o, 0.0)

    inc = {}
    safe = {}
    own_safe = {}
    allowed = {}
    per_dir = {}
    for d in (LEFT, RIGHT):
        target = lane + d
        valid, end_t, _ = network.geometry(target, x)
        tl, tf = _target_neighbors(snap, np.where(valid, target, -1), x)
        has_tl, s_tl, v_tl = _leader_view(P, tl, x, end_t)
        at_c = raw_acceleration(np.maximum(s_tl, _GAP_FLOOR), v, np.where(has_tl, v_tl, v), idm_all)

        has_tf = tf >= 0
        tf_i = np.where(has_tf, tf, 0)
        s_tf = x - length - x[tf_i]
        v_tf = v[tf_i]
        idm_tf = state.idm_for(tf_i)
        s_n_old = np.where(has_tl, s_tf + length + s_tl, NO_LEADER_GAP)
        a_n = raw_acceleration(np.maximum(s_n_old, _GAP_FLOOR), v_tf, np.where(has_tl, v_tl, v_tf), idm_tf)
        at_n = raw_acceleration(np.maximum(s_tf, _GAP_FLOOR), v_tf, v, idm_tf)
        new_term = np.where(has_tf, at_n - a_n, 0.0)

        gaps_ok = valid & (~has_tl | (s_tl > 0)) & (~has_tf | (s_tf > 0))
        inc[d] = np.where(gaps_ok, (at_c - acc) + P["p"] * (new_term + old_term), np.nan)
        safe[d] = gaps_ok & (~has_tf | (at_n >= -bsafe))
        own_safe[d] = at_c >= -bsafe
        allowed[d] = valid & (end_t > config.merge_zone) & ~mandatory & ~lock
        per_dir[d] = end_t

    th = P["th"]
    left_ok = allowed[LEFT] & safe[LEFT] & (inc[LEFT] > th)
    right_ok = allowed[RIGHT] & safe[RIGHT] & (inc[RIGHT] > th)
    both = left_ok & right_ok
    action = np.zeros(n, dtype=np.int64)
    action[left_ok] = LEFT
    action[right_ok] = RIGHT
    action[both & (inc[LEFT] > inc[RIGHT])] = LEFT
    # A forced merge bypasses the threshold, so the merger's own braking is bounded as well.
    forced = mandatory & np.where(
        mand_dir == LEFT, safe[LEFT] & own_safe[LEFT], safe[RIGHT] & own_safe[RIGHT]
    )
    action[forced] = mand_dir[forced]

    # Blocked forced merges: the nearest upstream vehicle in the target lane that can
    # stop behind the merger at comfortable deceleration yields to it.
    blocked = np.nonzero(mandatory & (action == STAY))[0]
    if len(blocked):
        window = np.zeros(n)
        window[blocked] = config.yield_window
        _yield_to(state, snap, blocked, lane + mand_dir, acc, window)

    # (4) execute in ascending id order with re-validation
    outcome = np.zeros(n, dtype=np.int64)
    cand = np.nonzero(action != STAY)[0]
    if len(cand):
        cand = cand[np.argsort(P["id"][cand], kind="stable")]
        _execute(state, snap, cand, action, bsafe, per_dir, acc, outcome)

    probes = np.nonzero(P["probe_slot"] >= 0)[0]
    for i in probes:
        decided_lane = int(lane[i] - outcome[i])
        name = _ACTION_NAMES[int(outcome[i])]
        if outcome[i] != STAY and mandatory[i]:
            name = "forced_" + name
        state.probe_log.append(
            ProbeLogRow(
                t0, int(P["id"][i]), decided_lane, float(inc[LEFT][i]), float(inc[RIGHT][i]),
                float(th[i]), name,
            )
        )

    # (5) ballistic integration
    a_eff = np.maximum(acc, -v / dt)
    x_new = x + v * dt + 0.5 * a_eff * dt * dt
    v_new = np.maximum(v + a_eff * dt, 0.0)

    if len(network.detectors):
        _record_passages(state, network.detectors, t0, dt, x, x_new, v, v_new, P["id"], P["lane"])

    P["x"], P["v"], P["acc"] = x_new, v_new, a_eff
    _check_gaps(state, network, t1)
    every = config.trajectory_every
    if every > 0 and (state.step_index + 1) % every == 0:
        sel = probes if config.trajectory_probes_only else slice(None)
        ids = P["id"][sel]
        state._trajectory.append(
            (np.full(len(ids), t1), ids, P["lane"][sel], x_new[sel], v_new[sel], a_eff[sel])
        )


def _yield_to(state, snap, mergers, target, acc, window):
    """For each merger, the nearest target-lane vehicle behind it (within the
    merger's ``window``) that can follow it at no worse than its comfortable
    deceleration does so."""
    P = state.pop
    x, v, length = P["x"], P["v"], P["length"]
    for k in np.unique(target[mergers]).tolist():
        m = mergers[target[mergers] == k]
        g, xs = snap.groups[k], snap.xs[k]
        front = x[m] - length[m]
        hi = np.searchsorted(xs, front, side="left")  # candidates strictly behind the rear bumper
        w = window[m]
        # window 0: only the immediate follower is considered
        lo = np.where(w > 0, np.searchsorted(xs, front - w, side="left"), np.maximum(hi - 1, 0))
        count = hi - lo
        if not count.any():
            continue
        owner = np.repeat(np.arange(len(m)), count)
        pos = np.arange(len(owner)) - np.repeat(np.cumsum(count) - count, count) + lo[owner]
        f = g[pos]
        a_y = raw_acceleration(front[owner] - xs[pos], v[f], v[m[owner]], state.idm_for(f))
        ok = a_y >= -P["b"][f]
        if not ok.any():
            continue
        owner, f, a_y, pos = owner[ok], f[ok], a_y[ok], pos[ok]
        # nearest eligible candidate per merger: the last one in position order
        last = np.ones(len(owner), dtype=bool)
        last[:-1] = owner[1:] != owner[:-1]
        np.minimum.at(acc, f[last], a_y[last])


def _execute(state, snap, cand, action, bsafe, per_dir, acc, outcome):
    P = state.pop
    lane, x, v, length = P["lane"], P["x"], P["v"], P["length"]
    lists = {}

    def lane_list(k):
        if k not in lists:
            lists[k] = (snap.xs[k].tolist(), snap.groups[k].tolist())
        return lists[k]

    def params(i):
        return tuple(float(P[f][i]) for f in _IDM_FIELDS)

    for i in cand.tolist():
        d = int(action[i])
        k = int(lane[i]) + d
        xi, vi, li = float(x[i]), float(v[i]), float(length[i])
        xs, gs = lane_list(k)
        j = bisect.bisect_right(xs, xi)
        gl = gs[j] if j < len(gs) else None
        gf = gs[j - 1] if j > 0 else None

        s_lead, v_lead = NO_LEADER_GAP, vi
        if gl is not None:
            s_lead = float(x[gl] - length[gl]) - xi
            if s_lead <= 0:
                continue
            v_lead = float(v[gl])
        end_t = float(per_dir[d][i])
        if end_t < s_lead:
            s_lead, v_lead = end_t, 0.0
        at_c = _acc_scalar(max(s_lead, _GAP_FLOOR), vi, v_lead, *params(i))
        # the mover's own braking is bounded too; an earlier change may have cut in ahead
        if at_c < -float(bsafe[i]):
            continue
        at_n = None
        if gf is not None:
            s_f = xi - li - float(x[gf])
            if s_f <= 0:
                continue
            at_n = _acc_scalar(s_f, float(v[gf]), vi, *params(gf))
            if at_n < -float(bsafe[i]):
                continue

        # accepted: move i from its lane list into lane k
        own_xs, own_gs = lane_list(int(lane[i]))
        pos = bisect.bisect_left(own_xs, xi)
        while own_gs[pos] != i:
            pos += 1
        del own_xs[pos], own_gs[pos]
        xs.insert(j, xi)
        gs.insert(j, i)
        lane[i] = k
        outcome[i] = d
        acc[i] = at_c
        if at_n is not None:
            acc[gf] = min(acc[gf], at_n)


def _record_passages(state, detectors, t0, dt, x0, x1, v0, v1, ids, lanes):
    det = np.asarray(detectors, dtype=float)
    lo = np.searchsorted(det, x0, side="left")  # first detector with d >= x0
    hi = np.searchsorted(det, x1, side="left")  # first detector with d >= x1
    count = hi - lo
    veh = np.nonzero(count > 0)[0]
    if not len(veh):
        return
    rep = np.repeat(veh, count[veh])
    offsets = np.arange(len(rep)) - np.repeat(np.cumsum(count[veh]) - count[veh], count[veh])
    k = lo[rep] + offsets
    frac = (det[k] - x0[rep]) / (x1[rep] - x0[rep])
    state._passages.append(
        (ids[rep], k, t0 + frac * dt, v0[rep] + frac * (v1[rep] - v0[rep]), lanes[rep])
    )


def _check_gaps(state, network, t):
    P = state.pop
    lane, x = P["lane"], P["x"]
    order = np.lexsort((x, lane))
    sl = lane[order]
    same = sl[1:] == sl[:-1]
    lead = order[1:][same]
    foll = order[:-1][same]
    if len(lead):
        gaps = x[lead] - P["length"][lead] - x[foll]
        state.min_gap = min(state.min_gap, float(gaps.min()))
        for j in np.nonzero(gaps < 0)[0]:
            state.collisions.append(
                CollisionEvent(t, int(P["id"][foll[j]]), int(P["id"][lead[j]]), int(lane[foll[j]]), float(gaps[j]))
            )
    inside = x < network.total_length
    state.lane_violations += int(np.count_nonzero(inside & ~network.exists_array(lane, x)))


def _despawn(state, network, t):
    P = state.pop
    x, lane, dest = P["x"], P["lane"], P["dest"]
    gone_main = x >= network.total_length
    gone_off = np.zeros(len(x), dtype=bool)
    m = np.nonzero(dest >= 0)[0]
    if len(m):
        gone_off[m] = (lane[m] == state._off_lane[dest[m]]) & (x[m] >= state._off_x[dest[m]])
    gone = gone_main | gone_off
    if not gone.any():
        return
    for i in np.nonzero(gone)[0]:
        state.records.append(state._record(i, t, "offramp" if gone_off[i] else "mainline"))
        if P["probe_slot"][i] >= 0:
            state._probe_active = False
    keep = ~gone
    state.pop = {k: a[keep] for k, a in P.items()}
    state.counters["despawned"] += int(np.count_nonzero(gone))


def _inject(state, network, config, t):
    # arrivals
    for k, prof in enumerate(state.demand):
        while state._next_arrival[k] <= t:
            at = state._next_arrival[k]
            rng = state._rngs[k]
            iv = state._interval_at(k, at)
            if prof.origin == MAINLINE:
                lane = state._entry_lanes[int(rng.integers(len(state._entry_lanes)))]
                key = (MAINLINE, lane)
            else:
                ramp = network.on_ramps[int(prof.origin)]
                lane = ramp.attach_lane
                key = (int(prof.origin), lane)
            dests = list(iv.destinations.items())
            pick = int(rng.choice(len(dests), p=[f for _, f in dests]))
            dest = dests[pick][0]
            state._queues.setdefault(key, deque()).append((at, -1 if dest == MAINLINE else int(dest), -1))
            state.counters["arrivals"] += 1
            state._next_arrival[k] = state._draw_arrival(k, at)

    # probes: one at a time, the next only after the previous has left
    if (
        not state._probe_active
        and state._next_probe < len(state.probes)
        and state.probes[state._next_probe].entry_time <= t
    ):
        slot = state._next_probe
        spec = state.probes[slot]
        state._queues.setdefault((MAINLINE, spec.lane), deque()).appendleft((t, -1, slot))
        state._next_probe += 1
        state._probe_active = True

    for key in sorted(state._queues, key=lambda kk: (kk[0] != MAINLINE, str(kk[0]), kk[1])):
        q = state._queues[key]
        if q:
            _try_spawn(state, network, config, key, q, t)


def _try_spawn(state, network, config, key, queue, t):
    origin, lane = key
    entry_x = 0.0 if origin == MAINLINE else network.on_ramps[origin].position_x
    P = state.pop
    idm = config.idm
    v_spawn = config.spawn_speed_fraction * idm.v0
    in_lane = np.nonzero((P["lane"] == lane) & (P["x"] >= entry_x))[0]
    if len(in_lane):
        j = in_lane[np.argmin(P["x"][in_lane])]
        gap = float(P["x"][j] - P["length"][j]) - entry_x
        v_spawn = min(v_spawn, float(P["v"][j]))
        # scalar equilibrium gap (v_spawn < v0 by construction)
        s_eq = (idm.s0 + v_spawn * idm.T) / math.sqrt(1.0 - (v_spawn / idm.v0) ** idm.delta)
        if not gap > s_eq:
            return
    _, dest, slot = queue.popleft()
    if slot >= 0:
        spec = state.probes[slot]
        vid = PROBE_ID_BASE + slot
        mobil = spec.mobil or config.mobil
        state.probe_ids[spec.name] = vid
    else:
        vid = state._next_id
        state._next_id += 1
        mobil = config.mobil
        state.counters["spawned"] += 1
    veh = Vehicle(
        id=vid, lane=lane, x=entry_x, v=v_spawn, length=config.vehicle_length, idm=idm, mobil=mobil,
        entry_time=t, destination=None if dest < 0 else dest, probe=slot >= 0,
    )
    state.add_vehicle(veh, origin=-1 if origin == MAINLINE else origin, probe_slot=slot)
    every = config.trajectory_every
    if every > 0 and (state.step_index + 1) % every == 0 and (slot >= 0 or not config.trajectory_probes_only):
        state._trajectory.append(
            (np.array([t]), np.array([vid]), np.array([lane]), np.array([entry_x]), np.array([v_spawn]), np.array([0.0]))
        )


def run(
    network: RoadNetwork,
    config: SimConfig,
    demand: Sequence[DemandProfile] = (),
    probes: Sequence[ProbeSpec] = (),
    vehicles: Sequence[Vehicle] = (),
    stop_after_probes: bool = False,
) -> SimulationOutput:
    """Run ``config.n_steps`` steps.

    With ``stop_after_probes`` the run ends early once every planned probe has
    left the road; probe results are unchanged because later steps cannot
    affect them.
    """
    state = SimulationState(network, config, demand, probes, vehicles)
    for _ in range(config.n_steps):
        step(state, network, config)
        if stop_after_probes and state.probes_finished:
            break
    return state.output()


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "NA"
        return f"{v:.6g}"
    return str(v)


def write_trajectory_csv(output: SimulationOutput, path) -> None:
    tr = output.trajectory
    if tr is None:
        raise ValueError("simulation was run without a trajectory log")
    cols = ("t", "id", "lane", "x", "v", "a")
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(",".join(cols) + "\n")
        rows = zip(*(tr[c].tolist() for c in cols))
        f.writelines(
            f"{t:.6g},{i},{ln},{x:.6g},{v:.6g},{a:.6g}\n" for t, i, ln, x, v, a in rows
        )


def write_probe_log_csv(output: SimulationOutput, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "id", "lane", "inc_left", "inc_right", "threshold", "decision"])
        for row in output.probe_log:
            w.writerow([_fmt(val) for val in row])
