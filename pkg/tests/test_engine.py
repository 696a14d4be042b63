import dataclasses
import math

import numpy as np
import pytest

from mobilsim.core import NO_LEADER_GAP, IdmParams, MobilParams, Vehicle
from mobilsim.engine import (
    DemandInterval,
    DemandProfile,
    ProbeSpec,
    SimConfig,
    SimulationState,
    run,
    step,
    write_probe_log_csv,
    write_trajectory_csv,
)
from mobilsim.idm import desired_gap, equilibrium_gap
from mobilsim.network import LaneSpec, RoadNetwork, build_default_network

IDM = IdmParams()


def straight(length=100_000.0, lanes=1):
    return RoadNetwork(length, [LaneSpec(k, 0.0, length) for k in range(lanes)])


def pace_params(v, params=IDM):
    """v0 at which a vehicle with no leader cruises at exactly v."""
    s_star = desired_gap(v, 0.0, params)
    return dataclasses.replace(params, v0=v / (1.0 - (s_star / NO_LEADER_GAP) ** 2) ** 0.25)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(duration=10.1, dt=0.4)
    assert SimConfig(duration=3600.0).n_steps == 9000
    assert SimConfig(duration=3600.0, dt=0.2).n_steps == 18000


def test_demand_validation():
    with pytest.raises(ValueError):
        DemandInterval(10.0, 10.0, 100.0)
    with pytest.raises(ValueError):
        DemandInterval(0.0, 10.0, -1.0)
    with pytest.raises(ValueError):
        DemandInterval(0.0, 10.0, 100.0, {"mainline": 0.5})
    with pytest.raises(ValueError):
        DemandProfile("mainline", (DemandInterval(0, 10, 1.0), DemandInterval(5, 20, 1.0)))


def test_duration_zero_is_empty():
    out = run(build_default_network(), SimConfig(duration=0.0, trajectory_every=1),
              [DemandProfile("mainline", (DemandInterval(0, 100, 3600.0),))])
    assert out.steps == 0
    assert out.records == [] and out.probe_log == []
    assert len(out.trajectory["t"]) == 0


def test_free_flow_advances_v0_dt():
    cfg = SimConfig(duration=400.0)
    state = SimulationState(straight(), cfg, vehicles=[Vehicle(1, 0, 100.0, IDM.v0)])
    for _ in range(cfg.n_steps):
        x0, v0 = float(state.pop["x"][0]), float(state.pop["v"][0])
        step(state, state.network, cfg)
        a = float(state.pop["acc"][0])
        assert state.pop["x"][0] - x0 == pytest.approx(v0 * cfg.dt + 0.5 * a * cfg.dt**2, abs=1e-12)
        # the finite no-leader gap settles the speed ~7e-6 relative below v0
        assert state.pop["x"][0] - x0 == pytest.approx(IDM.v0 * cfg.dt, rel=1e-5)
        assert state.pop["v"][0] == pytest.approx(IDM.v0, rel=1e-5)


def test_platoon_holds_equilibrium():
    v = 25.0
    s = equilibrium_gap(v, IDM)
    vehicles = [Vehicle(1, 0, 20_000.0, v, idm=pace_params(v))]
    vehicles += [Vehicle(k + 1, 0, 20_000.0 - k * (s + 5.0), v) for k in range(1, 21)]
    out = run(straight(), SimConfig(duration=400.0, trajectory_every=1), vehicles=vehicles)
    tr = out.trajectory
    xs = np.stack([tr["x"][tr["id"] == i] for i in range(1, 22)])
    assert xs.shape == (21, 1000)
    gaps = xs[:-1] - 5.0 - xs[1:]
    assert np.abs(gaps / s - 1.0).max() <= 0.01


def _jam(lane, x_from, x_to, spacing=7.5):
    crawl = dataclasses.replace(IDM, v0=1e-3, a=1e-4)  # effectively parked
    xs = np.arange(x_from, x_to, spacing)
    return [Vehicle(100 + k, lane, float(x), 0.0, idm=crawl) for k, x in enumerate(xs)]


def test_stops_before_lane_end_without_gap():
    net = RoadNetwork(2000.0, [LaneSpec(0, 0.0, 500.0), LaneSpec(1, 0.0, 2000.0)])
    merger = Vehicle(1, 0, 100.0, 20.0)
    cfg = SimConfig(duration=120.0, trajectory_every=1)
    out = run(net, cfg, vehicles=[merger] + _jam(1, 10.0, 800.0))
    tr = out.trajectory
    mine = tr["id"] == 1
    assert set(tr["lane"][mine].tolist()) == {0}
    assert tr["x"][mine].max() <= 500.0 - IDM.s0 + 1e-9
    assert tr["v"][mine][-1] < 0.01
    assert not out.collisions


def test_blocked_entry_queues():
    net = straight(2000.0)
    blocker = _jam(0, 6.0, 7.0)  # front bumper at 6 m, rear at 1 m
    dem = [DemandProfile("mainline", (DemandInterval(0.0, 600.0, 1800.0),))]
    out = run(net, SimConfig(duration=600.0), dem, vehicles=blocker)
    c = out.counters
    assert c["spawned"] == 0
    assert c["queued"] == c["arrivals"] > 0
    assert not out.collisions


def test_zero_flow_spawns_nothing():
    dem = [DemandProfile("mainline", (DemandInterval(0.0, 600.0, 0.0),))]
    out = run(straight(2000.0), SimConfig(duration=600.0), dem)
    assert out.counters["arrivals"] == 0 and out.records == []


def test_poisson_arrivals_and_reproducibility():
    net = build_default_network(total_length=1000.0, drop_x=400.0, segment_count=4,
                                off_segments=(), on_segments=())
    dem = [DemandProfile("mainline", (DemandInterval(0.0, 3600.0, 1800.0),))]
    cfg = SimConfig(duration=3600.0, seed=11)
    a = run(net, cfg, dem)
    b = run(net, cfg, dem)
    total = a.counters["spawned"] + a.counters["queued"]
    assert total == a.counters["arrivals"]
    assert abs(total - 1800) <= 3 * math.sqrt(1800)
    assert a.counters == b.counters


def test_flow_conservation_each_step():
    net = build_default_network(total_length=2000.0, drop_x=800.0, segment_count=5,
                                off_segments=(2,), on_segments=(3,))
    dem = [
        DemandProfile("mainline", (DemandInterval(0.0, 600.0, 5000.0, {"mainline": 0.8, 0: 0.2}),)),
        DemandProfile(0, (DemandInterval(0.0, 600.0, 500.0),)),
    ]
    cfg = SimConfig(duration=600.0, seed=2)
    state = SimulationState(net, cfg, dem, [ProbeSpec("a", 30.0, 1)])
    for _ in range(cfg.n_steps):
        step(state, net, cfg)
        c = state.counters
        probes_in = len(state.probe_ids)
        present = len(state.pop["x"])
        assert c["arrivals"] == c["spawned"] + state.queued - sum(
            1 for q in state._queues.values() for item in q if item[2] >= 0
        )
        assert c["spawned"] + probes_in == c["despawned"] + present
        assert np.all(state.pop["v"] >= 0)
    out = state.output()
    assert not out.collisions and out.lane_violations == 0
    assert all(r.exit_time > r.entry_time for r in out.completed)


def test_sequential_probes(tmp_path):
    net = build_default_network(total_length=2000.0, drop_x=800.0, segment_count=5,
                                off_segments=(), on_segments=())
    probes = [ProbeSpec(f"p{k}", 10.0 * k, 1 + k % 3, MobilParams(0.2, 1.0)) for k in range(4)]
    out = run(net, SimConfig(duration=600.0), probes=probes)
    recs = sorted((r for r in out.records if r.probe), key=lambda r: r.entry_time)
    assert [r.probe_name for r in recs] == ["p0", "p1", "p2", "p3"]
    for a, b in zip(recs, recs[1:]):
        assert b.entry_time >= a.exit_time
    for r in recs:
        assert r.exit_time - r.entry_time > 2000.0 / IDM.v0
    assert not out.incomplete_probes


def _small_run(seed=5):
    net = build_default_network(total_length=2000.0, drop_x=800.0, segment_count=5,
                                off_segments=(2,), on_segments=(3,))
    dem = [
        DemandProfile("mainline", (DemandInterval(0.0, 300.0, 5500.0, {"mainline": 0.9, 0: 0.1}),)),
        DemandProfile(0, (DemandInterval(0.0, 300.0, 600.0),)),
    ]
    cfg = SimConfig(duration=300.0, seed=seed, trajectory_every=1)
    return run(net, cfg, dem, [ProbeSpec("a", 20.0, 0), ProbeSpec("b", 60.0, 2)])


def test_same_seed_byte_identical(tmp_path):
    files = []
    for k in range(2):
        out = _small_run()
        d = tmp_path / str(k)
        d.mkdir()
        write_trajectory_csv(out, d / "trajectory.csv")
        write_probe_log_csv(out, d / "probe_log.csv")
        files.append(d)
    for name in ("trajectory.csv", "probe_log.csv"):
        assert (files[0] / name).read_bytes() == (files[1] / name).read_bytes()
    head = (files[0] / "trajectory.csv").read_text().splitlines()[0]
    assert head == "t,id,lane,x,v,a"


def test_different_seed_differs():
    a, b = _small_run(1), _small_run(2)
    assert a.counters != b.counters or not np.array_equal(a.trajectory["x"], b.trajectory["x"])


def test_dt_override_doubles_steps():
    net = straight(2000.0)
    a = run(net, SimConfig(duration=20.0), vehicles=[Vehicle(1, 0, 0.0, 20.0)])
    b = run(net, SimConfig(duration=20.0, dt=0.2), vehicles=[Vehicle(1, 0, 0.0, 20.0)])
    assert b.steps == 2 * a.steps


def test_trajectory_required_for_csv(tmp_path):
    out = run(straight(2000.0), SimConfig(duration=4.0))
    with pytest.raises(ValueError):
        write_trajectory_csv(out, tmp_path / "t.csv")
