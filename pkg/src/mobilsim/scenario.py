"""JSON scenario files: network, demand, driver defaults, run settings and probes.

Units are SI except demand flows, which are given in veh/h.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, List, Sequence

from mobilsim.core import IdmParams, MobilParams
from mobilsim.engine import MAINLINE, DemandInterval, DemandProfile, ProbeSpec, SimConfig
from mobilsim.network import LaneSpec, RampSpec, RoadNetwork, build_default_network

_SECTIONS = ("network", "demand", "defaults", "sim", "probes")
_BUILDER_KEYS = {
    "length": "total_length",
    "full_lanes": "n_full_lanes",
    "drop_x": "drop_x",
    "segments": "segment_count",
    "off_segments": "off_segments",
    "on_segments": "on_segments",
    "onramp_length": "onramp_length",
    "offramp_window": "offramp_window",
}
_SIM_KEYS = {f.name for f in fields(SimConfig)} - {"idm", "mobil"}


class ScenarioError(ValueError):
    """Malformed scenario; the message starts with the offending field path."""


@dataclass(frozen=True)
class Scenario:
    name: str
    network: RoadNetwork
    config: SimConfig
    demand: Sequence[DemandProfile]
    probes: Sequence[ProbeSpec]

    def with_probe_mobil(self, mobil: MobilParams) -> "Scenario":
        return replace(self, probes=tuple(replace(p, mobil=mobil) for p in self.probes))


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``name`` without ``.json``)."""
    path = resources.files("mobilsim") / "scenarios" / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return Path(str(path))


def bundled_names() -> List[str]:
    root = resources.files("mobilsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc, default_name=path.stem)


def parse_scenario(doc: Any, default_name: str = "scenario") -> Scenario:
    _require(isinstance(doc, dict), "<root>", "must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"name", "description"}
    _require(not unknown, "<root>", f"unknown section(s) {sorted(unknown)}")
    for sec in ("network", "sim"):
        _require(sec in doc, sec, "section is required")

    network = _wrap("network", _network, doc["network"])
    defaults = doc.get("defaults", {})
    _require(isinstance(defaults, dict), "defaults", "must be an object")
    idm = _wrap("defaults.idm", lambda d: IdmParams(**_obj(d, "defaults.idm")), defaults.get("idm", {}))
    mobil = _wrap("defaults.mobil", lambda d: MobilParams(**_obj(d, "defaults.mobil")), defaults.get("mobil", {}))

    sim = _obj(doc["sim"], "sim")
    bad = set(sim) - _SIM_KEYS
    _require(not bad, "sim", f"unknown key(s) {sorted(bad)}")
    config = _wrap("sim", lambda d: SimConfig(idm=idm, mobil=mobil, **d), sim)

    demand_doc = doc.get("demand", [])
    _require(isinstance(demand_doc, list), "demand", "must be a list")
    demand = [_profile(d, f"demand[{k}]", network) for k, d in enumerate(demand_doc)]

    probes_doc = doc.get("probes", [])
    _require(isinstance(probes_doc, list), "probes", "must be a list")
    probes = [_probe(p, f"probes[{k}]", network) for k, p in enumerate(probes_doc)]
    names = [p.name for p in probes]
    _require(len(set(names)) == len(names), "probes", "probe names must be unique")
    _require(
        all(a.entry_time <= b.entry_time for a, b in zip(probes, probes[1:])),
        "probes",
        "entry times must be non-decreasing",
    )
    return Scenario(str(doc.get("name", default_name)), network, config, tuple(demand), tuple(probes))


def _require(cond, path, msg):
    if not cond:
        raise ScenarioError(f"{path}: {msg}")


def _obj(d, path) -> dict:
    _require(isinstance(d, dict), path, "must be an object")
    return d


def _wrap(path, fn, arg):
    try:
        return fn(arg)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _network(d) -> RoadNetwork:
    d = _obj(d, "network")
    if "lanes" not in d:
        bad = set(d) - set(_BUILDER_KEYS)
        _require(not bad, "network", f"unknown key(s) {sorted(bad)}")
        return build_default_network(**{_BUILDER_KEYS[k]: v for k, v in d.items()})

    bad = set(d) - {"length", "lanes", "ramps", "detectors", "offramp_window"}
    _require(not bad, "network", f"unknown key(s) {sorted(bad)}")
    _require("length" in d, "network.length", "is required")
    lanes = []
    for k, ln in enumerate(d["lanes"]):
        ln = _obj(ln, f"network.lanes[{k}]")
        lanes.append(
            _wrap(f"network.lanes[{k}]", lambda a: LaneSpec(int(a["index"]), float(a["start"]), float(a["end"])), ln)
        )
    ramps = []
    for k, r in enumerate(d.get("ramps", [])):
        r = _obj(r, f"network.ramps[{k}]")
        ramps.append(
            _wrap(
                f"network.ramps[{k}]",
                lambda a: RampSpec(str(a["kind"]), int(a["lane"]), float(a["x"]), int(a.get("segment", 0))),
                r,
            )
        )
    detectors = [float(x) for x in d.get("detectors", [])]
    return RoadNetwork(
        total_length=float(d["length"]),
        lanes=lanes,
        ramps=sorted(ramps, key=lambda r: r.position_x),
        detectors=detectors,
        segment_count=max(len(detectors) - 1, 0),
        offramp_window=float(d.get("offramp_window", 500.0)),
    )


def _origin(raw, path, network):
    if raw == MAINLINE:
        return MAINLINE
    _require(isinstance(raw, int) and not isinstance(raw, bool), path, f"must be 'mainline' or an on-ramp index, got {raw!r}")
    _require(0 <= raw < len(network.on_ramps), path, f"on-ramp {raw} does not exist ({len(network.on_ramps)} on-ramps)")
    return raw


def _destinations(d, path, network, origin_x):
    d = _obj(d, path)
    out = {}
    for key, frac in d.items():
        if key == MAINLINE:
            out[MAINLINE] = float(frac)
            continue
        try:
            idx = int(key)
        except ValueError:
            raise ScenarioError(f"{path}: key {key!r} must be 'mainline' or an off-ramp index") from None
        _require(0 <= idx < len(network.off_ramps), f"{path}.{key}", "off-ramp does not exist")
        _require(
            network.off_ramps[idx].position_x > origin_x, f"{path}.{key}", "off-ramp lies upstream of the origin"
        )
        out[idx] = float(frac)
    return out


def _profile(d, path, network) -> DemandProfile:
    d = _obj(d, path)
    origin = _origin(d.get("origin", MAINLINE), f"{path}.origin", network)
    origin_x = 0.0 if origin == MAINLINE else network.on_ramps[origin].position_x
    ivs = d.get("intervals")
    _require(isinstance(ivs, list) and ivs, f"{path}.intervals", "must be a non-empty list")
    intervals = []
    for k, iv in enumerate(ivs):
        p = f"{path}.intervals[{k}]"
        iv = _obj(iv, p)
        for key in ("start", "end", "flow"):
            _require(key in iv, f"{p}.{key}", "is required")
        dests = _destinations(iv.get("destinations", {MAINLINE: 1.0}), f"{p}.destinations", network, origin_x)
        intervals.append(
            _wrap(p, lambda a: DemandInterval(float(a["start"]), float(a["end"]), float(a["flow"]), dests), iv)
        )
    return _wrap(path, lambda ivl: DemandProfile(origin, tuple(ivl)), intervals)


def _probe(d, path, network) -> ProbeSpec:
    d = _obj(d, path)
    for key in ("name", "entry_time", "lane"):
        _require(key in d, f"{path}.{key}", "is required")
    lane = d["lane"]
    _require(isinstance(lane, int) and network.lane_exists(lane, 0.0), f"{path}.lane", f"no lane {lane!r} at the entry")
    mobil = None
    if "mobil" in d:
        mobil = _wrap(f"{path}.mobil", lambda m: MobilParams(**_obj(m, f"{path}.mobil")), d["mobil"])
    t = d["entry_time"]
    _require(isinstance(t, (int, float)) and t >= 0, f"{path}.entry_time", "must be a number >= 0")
    return ProbeSpec(str(d["name"]), float(t), lane, mobil)
