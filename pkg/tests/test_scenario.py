import copy
import json

import pytest

from mobilsim.core import MobilParams
from mobilsim.scenario import ScenarioError, bundled, bundled_names, load_scenario, parse_scenario

MINIMAL = {
    "network": {"length": 2000, "full_lanes": 2, "drop_x": 800, "segments": 5, "off_segments": [2], "on_segments": [4]},
    "demand": [
        {"origin": "mainline", "intervals": [{"start": 0, "end": 600, "flow": 3000, "destinations": {"mainline": 0.9, "0": 0.1}}]},
        {"origin": 0, "intervals": [{"start": 0, "end": 600, "flow": 300}]},
    ],
    "defaults": {"mobil": {"p": 0.5, "delta_a_th": 0.3}},
    "sim": {"dt": 0.4, "duration": 600, "seed": 3, "congestion_onset": 300},
    "probes": [{"name": "a", "entry_time": 10, "lane": 1}, {"name": "b", "entry_time": 20, "lane": 0, "mobil": {"p": 0.2}}],
}


def test_bundled_scenarios_load():
    names = bundled_names()
    assert "default_a20_like" in names and "desk_sweep" in names
    for name in names:
        sc = load_scenario(bundled(name))
        assert sc.name
        assert sc.config.dt > 0


def test_default_scenario_content():
    sc = load_scenario(bundled("default_a20_like"))
    assert sc.network.total_length == 9000
    assert sc.config.duration == 14400 and sc.config.dt == 0.4
    assert sc.config.congestion_onset == 5400
    assert len(sc.probes) == 12
    assert [p.entry_time for p in sc.probes][:2] == [2326, 3090]


def test_parse_minimal():
    sc = parse_scenario(copy.deepcopy(MINIMAL), "mini")
    assert sc.name == "mini"
    assert sc.demand[0].intervals[0].destinations == {"mainline": 0.9, 0: 0.1}
    assert sc.demand[1].origin == 0
    assert sc.probes[0].mobil is None
    assert sc.probes[1].mobil == MobilParams(p=0.2)
    swapped = sc.with_probe_mobil(MobilParams(0.9, 2.2))
    assert all(p.mobil == MobilParams(0.9, 2.2) for p in swapped.probes)
    assert sc.probes[0].mobil is None  # original untouched


def test_explicit_network():
    doc = copy.deepcopy(MINIMAL)
    doc["network"] = {
        "length": 1000,
        "lanes": [{"index": 0, "start": 0, "end": 1000}, {"index": 1, "start": 0, "end": 400}],
        "ramps": [{"kind": "on", "lane": 0, "x": 600}, {"kind": "off", "lane": 0, "x": 800}],
        "detectors": [0, 500, 1000],
    }
    sc = parse_scenario(doc)
    assert sc.network.n_lanes == 2 and sc.network.segment_count == 2


def _mutate(path, value):
    doc = copy.deepcopy(MINIMAL)
    node = doc
    for key in path[:-1]:
        node = node[key]
    if value is KeyError:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return doc


@pytest.mark.parametrize(
    "path, value, where",
    [
        (("sim",), KeyError, "sim"),
        (("sim", "dt"), 0, "sim"),
        (("sim", "bogus"), 1, "sim"),
        (("network", "bogus"), 1, "network"),
        (("defaults", "mobil", "p"), -1, "defaults.mobil"),
        (("demand", 0, "origin"), 5, "demand[0].origin"),
        (("demand", 0, "intervals", 0, "flow"), -5, "demand[0].intervals[0]"),
        (("demand", 0, "intervals", 0, "destinations"), {"mainline": 0.5}, "demand[0].intervals[0]"),
        (("demand", 0, "intervals", 0, "destinations"), {"7": 1.0}, "demand[0].intervals[0].destinations.7"),
        (("demand", 1, "intervals", 0, "destinations"), {"0": 1.0}, "demand[1].intervals[0].destinations.0"),
        (("demand", 0, "intervals"), [], "demand[0].intervals"),
        (("probes", 0, "lane"), 9, "probes[0].lane"),
        (("probes", 1, "name"), "a", "probes"),
        (("probes", 1, "entry_time"), 1, "probes"),
        (("probes", 0, "entry_time"), -1, "probes[0].entry_time"),
        (("probes", 0, "mobil"), {"q": 1}, "probes[0].mobil"),
    ],
)
def test_errors_name_the_field(path, value, where):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(_mutate(path, value))
    assert str(exc.value).startswith(where + ":") or str(exc.value).startswith(where + "."), str(exc.value)


def test_json_syntax_error_reports_line(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "sim": {"dt": 0.4,\n  }\n}\n')
    with pytest.raises(ScenarioError, match=r"line 3, column 3"):
        load_scenario(bad)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "nope.json")


def test_roundtrip_file(tmp_path):
    f = tmp_path / "mini.json"
    f.write_text(json.dumps(MINIMAL))
    assert load_scenario(f).name == "mini"
