import csv
import json

import pytest

from mobilsim.cli import main

SMALL = {
    "name": "small",
    "network": {"length": 1500, "full_lanes": 2, "drop_x": 600, "segments": 4, "off_segments": [], "on_segments": [3]},
    "demand": [
        {"origin": "mainline", "intervals": [{"start": 0, "end": 240, "flow": 3000}]},
        {"origin": 0, "intervals": [{"start": 0, "end": 240, "flow": 300}]},
    ],
    "sim": {"dt": 0.4, "duration": 240, "seed": 9, "congestion_onset": 120},
    "probes": [{"name": "a", "entry_time": 5, "lane": 0}, {"name": "b", "entry_time": 100, "lane": 2}],
}


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_run_writes_outputs(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(scenario), "-o", str(out), "--trajectory"]) == 0
    text = capsys.readouterr().out
    assert "collisions      0" in text
    assert "completed" in text and "mean travel" in text
    with open(out / "travel_times.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["id", "entry", "exit", "travel_time", "regime", "probe"]
    assert (out / "probe_log.csv").read_text().startswith("t,id,lane,inc_left,inc_right,threshold,decision\n")
    assert (out / "trajectory.csv").read_text().startswith("t,id,lane,x,v,a\n")


def test_run_is_idempotent(scenario, tmp_path):
    for k in "ab":
        assert main(["run", str(scenario), "-o", str(tmp_path / k), "--trajectory"]) == 0
    for name in ("travel_times.csv", "probe_log.csv", "trajectory.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dt_override_doubles_steps(scenario, tmp_path, capsys):
    main(["run", str(scenario), "-o", str(tmp_path / "a")])
    first = capsys.readouterr().out
    main(["run", str(scenario), "-o", str(tmp_path / "b"), "--dt", "0.2"])
    second = capsys.readouterr().out
    assert "steps           600 (dt=0.4 s)" in first
    assert "steps           1200 (dt=0.2 s)" in second


def test_missing_scenario_exits_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json"), "-o", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"network": {}, \n "sim": {"dt": -1}}')
    assert main(["run", str(bad), "-o", str(tmp_path)]) == 2
    assert "sim:" in capsys.readouterr().err
    bad.write_text('{"network": \n\n oops}')
    assert main(["run", str(bad), "-o", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_bad_dt_is_usage_error(scenario, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", str(scenario), "--dt", "0"])
    assert exc.value.code == 2


def test_sweep_small_grid(scenario, tmp_path, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", str(scenario), "--p", "0.2,0.8", "--th", "0.2:0.4:0.2", "--jobs", "1", "-o", str(out)]) == 0
    text = capsys.readouterr().out
    assert "free-flow average travel time" in text
    rows = (out / "grid_all.csv").read_text().splitlines()
    assert rows[0] == "p\\th,0.2,0.4"
    assert len(rows) == 3
    for name in ("grid_free-flow.csv", "grid_congested.csv", "grid_probe_a.csv", "grid_probe_b.csv", "summary.json"):
        assert (out / name).exists()


def test_sweep_jobs_identical(scenario, tmp_path):
    args = ["sweep", str(scenario), "--p", "0.3", "--th", "0.2,2.2"]
    assert main(args + ["--jobs", "1", "-o", str(tmp_path / "j1")]) == 0
    assert main(args + ["--jobs", "2", "-o", str(tmp_path / "j2")]) == 0
    for f in (tmp_path / "j1").iterdir():
        assert f.read_bytes() == (tmp_path / "j2" / f.name).read_bytes()


def test_sweep_empty_grid_exits_2(scenario, tmp_path):
    assert main(["sweep", str(scenario), "--p", " , ", "-o", str(tmp_path)]) == 2
    assert main(["sweep", str(scenario), "--th", "2:1:0.5", "-o", str(tmp_path)]) == 2


def test_field_from_run(scenario, tmp_path, capsys):
    main(["run", str(scenario), "-o", str(tmp_path / "r"), "--trajectory"])
    out = tmp_path / "f"
    code = main(["field", str(tmp_path / "r" / "trajectory.csv"), "--dx", "375", "--dt", "60",
                 "--length", "1500", "--duration", "240", "-o", str(out)])
    assert code == 0
    for k in range(4):
        rows = (out / f"speed_field_lane{k}.csv").read_text().splitlines()
        assert len(rows) == 1 + 4
        assert rows[0] == "x\\t,0,60,120,180"
    assert (out / "speed_field_all.csv").exists()


def test_field_empty_log(tmp_path, capsys):
    log = tmp_path / "t.csv"
    log.write_text("t,id,lane,x,v,a\n")
    assert main(["field", str(log), "-o", str(tmp_path / "f")]) == 0


def test_field_bad_inputs(tmp_path):
    log = tmp_path / "t.csv"
    log.write_text("t,id,lane,x,v,a\n1,2\n")
    assert main(["field", str(log), "-o", str(tmp_path / "f")]) == 2
    assert main(["field", str(tmp_path / "none.csv"), "-o", str(tmp_path / "f")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["field", str(log), "--dx", "0"])
    assert exc.value.code == 2


def test_bundled_name_resolves(tmp_path, capsys):
    code = main(["run", "desk_sweep", "-o", str(tmp_path), "--duration", "40"])
    assert code == 0
    assert "scenario        desk_sweep" in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "mobilsim", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("mobilsim ")
