"""Command-line interface: ``mobilsim run | sweep | field``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from mobilsim import __version__
from mobilsim.engine import run, write_probe_log_csv, write_trajectory_csv
from mobilsim.metrics import (
    read_trajectory_csv,
    regime_averages,
    speed_field,
    speed_fields_by_lane,
    write_speed_field_csv,
    write_travel_times_csv,
)
from mobilsim.scenario import ScenarioError, bundled, bundled_names, load_scenario

EXIT_OK = 0
EXIT_COLLISION = 1
EXIT_USAGE = 2

log = logging.getLogger("mobilsim")


class _UsageError(Exception):
    pass


def _scenario(arg: str):
    path = Path(arg)
    if not path.exists():
        try:
            path = bundled(arg[:-5] if arg.endswith(".json") else arg)
        except FileNotFoundError:
            raise _UsageError(
                f"scenario {arg!r} not found (bundled scenarios: {', '.join(bundled_names())})"
            ) from None
    return load_scenario(path)


def _positive(name):
    def parse(text):
        try:
            val = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not val > 0 or math.isinf(val):
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {text}")
        return val

    return parse


def _fmt(v):
    return "n/a" if v is None or math.isnan(v) else f"{v:.1f} s"


def cmd_run(args) -> int:
    sc = _scenario(args.scenario)
    cfg = sc.config
    overrides = {k: getattr(args, k) for k in ("dt", "duration", "seed") if getattr(args, k) is not None}
    if args.trajectory:
        overrides["trajectory_every"] = args.trajectory_every
        overrides["trajectory_probes_only"] = args.probes_only
    try:
        cfg = dataclasses.replace(cfg, **overrides)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info("running %s: %d steps of %.3g s", sc.name, cfg.n_steps, cfg.dt)
    out = run(sc.network, cfg, sc.demand, sc.probes)

    write_travel_times_csv(out.records, out_dir / "travel_times.csv", cfg.congestion_onset)
    write_probe_log_csv(out, out_dir / "probe_log.csv")
    if args.trajectory:
        write_trajectory_csv(out, out_dir / "trajectory.csv")

    done = [r for r in out.records if r.exit_time is not None]
    avg_all = regime_averages(done, cfg.congestion_onset)
    probes = [r for r in out.records if r.probe]
    avg_probe = regime_averages(probes, cfg.congestion_onset)
    print(f"scenario        {sc.name}")
    print(f"steps           {out.steps} (dt={cfg.dt:g} s)")
    print(f"completed       {len(done)} vehicles, {out.counters['present']} still on the road, {out.counters['queued']} queued")
    print(f"collisions      {len(out.collisions)} (min gap {out.min_gap:.3f} m)")
    print(f"mean travel     free-flow {_fmt(avg_all['free-flow'])}, congested {_fmt(avg_all['congested'])}")
    if probes:
        print(f"probe travel    free-flow {_fmt(avg_probe['free-flow'])}, congested {_fmt(avg_probe['congested'])}")
    if out.incomplete_probes:
        print(f"unfinished probes: {', '.join(out.incomplete_probes)}")
    print(f"outputs in      {out_dir}")
    if out.collisions:
        print(f"error: {len(out.collisions)} collision event(s)", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def cmd_sweep(args) -> int:
    from mobilsim.sweep import DEFAULT_P, DEFAULT_TH, parse_range, run_sweep, write_outputs

    try:
        p_values = parse_range(args.p) if args.p else list(DEFAULT_P)
        th_values = parse_range(args.th) if args.th else list(DEFAULT_TH)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    sc = _scenario(args.scenario)
    if not sc.probes:
        raise _UsageError(f"scenario {sc.name} has no probes")
    log.info("sweeping %d x %d cells", len(p_values), len(th_values))
    grid = run_sweep(sc, p_values, th_values, jobs=args.jobs, stop_after_probes=not args.full)
    write_outputs(grid, args.out, sc.name, heatmap=args.heatmap)

    for reg in ("free-flow", "congested"):
        m = grid.averages(reg)
        print(f"{reg} average travel time (rows p, columns threshold)")
        print("p\\th  " + " ".join(f"{t:>7g}" for t in grid.th_values))
        for i, p in enumerate(grid.p_values):
            print(f"{p:<5g} " + " ".join("     NA" if np.isnan(v) else f"{v:7.1f}" for v in m[i]))
    if grid.incomplete:
        print(f"{len(grid.incomplete)} incomplete cell(s)")
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_field(args) -> int:
    try:
        traj = read_trajectory_csv(args.trajectory)
    except FileNotFoundError:
        raise _UsageError(f"trajectory log {args.trajectory!r} not found") from None
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fields = speed_fields_by_lane(traj, args.dx, args.dt, args.length, args.duration)
    fields["all"] = speed_field(traj, args.dx, args.dt, None, args.length, args.duration)
    for key, fld in fields.items():
        name = f"speed_field_lane{key}" if key != "all" else "speed_field_all"
        write_speed_field_csv(fld, out_dir / f"{name}.csv")
        if args.heatmap and fld.values.size:
            _field_png(fld, out_dir / f"{name}.png", name)
    n_x, n_t = fields["all"].shape
    print(f"{len(traj['t'])} samples -> {len(fields) - 1} lane field(s) of {n_x} x {n_t} cells in {out_dir}")
    return EXIT_OK


def _field_png(fld, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    n_x, n_t = fld.values.shape
    im = ax.imshow(
        np.ma.masked_invalid(fld.values), origin="lower", aspect="auto", cmap="RdYlGn",
        extent=(0, n_t * fld.dt, 0, n_x * fld.dx),
    )
    ax.set_xlabel("time (s)")
    ax.set_ylabel("position (m)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="speed (m/s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobilsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    p.add_argument("-o", "--out", default="mobilsim_out", help="output directory")
    p.add_argument("--dt", type=_positive("--dt"), help="time step override (s)")
    p.add_argument("--duration", type=float, help="duration override (s)")
    p.add_argument("--seed", type=int, help="RNG seed override")
    p.add_argument("--trajectory", action="store_true", help="write trajectory.csv")
    p.add_argument("--trajectory-every", type=int, default=1, metavar="N", help="log every N-th step (default 1)")
    p.add_argument("--probes-only", action="store_true", help="restrict the trajectory log to probes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a politeness x threshold grid for the probes")
    p.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    p.add_argument("-o", "--out", default="mobilsim_sweep", help="output directory")
    p.add_argument("--p", help="politeness values, start:stop:step or a,b,c (default 0.1:0.9:0.1)")
    p.add_argument("--th", help="threshold values (default 0.2:2.2:0.2)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count, capped by MOBILSIM_THREADS)")
    p.add_argument("--heatmap", action="store_true", help="also render PNG heatmaps (needs matplotlib)")
    p.add_argument("--full", action="store_true", help="simulate the full duration even after all probes left")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("field", help="space-time speed fields from a trajectory log")
    p.add_argument("trajectory", help="trajectory CSV written by 'run --trajectory'")
    p.add_argument("--dx", type=_positive("--dx"), default=391.0, help="space cell (m)")
    p.add_argument("--dt", type=_positive("--dt"), default=60.0, help="time cell (s)")
    p.add_argument("--length", type=_positive("--length"), help="road length; fixes the number of space cells")
    p.add_argument("--duration", type=_positive("--duration"), help="fixes the number of time cells")
    p.add_argument("-o", "--out", default="mobilsim_field", help="output directory")
    p.add_argument("--heatmap", action="store_true", help="also render PNG heatmaps (needs matplotlib)")
    p.set_defaults(func=cmd_field)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (_UsageError, ScenarioError) as exc:
        print(f"mobilsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"mobilsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
