"""Grid sweeps over the probes' MOBIL parameters (politeness p, threshold)."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mobilsim.core import MobilParams
from mobilsim.engine import run
from mobilsim.metrics import REGIMES, classify_regime, travel_time
from mobilsim.scenario import Scenario

DEFAULT_P = tuple(round(0.1 * k, 10) for k in range(1, 10))
DEFAULT_TH = tuple(round(0.2 * k, 10) for k in range(1, 12))
THREADS_ENV = "MOBILSIM_THREADS"


def parse_range(spec: str) -> List[float]:
    """Inclusive ``start:stop:step`` range, or a comma-separated list.

    Raises:
        ValueError: on malformed input or an empty range.
    """
    spec = spec.strip()
    if ":" not in spec:
        values = [float(v) for v in spec.split(",") if v.strip()]
    else:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {spec!r} must look like start:stop:step")
        start, stop, step = (float(v) for v in parts)
        if not step > 0:
            raise ValueError(f"range {spec!r}: step must be > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + k * step, 10) for k in range(max(n, 0))]
    if not values:
        raise ValueError(f"range {spec!r} is empty")
    return values


@dataclass
class SweepGrid:
    """Per-cell probe travel times; axis 0 is p, axis 1 the threshold.

    ``travel[i, j, k]`` is probe k's travel time in cell (p_values[i],
    th_values[j]), NaN if it did not finish. ``regime[i, j, k]`` holds the
    probe's regime in that cell (entry times can shift between cells because
    probes enter one at a time).
    """

    p_values: List[float]
    th_values: List[float]
    probe_names: List[str]
    travel: np.ndarray
    regime: np.ndarray
    incomplete: Dict[Tuple[int, int], List[str]] = field(default_factory=dict)

    @property
    def shape(self):
        return len(self.p_values), len(self.th_values)

    def averages(self, regime: Optional[str] = None) -> np.ndarray:
        """Cell means over the probes of one regime (all probes if None).

        NaN where the cell is incomplete or has no probe in that regime.
        """
        out = np.full(self.shape, np.nan)
        for (i, j), _ in np.ndenumerate(out):
            if (i, j) in self.incomplete:
                continue
            sel = np.ones(len(self.probe_names), dtype=bool) if regime is None else self.regime[i, j] == regime
            if sel.any():
                out[i, j] = math.fsum(self.travel[i, j, sel]) / int(sel.sum())
        return out

    def probe_matrix(self, name: str) -> np.ndarray:
        return self.travel[:, :, self.probe_names.index(name)]


def _effective_jobs(jobs: Optional[int]) -> int:
    jobs = jobs or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {cap!r}") from None
    return max(1, jobs)


def _run_cell(args):
    scenario, p, th, stop_early = args
    mobil = MobilParams(p=p, delta_a_th=th, b_safe=scenario.config.mobil.b_safe)
    sc = scenario.with_probe_mobil(mobil)
    out = run(sc.network, sc.config, sc.demand, sc.probes, stop_after_probes=stop_early)
    by_name = {r.probe_name: r for r in out.records if r.probe}
    times, regimes = [], []
    for spec in sc.probes:
        rec = by_name.get(spec.name)
        tt = travel_time(rec) if rec is not None else None
        times.append(math.nan if tt is None else tt)
        regimes.append(classify_regime(rec.entry_time, sc.config) if rec is not None else "")
    return times, regimes, list(out.incomplete_probes)


def run_sweep(
    scenario: Scenario,
    p_values: Sequence[float] = DEFAULT_P,
    th_values: Sequence[float] = DEFAULT_TH,
    jobs: Optional[int] = 1,
    stop_after_probes: bool = True,
) -> SweepGrid:
    """Run the scenario once per (p, threshold) cell with the probes carrying those values.

    Background vehicles keep the scenario's default MOBIL parameters and every
    cell uses the scenario seed. ``jobs`` is capped by ``MOBILSIM_THREADS``.
    """
    p_values, th_values = [float(p) for p in p_values], [float(t) for t in th_values]
    if not p_values or not th_values:
        raise ValueError("sweep grid is empty")
    if not scenario.probes:
        raise ValueError("scenario has no probes to sweep")
    cells = [(i, j) for i in range(len(p_values)) for j in range(len(th_values))]
    tasks = [(scenario, p_values[i], th_values[j], stop_after_probes) for i, j in cells]

    n_jobs = min(_effective_jobs(jobs), len(tasks))
    if n_jobs == 1:
        results = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_cell, tasks))

    names = [p.name for p in scenario.probes]
    travel = np.full((len(p_values), len(th_values), len(names)), np.nan)
    regime = np.full((len(p_values), len(th_values), len(names)), "", dtype=object)
    incomplete = {}
    for (i, j), (times, regs, missing) in zip(cells, results):
        travel[i, j] = times
        regime[i, j] = regs
        if missing:
            incomplete[(i, j)] = missing
    return SweepGrid(p_values, th_values, names, travel, regime, incomplete)


def _cell(v: float) -> str:
    return "NA" if math.isnan(v) else f"{v:.6g}"


def emit_grid(grid: SweepGrid, path, matrix: Optional[np.ndarray] = None, heatmap: bool = False, title: str = "") -> Path:
    """Write a p-by-threshold matrix (all-probe averages by default) as CSV.

    With ``heatmap`` a PNG is written next to the CSV (needs matplotlib).
    """
    path = Path(path)
    values = grid.averages() if matrix is None else np.asarray(matrix, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"matrix shape {values.shape} does not match grid {grid.shape}")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["p\\th"] + [f"{t:g}" for t in grid.th_values])
        for i, p in enumerate(grid.p_values):
            w.writerow([f"{p:g}"] + [_cell(v) for v in values[i]])
    if heatmap:
        _heatmap(grid, values, path.with_suffix(".png"), title or path.stem)
    return path


def _heatmap(grid, values, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    im = ax.imshow(np.ma.masked_invalid(values), origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(grid.th_values)), [f"{t:g}" for t in grid.th_values])
    ax.set_yticks(range(len(grid.p_values)), [f"{p:g}" for p in grid.p_values])
    ax.set_xlabel("switching threshold (m/s²)")
    ax.set_ylabel("politeness p")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="travel time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _num(v):
    return None if math.isnan(v) else round(float(v), 6)


def summary(grid: SweepGrid, scenario_name: str = "") -> dict:
    cells = []
    averages = {reg: grid.averages(reg) for reg in REGIMES}
    overall = grid.averages()
    for i, p in enumerate(grid.p_values):
        for j, th in enumerate(grid.th_values):
            cells.append(
                {
                    "p": p,
                    "th": th,
                    "travel_times": {n: _num(grid.travel[i, j, k]) for k, n in enumerate(grid.probe_names)},
                    "regimes": {n: grid.regime[i, j, k] for k, n in enumerate(grid.probe_names)},
                    "averages": {**{reg: _num(averages[reg][i, j]) for reg in REGIMES}, "all": _num(overall[i, j])},
                    "incomplete": grid.incomplete.get((i, j), []),
                }
            )
    return {
        "scenario": scenario_name,
        "p_values": grid.p_values,
        "th_values": grid.th_values,
        "probes": grid.probe_names,
        "cells": cells,
    }


def write_outputs(grid: SweepGrid, out_dir, scenario_name: str = "", heatmap: bool = False) -> List[Path]:
    """Grid CSVs (all probes, each regime, each probe) plus ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [emit_grid(grid, out / "grid_all.csv", heatmap=heatmap, title="all probes")]
    for reg in REGIMES:
        paths.append(emit_grid(grid, out / f"grid_{reg}.csv", grid.averages(reg), heatmap=heatmap, title=reg))
    for name in grid.probe_names:
        paths.append(
            emit_grid(grid, out / f"grid_probe_{name}.csv", grid.probe_matrix(name), heatmap=heatmap, title=f"probe {name}")
        )
    summ = out / "summary.json"
    summ.write_text(json.dumps(summary(grid, scenario_name), indent=2) + "\n", encoding="utf-8")
    paths.append(summ)
    return paths
