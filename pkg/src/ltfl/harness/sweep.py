"""Grid sweeps over config keys, schemes and seeds.

A sweep file is an ordinary scenario config with one extra ``sweep`` section::

    sweep:
      schemes: [ltfl]
      grid:
        channel.fading_coeff: [0.01, 0.02, 0.03]

Every combination of grid values is run for every scheme and every seed in
``scenario.seeds``.  Outputs: ``summary.csv`` (one row per scheme, grid point
and seed, grid values as leading columns) and ``long.csv`` (one row per
round of every run, for plotting).  With an output directory each run also
keeps its own ``metrics.csv`` under ``<point>/<scheme>/seed<k>/``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..bound import ConfigurationError
from .config import SCHEMES, ScenarioConfig, from_dict
from .simulation import SUMMARY_COLUMNS, Simulation, write_rows

LONG_COLUMNS = ["scheme", "seed", "round", "test_accuracy", "train_loss", "round_delay", "cum_delay", "cum_energy",
                "devices_received", "gamma"]


@dataclass
class SweepSpec:
    base: ScenarioConfig
    grid: dict = field(default_factory=dict)
    schemes: list = field(default_factory=list)

    def points(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


def load_sweep(path) -> SweepSpec:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    spec = raw.pop("sweep", None) or {}
    base = from_dict(raw)
    schemes = list(spec.get("schemes") or [base.scenario.scheme])
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ConfigurationError(f"unknown schemes {bad}")
    grid = dict(spec.get("grid") or {})
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigurationError(f"grid values for {key!r} must be a non-empty list")
        base.with_overrides({key: values[0]})  # rejects unknown keys early
    return SweepSpec(base, grid, schemes)


def _point_label(point: dict) -> str:
    if not point:
        return "base"
    return "_".join(f"{k.split('.')[-1]}={v}" for k, v in point.items())


def run_sweep(spec: SweepSpec, out_dir=None, seeds=None, verbose: bool = False, log=None) -> tuple[list, list]:
    """Run the whole grid; returns ``(summary_rows, long_rows)``."""
    seeds = list(spec.base.scenario.seeds if seeds is None else seeds)
    out = None if out_dir is None else Path(out_dir)
    summary, long_rows = [], []
    for point in spec.points():
        config = spec.base.with_overrides(point)
        for scheme in spec.schemes:
            for seed in seeds:
                run_dir = None if out is None else out / _point_label(point) / scheme / f"seed{seed}"
                result = Simulation(config, seed, scheme, run_dir, verbose).run()
                summary.append({**point, **result.summary})
                for row in result.rows:
                    long_rows.append({**point, **{c: row.get(c, "") for c in LONG_COLUMNS}})
                if log is not None:
                    log(f"{_point_label(point)} {scheme} seed={seed} final_acc={result.summary['final_accuracy']:.4f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        keys = list(spec.grid)
        write_rows(out / "summary.csv", summary, keys + SUMMARY_COLUMNS)
        write_rows(out / "long.csv", long_rows, keys + LONG_COLUMNS)
    return summary, long_rows
