"""Seeded multi-repeat experiments, run manifests and summary tables."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, plots
from .train import (ConfigError, RunHistory, TrainConfig, Trainer, TrainingAborted, checkpoint, restore,
                    train)

RUNS_ENV = "VARGANLAB_RUNS"
SUMMARY_METRICS = ("modes_covered", "kl", "high_quality_fraction", "hp_unique", "lp_unique",
                   "accuracy", "accuracy_hp", "accuracy_lp")
SCATTER_SAMPLES = 2000


class RunFailed(RuntimeError):
    pass


def default_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


def config_hash(config: TrainConfig) -> str:
    """Git blob hash of the canonical JSON config."""
    body = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


@dataclass
class ExperimentPlan:
    config: TrainConfig
    repeats: int = 5
    base_seed: int | None = None
    out_dir: Path | None = None
    plots: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"repeats: must be >= 1 (got {self.repeats})")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1 (got {self.workers})")
        if self.base_seed is None:
            self.base_seed = self.config.seed
        self.out_dir = Path(self.out_dir) if self.out_dir else default_root() / self.config.variant

    def repeat_config(self, i: int) -> TrainConfig:
        return dataclasses.replace(self.config, seed=self.base_seed + i)


def _run_repeat(args) -> dict:
    """Train one repeat and write its directory. Runs in a worker process."""
    config, run_dir = args
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    try:
        history, bundle = train(config)
    except TrainingAborted as exc:
        (run_dir / "manifest.json").write_text(json.dumps({
            "status": "aborted", "error": str(exc), "config": config.to_dict(),
            "config_hash": config_hash(config), "seed": config.seed, "started": started,
        }, indent=2))
        return {"run_dir": str(run_dir), "status": "aborted", "error": str(exc)}
    history.to_csv(run_dir / "history.csv")
    checkpoint(bundle, run_dir / "checkpoint.json")
    manifest = {
        "status": "completed",
        "variant": config.variant,
        "dataset": config.dataset,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "totals": {
            "generator_updates": history.generator_updates,
            "evaluations": len(history.records),
            "wall_seconds": history.wall_seconds,
        },
        "eval_wall_seconds": [r["wall_seconds"] for r in history.records],
        "final": {k: v for k, v in history.final.items() if k != "wall_seconds"},
        "files": ["history.csv", "checkpoint.json"],
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return {"run_dir": str(run_dir), "status": "completed"}


def _final_samples(run_dir: Path, config: TrainConfig):
    """Samples from a stored checkpoint, in data space, for scatter plots."""
    trainer = Trainer(dataclasses.replace(config, epochs=1))
    trainer.bundle = restore(run_dir / "checkpoint.json")
    if trainer.ds.kind != "mixture":
        return None, None
    x = trainer.ds.to_data_space(trainer.generate(SCATTER_SAMPLES, seed=[config.seed, 3]))
    return x, trainer.ds.mixture.centers


def plot_run(run_dir, out_dir=None) -> list[Path]:
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    manifest = json.loads((run_dir / "manifest.json").read_text())
    config = TrainConfig.from_dict(manifest["config"])
    history = RunHistory.from_csv(run_dir / "history.csv")
    samples, centers = _final_samples(run_dir, config)
    return plots.emit_plots({run_dir.name: history.records}, samples, centers, out_dir,
                            prefix=f"{run_dir.name}_")


def _is_run_dir(path: Path) -> bool:
    m = path / "manifest.json"
    return m.exists() and "status" in json.loads(m.read_text())


def run_dirs_under(path) -> list[Path]:
    """``path`` itself if it is a run directory, else its ``run_<i>`` children."""
    path = Path(path)
    if _is_run_dir(path):
        return [path]
    runs = [p for p in path.glob("run_*") if p.is_dir() and p.name[4:].isdigit()]
    if not runs:
        raise FileNotFoundError(f"no run directories under {path}")
    return sorted(runs, key=lambda p: int(p.name[4:]))


def run_experiment(plan: ExperimentPlan) -> "SummaryTable":
    """Execute every repeat, then write plots, ``summary.json``, ``summary.txt``
    and an experiment ``manifest.json`` listing all outputs.

    Raises :class:`RunFailed` after writing what it can if any repeat aborted.
    """
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(plan.repeat_config(i), str(out / f"run_{i}")) for i in range(plan.repeats)]
    start = time.perf_counter()
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            results = list(pool.map(_run_repeat, jobs))
    else:
        results = [_run_repeat(j) for j in jobs]
    completed = [Path(r["run_dir"]) for r in results if r["status"] == "completed"]
    files = [str(Path(r["run_dir"]).relative_to(out) / "manifest.json") for r in results]
    files += [str(p.relative_to(out) / f) for p in completed for f in ("history.csv", "checkpoint.json")]

    table = None
    if completed:
        if plan.plots:
            histories = {p.name: RunHistory.from_csv(p / "history.csv").records for p in completed}
            written = plots.emit_plots(histories, None, None, out / "plots")
            for p in completed:
                written += plot_run(p, out / "plots")
            files += [str(w.relative_to(out)) for w in written]
        table = summarize(completed)
        table.write(out)
        files += ["summary.json", "summary.txt"]
    manifest = {
        "config": plan.config.to_dict(),
        "config_hash": config_hash(plan.config),
        "repeats": plan.repeats,
        "base_seed": plan.base_seed,
        "runs": results,
        "wall_seconds": time.perf_counter() - start,
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    failed = [r for r in results if r["status"] != "completed"]
    if failed:
        raise RunFailed(f"{len(failed)} of {plan.repeats} repeats aborted: "
                        + "; ".join(r["error"] for r in failed))
    return table


# -- aggregation -------------------------------------------------------------


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation; std is 0 for a single value."""
    values = [float(v) for v in values]
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


@dataclass
class SummaryTable:
    rows: dict[str, dict] = field(default_factory=dict)  # variant -> metric -> stats

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=2, sort_keys=True) + "\n"

    def render(self) -> str:
        metrics = [m for m in SUMMARY_METRICS + ("wall_seconds",)
                   if any(m in r for r in self.rows.values())]
        header = ["variant", "runs"] + metrics
        lines = []
        for variant, row in self.rows.items():
            cells = [variant, str(row["runs"]) + ("*" if row["single_run"] else "")]
            for m in metrics:
                cells.append(f"{row[m]['mean']:.2f} ± {row[m]['std']:.2f}" if m in row else "-")
            lines.append(cells)
        widths = [max(len(header[k]), *(len(l[k]) for l in lines)) for k in range(len(header))]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(l) for l in lines]
        if any(r["single_run"] for r in self.rows.values()):
            out.append("* single run: std reported as 0")
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        # wall time varies run to run, so it stays out of the JSON
        stable = SummaryTable({v: {k: s for k, s in r.items() if k != "wall_seconds"}
                               for v, r in self.rows.items()})
        (out_dir / "summary.json").write_text(stable.to_json())
        (out_dir / "summary.txt").write_text(self.render())


def summarize(run_dirs, group_by=("variant",)) -> SummaryTable:
    """Final-evaluation metrics aggregated per variant, rows sorted by name.

    ``group_by`` names config fields whose values label a row; sweeps over
    anything but the variant pass the swept fields here.
    """
    grouped: dict[str, list[tuple[dict, float]]] = {}
    for d in run_dirs:
        d = Path(d)
        mpath, hpath = d / "manifest.json", d / "history.csv"
        if not mpath.exists() or not hpath.exists():
            raise FileNotFoundError(f"incomplete run directory: {d}")
        manifest = json.loads(mpath.read_text())
        if manifest.get("status") != "completed":
            raise RunFailed(f"run did not complete: {d}")
        history = RunHistory.from_csv(hpath)
        if not history.records:
            raise FileNotFoundError(f"run has no evaluation records: {d}")
        wall = manifest.get("totals", {}).get("wall_seconds")
        label = ",".join(str(manifest["config"][k]) if k != "variant" else manifest["variant"]
                         for k in group_by)
        grouped.setdefault(label, []).append((history.final, wall))
    table = SummaryTable()
    for variant in sorted(grouped):
        runs = grouped[variant]
        row: dict = {"runs": len(runs), "single_run": len(runs) == 1}
        for m in SUMMARY_METRICS:
            vals = [final[m] for final, _ in runs if m in final]
            if len(vals) == len(runs):
                mean, std = mean_std(vals)
                row[m] = {"mean": mean, "std": std}
        walls = [w for _, w in runs if w is not None]
        if len(walls) == len(runs):
            mean, std = mean_std(walls)
            row["wall_seconds"] = {"mean": mean, "std": std}
        table.rows[variant] = row
    return table


def first_epoch_reaching(records: list[dict], key: str, threshold: float) -> int | None:
    for r in records:
        if r.get(key, -np.inf) >= threshold:
            return r["epoch"]
    return None
