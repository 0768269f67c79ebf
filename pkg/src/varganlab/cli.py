"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
from pathlib import Path

from . import data as datamod
from . import harness
from .train import CheckpointError, ConfigError, TrainConfig, TrainingAborted

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def coerce(name: str, raw: str):
    """Parse a command-line string for config field ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown config field: {name}")
    typ = str(_FIELDS[name].type)
    if raw.lower() in ("none", "null") and "None" in typ:
        return None
    try:
        if "bool" in typ:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if "int" in typ and "float" not in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_overrides(tokens: list[str]) -> dict:
    """``--key value`` / ``--key=value`` pairs to a field dict."""
    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"{key}: missing value")
            raw = tokens[i + 1]
            i += 2
        key = key.replace("-", "_")
        out[key] = coerce(key, raw)
    return out


def load_config(path, overrides: dict) -> TrainConfig:
    base = {}
    if path:
        try:
            base = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    return TrainConfig.from_dict({**base, **overrides})


def _out_dir(args, config: TrainConfig) -> Path:
    if args.out:
        return Path(args.out)
    return harness.default_root() / (args.name or f"{config.variant}_{config.dataset}")


# -- subcommands --------------------------------------------------------------


def cmd_train(args, extra) -> int:
    config = load_config(args.config, parse_overrides(extra))
    plan = harness.ExperimentPlan(config, args.repeats, args.base_seed, _out_dir(args, config),
                                  plots=not args.no_plots, workers=args.workers)
    table = harness.run_experiment(plan)
    print(table.render(), end="")
    print(f"outputs in {plan.out_dir}")
    return EXIT_OK


def _grid(specs: list[str]) -> list[dict]:
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--grid expects key=v1,v2 (got {spec!r})")
        key, values = spec.split("=", 1)
        key = key.replace("-", "_")
        axes.append([(key, coerce(key, v)) for v in values.split(",")])
    return [dict(combo) for combo in itertools.product(*axes)]


def cmd_sweep(args, extra) -> int:
    overrides = parse_overrides(extra)
    combos = _grid(args.grid)
    swept = list(combos[0]) if combos else []
    configs = [load_config(args.config, {**overrides, **c}) for c in combos]  # validate all first
    root = Path(args.out) if args.out else harness.default_root() / (args.name or "sweep")
    run_dirs, failed = [], 0
    for combo, config in zip(combos, configs):
        sub = root / "_".join(f"{k}-{v}" for k, v in combo.items())
        plan = harness.ExperimentPlan(config, args.repeats, args.base_seed, sub,
                                      plots=not args.no_plots, workers=args.workers)
        try:
            harness.run_experiment(plan)
        except harness.RunFailed as exc:
            print(f"{sub}: {exc}", file=sys.stderr)
            failed += 1
        run_dirs += [p for p in harness.run_dirs_under(sub) if harness._is_run_dir(p)
                     and json.loads((p / "manifest.json").read_text())["status"] == "completed"]
    if run_dirs:
        group = tuple(dict.fromkeys(["variant", *swept]))
        table = harness.summarize(run_dirs, group_by=group)
        table.write(root)
        print(table.render(), end="")
    return EXIT_ABORT if failed else EXIT_OK


def cmd_summarize(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
    dirs = [d for path in args.dirs for d in harness.run_dirs_under(path)]
    group = tuple(args.group_by.split(",")) if args.group_by else ("variant",)
    table = harness.summarize(dirs, group_by=group)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        table.write(args.out)
    if args.json:
        print(table.to_json(), end="")
    else:
        print(table.render(), end="")
    return EXIT_OK


def cmd_plot(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
    written = []
    for d in harness.run_dirs_under(args.dir):
        out = Path(args.out) if args.out else d / "plots"
        written += harness.plot_run(d, out)
    for w in written:
        print(w)
    return EXIT_OK


def cmd_enumerate(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
    spec = datamod.BinaryPatternSpec(args.side, connectivity=args.connectivity)
    if spec.octant_bits > 24:
        raise ConfigError(f"side: {spec.octant_bits} octant bits is too many to enumerate")
    images = datamod.enumerate_designs(args.side)
    hp = datamod.classify_images(images, args.connectivity)
    flat = images.reshape(len(images), -1)
    print(f"side {args.side}, octant bits {spec.octant_bits}, connectivity {args.connectivity}")
    print(f"designs {len(flat)}  HP {int(hp.sum())}  LP {int((~hp).sum())}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["code", "category", "pattern"])
            for code, (row, is_hp) in enumerate(zip(flat, hp)):
                w.writerow([code, "HP" if is_hp else "LP", "".join(map(str, row))])
    return EXIT_OK


def cmd_grad_check(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
    from . import gradcheck

    names = args.only.split(",") if args.only else None
    if names:
        unknown = sorted(set(names) - set(gradcheck.suite()))
        if unknown:
            raise ConfigError(f"only: unknown check(s) {', '.join(unknown)}")
    results = gradcheck.run_suite(args.instances, args.seed, names)
    bad = 0
    for name, err in results.items():
        tol = gradcheck.tolerance(name)
        ok = err < tol
        bad += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:32s} {err:.3e} (tol {tol:.0e})")
    return EXIT_ABORT if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="varganlab", allow_abbrev=False,
        description="GAN mode-collapse lab. Config fields are set with --key value; "
                    f"outputs go under ${harness.RUNS_ENV} (default ./runs).")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--repeats", type=int, default=1)
        sp.add_argument("--base-seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--name", help="experiment name under the output root")
        sp.add_argument("--no-plots", action="store_true")

    sp = sub.add_parser("train", allow_abbrev=False, help="train one configuration for some repeats")
    run_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", allow_abbrev=False, help="train every combination of --grid values")
    run_opts(sp)
    sp.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                    help="a config field and its values; repeatable")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("summarize", help="aggregate completed runs")
    sp.add_argument("dirs", nargs="+", help="run or experiment directories")
    sp.add_argument("--group-by", default=None, help="comma-separated config fields")
    sp.add_argument("--out", help="write summary.json/summary.txt here")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("plot", help="SVG plots for a run or experiment")
    sp.add_argument("dir")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("enumerate-designs", help="enumerate symmetric binary designs")
    sp.add_argument("--side", type=int, default=9)
    sp.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    sp.add_argument("--out", help="CSV of every design")
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("grad-check", help="finite-difference gradient suite")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--only", help="comma-separated check names")
    sp.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, harness.RunFailed, CheckpointError, FileNotFoundError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
