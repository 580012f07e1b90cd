"""Command-line front end: run experiments, render reports, check configs.

Subcommands
-----------
run       execute one configuration over one or more seeds, writing one run
          directory per seed plus a cross-seed aggregate of the final
          archive metrics (mean and sample std).
report    render deterministic curves (CSV + SVG) and per-run archive
          heatmaps from previously written run directories.
validate  resolve and check a configuration without running anything.

All subcommands exit 0 on success.  Every failure path prints a single
machine-readable JSON object to stderr ({"error": {"type", "message"}})
and exits nonzero.

Configuration files are JSON.  Every field is optional; anything missing
falls back first to per-environment command-line defaults (evaluation
cadence, kernel determinism) and then to the trainer defaults.  Flags
override file values: --seeds, --scale, --out, --deterministic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .report import ReportError, aggregate_curves, generate_report
from .rl import PPOConfig
from .trainers import (ENVS, TRAINERS, TrainerConfig, run_training,
                       validate_config)

# fields a config file may set directly on the trainer configuration
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainerConfig)} - {"ppo"}
# run-level keys handled outside TrainerConfig
_SPEC_KEYS = {"env", "seeds", "ppo", "out"}

# knobs whose defaults differ per environment when the file doesn't set them:
# the toy task evaluates cheaply, the flight task amortizes evaluation over
# longer rollouts and pins the deterministic kernel path for replayability
_ENV_DEFAULTS = {
    "toy": {"eval_every": 10},
    "dogfight": {"eval_every": 25, "deterministic_kernel": True},
}

_AGGREGATE_METRICS = ("coverage", "qd_score", "max_fitness", "min_fitness")


class CliError(ValueError):
    """A user-facing configuration or invocation problem."""


def _fail(kind: str, message: str, code: int = 1) -> int:
    sys.stderr.write(json.dumps(
        {"error": {"type": kind, "message": message}}, sort_keys=True) + "\n")
    return code


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors keep the JSON error contract."""

    def error(self, message):
        raise CliError(message)


def _parse_seeds(text: str) -> list:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise CliError(f"--seeds expects comma-separated integers, got {text!r}")
    if not seeds:
        raise CliError("--seeds given but no seed values parsed")
    return seeds


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file {path} does not exist")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return raw


def resolve_config(raw: dict, *, seeds_override=None, scale_override=None,
                   deterministic=False):
    """Turn a raw config dict plus flag overrides into (TrainerConfig, seeds).

    The returned configuration carries seed 0; per-seed copies are minted by
    the run command.  Unknown keys are rejected by name so typos surface
    instead of silently falling back to defaults.
    """
    raw = dict(raw)
    unknown = sorted(set(raw) - _CONFIG_FIELDS - _SPEC_KEYS)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    if "env" in raw:
        raw["env_name"] = raw.pop("env")

    fields = {}
    env_name = raw.get("env_name", TrainerConfig.env_name)
    for key, value in _ENV_DEFAULTS.get(env_name, {}).items():
        fields[key] = value
    for key in _CONFIG_FIELDS:
        if key in raw:
            fields[key] = raw[key]
    if "lambda_arms" in fields:
        fields["lambda_arms"] = tuple(float(v) for v in fields["lambda_arms"])
    if "hidden" in fields:
        fields["hidden"] = tuple(int(v) for v in fields["hidden"])

    ppo_raw = raw.get("ppo", {})
    if not isinstance(ppo_raw, dict):
        raise CliError("config key 'ppo' must be a JSON object")
    ppo_fields = {f.name for f in dataclasses.fields(PPOConfig)}
    bad = sorted(set(ppo_raw) - ppo_fields)
    if bad:
        raise CliError(f"unknown ppo config keys: {', '.join(bad)}")
    fields["ppo"] = PPOConfig(**ppo_raw)

    seeds = raw.get("seeds", [0])
    if seeds_override is not None:
        seeds = seeds_override
    if not isinstance(seeds, (list, tuple)) or not seeds or \
            not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise CliError("seeds must be a non-empty list of integers")
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise CliError("seeds must be distinct")

    if scale_override is not None:
        fields["scale"] = scale_override
    if deterministic:
        fields["deterministic_kernel"] = True
    fields.pop("seed", None)

    try:
        config = TrainerConfig(seed=seeds[0], **fields)
    except TypeError as exc:
        raise CliError(f"bad config value: {exc}")
    validate_config(config)
    return config, seeds


def _config_json(config: TrainerConfig) -> dict:
    out = dataclasses.asdict(config)
    return out


def _aggregate_summaries(summaries: list) -> dict:
    """Mean and sample std of the final archive metrics across seeds."""
    agg = {}
    for key in _AGGREGATE_METRICS:
        vals = np.array([s["qd"][key] for s in summaries], dtype=float)
        mean = float(vals.mean())
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        agg[key] = {"mean": mean, "std": std}
    return agg


def cmd_run(args) -> int:
    raw = load_config_file(args.config) if args.config else {}
    seeds_override = _parse_seeds(args.seeds) if args.seeds else None
    config, seeds = resolve_config(
        raw, seeds_override=seeds_override, scale_override=args.scale,
        deterministic=args.deterministic)

    out_root = Path(args.out) if args.out else Path(raw.get("out", "runs"))
    out_root.mkdir(parents=True, exist_ok=True)

    started = time.time()
    summaries, run_dirs = [], []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        run_dir = out_root / f"seed_{seed}"
        sys.stderr.write(f"running {cfg.trainer} on {cfg.env_name} "
                         f"seed={seed} -> {run_dir}\n")
        result = run_training(cfg, out_dir=run_dir)
        summaries.append(result.summary)
        run_dirs.append(run_dir)

    aggregate = {
        "trainer": config.trainer,
        "env": config.env_name,
        "archive": config.archive,
        "seeds": seeds,
        "runs": [str(rd) for rd in run_dirs],
        "qd": _aggregate_summaries(summaries),
        "wall_clock_s": time.time() - started,
    }
    with open(out_root / "aggregate.json", "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
    sys.stdout.write(json.dumps(aggregate, indent=2, sort_keys=True) + "\n")
    return 0


def _expand_run_dirs(paths: list) -> list:
    """Accept run directories directly or experiment roots of seed_* runs."""
    out = []
    for p in paths:
        p = Path(p)
        if (p / "metrics.jsonl").is_file():
            out.append(p)
            continue
        children = sorted(c for c in p.glob("seed_*") if c.is_dir())
        if children:
            out.extend(children)
            continue
        raise ReportError(f"run {p} has no metrics.jsonl (and no seed_* runs)")
    return out


def cmd_report(args) -> int:
    run_dirs = _expand_run_dirs(args.runs)
    out_dir = Path(args.out) if args.out else Path(args.runs[0]) / "report"
    written = generate_report(run_dirs, out_dir)
    sys.stdout.write(json.dumps(
        {"report": written, "runs": [str(r) for r in run_dirs]},
        indent=2, sort_keys=True) + "\n")
    return 0


def cmd_validate(args) -> int:
    raw = load_config_file(args.config) if args.config else {}
    seeds_override = _parse_seeds(args.seeds) if args.seeds else None
    config, seeds = resolve_config(
        raw, seeds_override=seeds_override, scale_override=args.scale,
        deterministic=args.deterministic)
    resolved = _config_json(config)
    resolved["seeds"] = seeds
    sys.stdout.write(json.dumps({"ok": True, "config": resolved},
                                indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="phasic",
                     description="population training runs and reports")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="JSON configuration file")
        p.add_argument("--seeds", metavar="LIST",
                       help="comma-separated seeds, overrides the config")
        p.add_argument("--scale", type=float, metavar="F",
                       help="budget multiplier applied to step counts")
        p.add_argument("--deterministic", action="store_true",
                       help="use the deterministic (mean-only) policy kernel")

    p_run = sub.add_parser("run", help="train over one or more seeds")
    common(p_run)
    p_run.add_argument("--out", metavar="DIR",
                       help="experiment directory (default: runs)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="render curves and heatmaps")
    p_rep.add_argument("runs", nargs="+", metavar="RUN",
                       help="run directories or an experiment root")
    p_rep.add_argument("--out", metavar="DIR",
                       help="report directory (default: RUN/report)")
    p_rep.set_defaults(func=cmd_report)

    p_val = sub.add_parser("validate", help="check a configuration")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        return _fail("usage", str(exc), code=2)
    except ReportError as exc:
        return _fail("report", str(exc))
    except ValueError as exc:
        return _fail("config", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
