"""``gridweave`` command-line driver.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.
Diagnostics go to stderr; results are written as files under ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import kernels
from .agents import TrainConfig, load_checkpoint, save_checkpoint, train, write_curve
from .core import ConfigError
from .datagen import generate_episode, write_episode_bundle
from .env import MicrogridEnv
from .evaluation import evaluate_oracle, evaluate_policy, evaluation_seeds

log = logging.getLogger("gridweave")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SUMMARY = "run_summary.json"


class UsageError(Exception):
    pass


def _load_config(args) -> cfgmod.ExperimentConfig:
    exp = cfgmod.load(args.config)
    overrides = {}
    if getattr(args, "no_noise", False):
        overrides["noise_enabled"] = False
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    return exp.with_overrides(**overrides) if overrides else exp


def _seed(args, exp) -> int:
    return exp.seed if args.seed is None else args.seed


def _out_dir(args, exp, command: str) -> Path:
    out = Path(args.out or exp.output_dir or f"runs/{command}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_summary(out: Path, summary: dict, files: list[Path]) -> Path:
    summary["files"] = sorted(str(Path(f).relative_to(out)) for f in files)
    summary["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    summary["kernel_backend"] = kernels.BACKEND
    missing = [f for f in files if not Path(f).exists()]
    if missing:
        raise RuntimeError(f"artifacts missing: {missing}")
    path = out / SUMMARY
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def cmd_generate(args) -> int:
    exp = _load_config(args)
    seed = _seed(args, exp)
    out = _out_dir(args, exp, "generate")
    env = exp.env
    data = generate_episode(env.households, env.grid, seed, env.horizon, env.noise_enabled,
                            env.temperature_enabled)
    files = write_episode_bundle(data, out, exp.raw)
    log.info("wrote %d files to %s", len(files), out)
    return EXIT_OK


def cmd_train(args) -> int:
    exp = _load_config(args)
    seed = _seed(args, exp)
    out = _out_dir(args, exp, "train")
    tc = exp.train
    if args.algo:
        tc = dataclasses.replace(tc, algo=args.algo)
    if args.steps is not None:
        tc = dataclasses.replace(tc, training_steps=args.steps)

    def progress(p):
        if p.iteration % 100 == 0:
            log.info("iter %d mean_reward %.4f", p.iteration, p.mean_reward)

    t0 = time.perf_counter()
    result = train(exp.env, tc, seed, progress)
    wall = time.perf_counter() - t0
    files = [save_checkpoint(out / "checkpoint.json", result),
             write_curve(out / "curve.csv", result.curve)]
    ev = evaluate_policy(exp.env, result.actor, evaluation_seeds(seed, exp.eval_episodes))
    report = ev.report(exp.env)
    files.append(report.write_json(out / "scores.json"))
    curve = result.curve
    tail = curve[-100:]
    summary = {
        "command": "train",
        "config_hash": exp.hash,
        "seed": seed,
        "algo": tc.algo,
        "train_config": cfgmod.train_config_dict(tc),
        "wall_clock_s": wall,
        "curve": {
            "iterations": len(curve),
            "final_mean_reward": curve[-1].mean_reward if curve else None,
            "tail_mean_reward": float(np.mean([p.mean_reward for p in tail])) if tail else None,
        },
        "reward": ev.mean_reward,
        "scores": report.to_dict(),
    }
    _write_summary(out, summary, files)
    return EXIT_OK


def cmd_oracle(args) -> int:
    exp = _load_config(args)
    seed = _seed(args, exp)
    out = _out_dir(args, exp, "oracle")
    seeds = evaluation_seeds(seed, exp.eval_episodes)
    t0 = time.perf_counter()
    ev, plans = evaluate_oracle(exp.env, seeds, exp.soc_levels, _threads(args))
    wall = time.perf_counter() - t0
    plan_dir = out / "plans"
    plan_dir.mkdir(exist_ok=True)
    files = []
    for i, episode in enumerate(plans):
        for plan in episode:
            files.append(plan.write_csv(plan_dir / f"episode{i:03d}_{plan.household_id}.csv"))
    report = ev.report(exp.env)
    files.append(report.write_json(out / "scores.json"))
    summary = {
        "command": "oracle",
        "config_hash": exp.hash,
        "seed": seed,
        "algo": "oracle",
        "soc_levels": exp.soc_levels,
        "wall_clock_s": wall,
        "reward": ev.mean_reward,
        "scores": report.to_dict(),
    }
    _write_summary(out, summary, files)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    exp = _load_config(args)
    seed = _seed(args, exp)
    out = _out_dir(args, exp, "evaluate")
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad checkpoint {args.checkpoint}: {exc}") from None
    if ckpt.config.n_actions != exp.env.n_actions:
        raise ConfigError("checkpoint action count does not match the environment")
    seeds = evaluation_seeds(seed, exp.eval_episodes)
    t0 = time.perf_counter()
    ev = evaluate_policy(exp.env, ckpt.actor, seeds)
    wall = time.perf_counter() - t0
    report = ev.report(exp.env)
    files = [report.write_json(out / "scores.json"), _greedy_trace(exp, ckpt.actor, seeds[0], out)]
    summary = {
        "command": "evaluate",
        "config_hash": exp.hash,
        "seed": seed,
        "algo": ckpt.config.algo,
        "checkpoint": str(args.checkpoint),
        "wall_clock_s": wall,
        "reward": ev.mean_reward,
        "scores": report.to_dict(),
    }
    _write_summary(out, summary, files)
    return EXIT_OK


def _greedy_trace(exp, actor, seed: int, out: Path) -> Path:
    from .agents import policy_forward

    env = MicrogridEnv(exp.env)
    obs = env.reset(seed)
    for _ in range(exp.env.horizon):
        acts = [int(np.argmax(policy_forward(actor, o))) for o in obs]
        res = env.step(acts)
        obs = [h.observation for h, keep in zip(res.households, env.fleet.capacity > 0) if keep]
    return env.write_trace(out / "trace.csv")


REPORT_ROWS = (
    ("reward", lambda s: s.get("reward")),
    ("price_score", lambda s: s["scores"]["distributor"]["price_score"]),
    ("emission_score", lambda s: s["scores"]["distributor"]["emission_score"]),
    ("wall_time_s", lambda s: s.get("wall_clock_s")),
)


def cmd_report(args) -> int:
    if not args.runs:
        raise UsageError("report needs at least one run directory")
    columns, summaries = [], []
    for run in args.runs:
        path = Path(run) / SUMMARY
        try:
            s = json.loads(path.read_text())
            s["scores"]["distributor"]["price_score"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: missing or incompatible run summary ({exc})") from None
        label = s.get("algo", "run")
        if label in columns:
            label = f"{label}:{Path(run).name}"
        columns.append(label)
        summaries.append(s)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    table = [[name] + [get(s) for s in summaries] for name, get in REPORT_ROWS]
    with (out / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + columns)
        w.writerows(table)
    width = max(12, *(len(c) for c in columns))
    lines = ["metric".ljust(16) + "".join(c.rjust(width + 2) for c in columns)]
    for row in table:
        cells = "".join(("-" if v is None else f"{v:.4f}").rjust(width + 2) for v in row[1:])
        lines.append(row[0].ljust(16) + cells)
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stderr.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridweave", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="config JSON path, or a bundled name: train, eval, test")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--no-noise", action="store_true", help="disable stochastic noise")
        sp.add_argument("--mode", choices=["literal", "economic"], default=None)

    sp = sub.add_parser("generate", help="write synthetic episode data")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a shared-parameter agent")
    common(sp)
    sp.add_argument("--algo", choices=["pg", "a2c"], default=None)
    sp.add_argument("--steps", type=int, default=None, help="override training_steps")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("oracle", help="solve optimal dispatch by dynamic programming")
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("evaluate", help="score a checkpoint's greedy policy")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="compare run directories")
    sp.add_argument("runs", nargs="*")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gridweave: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"gridweave: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"gridweave: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
