"""Command-line entrypoint: baseline, train, eval, report, serve, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
Seed precedence: ``--seed`` flag > ``DEMANDGYM_SEED`` environment variable >
config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from datetime import datetime

import numpy as np

from . import problem
from . import trainer as tr


def _default_out() -> str:
    return os.path.join("runs", datetime.now().strftime("%Y%m%d-%H%M%S"))


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="demandgym",
        description="Demand-response RL toolbox for building cooling loads")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="run config YAML")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override run seed")
        return sp

    add("baseline", "simulate the fixed-schedule baseline and summarize it")
    add("train", "train an agent per the config")
    ev = add("eval", "evaluate a saved agent")
    ev.add_argument("--agent", required=True, help="path to an agent.best file")
    rp = add("report", "print metrics and emit the per-hour profile CSV")
    rp.add_argument("--run", required=True, help="run directory to report on")
    sv = add("serve", "host the builtin simulator over the wire protocol")
    sv.add_argument("--endpoint", required=True,
                    help="host:port to listen on, or 'stdio'")
    sw = add("sweep", "hyperparameter grid sweep")
    sw.add_argument("--grid", required=True,
                    help="JSON object of Hyperparams field -> value list, "
                         "or a path to such a JSON file")
    return p


def _load_config(args) -> tr.RunConfig:
    cfg = tr.RunConfig.from_yaml(args.config)
    seed = args.seed
    if seed is None and "DEMANDGYM_SEED" in os.environ:
        try:
            seed = int(os.environ["DEMANDGYM_SEED"])
        except ValueError:
            raise tr.ConfigError(
                f"DEMANDGYM_SEED must be an integer, got "
                f"{os.environ['DEMANDGYM_SEED']!r}")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out = args.out or cfg.out_dir or _default_out()
    return replace(cfg, out_dir=out)


def _echo(cfg: tr.RunConfig):
    print(f"config: {cfg.digest()}")
    print(f"task: {cfg.task}  algorithm: {cfg.algorithm}  seed: {cfg.seed}")
    print(f"period: {cfg.start_date} .. {cfg.end_date}")
    print(f"out: {cfg.out_dir}")


def cmd_baseline(cfg: tr.RunConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    import demandgym.building_env as be
    weather = tr.load_weather(cfg)
    baseline = be.run_baseline(cfg.building, weather, cfg.schedules,
                               cfg.start_date, cfg.end_date)
    path = os.path.join(cfg.out_dir, "baseline_timeseries.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "cooling_w"])
        for t, q in zip(baseline.times, baseline.cooling_w):
            w.writerow([t.isoformat(), f"{q:.17g}"])
    mean_w, std_w = baseline.working_hours_stats()
    summary = {"working_hours_mean_w": mean_w, "working_hours_std_w": std_w,
               "n_intervals": len(baseline.times)}
    with open(os.path.join(cfg.out_dir, "baseline_summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"baseline: mean {mean_w / 1e3:.2f} kW, "
          f"across-day std {std_w / 1e3:.2f} kW over working hours")
    print(f"wrote {path}")
    return 0


def cmd_train(cfg: tr.RunConfig) -> int:
    result = tr.run_training(cfg)
    m = result.metrics
    print(f"best mean eval episode reward: "
          f"{result.artifact.best_mean_eval_reward:.4f}")
    print(f"median error: {m['median_error']:+.4f}  "
          f"within 5pp: {m['frac_within_5pp']:.1%}  "
          f"within 10pp: {m['frac_within_10pp']:.1%}")
    print(f"outputs in {cfg.out_dir}")
    return 0


def cmd_eval(cfg: tr.RunConfig, agent_path: str) -> int:
    artifact = tr.load_agent(agent_path)
    records, metrics = tr.evaluate(artifact, cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    spec = problem.ObservationSpec.for_task(cfg.task)
    tr.write_timeseries_csv(records,
                            os.path.join(cfg.out_dir, "eval_timeseries.csv"), spec)
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"median error: {metrics['median_error']:+.4f}  "
          f"within 5pp: {metrics['frac_within_5pp']:.1%}  "
          f"within 10pp: {metrics['frac_within_10pp']:.1%}")
    return 0


def cmd_report(cfg: tr.RunConfig, run_dir: str) -> int:
    metrics_path = os.path.join(run_dir, "metrics.json")
    ts_path = os.path.join(run_dir, "eval_timeseries.csv")
    for path in (metrics_path, ts_path):
        if not os.path.exists(path):
            print(f"error: missing {path}", file=sys.stderr)
            return 1
    with open(metrics_path, encoding="utf-8") as fh:
        m = json.load(fh)
    print(f"median error: {m['median_error']:+.4f}")
    print(f"within 5pp: {m['frac_within_5pp']:.1%}")
    print(f"within 10pp: {m['frac_within_10pp']:.1%}")
    print(f"load std vs baseline: {m['working_hours_std_w']:.0f} W / "
          f"{m['baseline_std_w']:.0f} W (reduction {m['std_reduction']:.1%})")
    if "by_signal" in m:
        for sig, g in sorted(m["by_signal"].items()):
            print(f"signal {sig}: median {g['median_error']:+.4f}, "
                  f"within 10pp {g['frac_within_10pp']:.1%} (n={g['n']})")

    spec = problem.ObservationSpec.for_task(cfg.task)
    records = tr.read_timeseries_csv(ts_path, spec)
    hours = {}
    for r in records:
        hours.setdefault(r.timestamp.hour, []).append((r.cooling_w, r.baseline_w))
    out_path = os.path.join(run_dir, "hourly_profile.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "mean_cooling_w", "mean_baseline_w"])
        for h, vals in sorted(hours.items()):
            w.writerow([h, f"{np.mean([v[0] for v in vals]):.17g}",
                        f"{np.mean([v[1] for v in vals]):.17g}"])
    print(f"wrote {out_path}")
    return 0


def cmd_serve(cfg: tr.RunConfig, endpoint: str) -> int:
    from . import cosim
    env = tr.build_environment(cfg)
    print(f"serving builtin simulator on {endpoint}")
    cosim.serve_env(env, endpoint)
    return 0


def cmd_sweep(cfg: tr.RunConfig, grid_arg: str) -> int:
    if os.path.exists(grid_arg):
        with open(grid_arg, encoding="utf-8") as fh:
            grid = json.load(fh)
    else:
        try:
            grid = json.loads(grid_arg)
        except json.JSONDecodeError as exc:
            raise tr.ConfigError(f"--grid is neither a file nor JSON: {exc}")
    if not isinstance(grid, dict):
        raise tr.ConfigError("--grid must be a JSON object")
    os.makedirs(cfg.out_dir, exist_ok=True)
    results = tr.sweep(cfg, grid)
    print(f"{'rank':>4} {'reward':>10}  overrides")
    for rank, row in enumerate(results, start=1):
        print(f"{rank:>4} {row['mean_eval_reward']:>10.4f}  {row['overrides']}")
    with open(os.path.join(cfg.out_dir, "sweep_results.json"), "w",
              encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
        fh.write("\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
    except tr.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    _echo(cfg)
    try:
        if args.command == "baseline":
            return cmd_baseline(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.agent)
        if args.command == "report":
            return cmd_report(cfg, args.run)
        if args.command == "serve":
            return cmd_serve(cfg, args.endpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.grid)
        raise AssertionError(f"unhandled command {args.command}")
    except tr.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: exit 1, never a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
