"""Command-line entry points: gen-data, run, report, judge.

Values from a ``--config`` JSON file override the corresponding flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import DEFAULT_TASKS
from .demos import load_demo_dir, load_demonstration, save_demo_dir
from .errors import ConfigError
from .judge import score_plan
from .runner import (
    RunConfig,
    aggregate,
    generate_dataset,
    load_episode_log,
    report_tables,
    run_experiment,
    write_report,
)
from .strategies import STRATEGY_KINDS


def _parse_int_list(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _parse_str_list(text):
    return [v for v in str(text).split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bimanual-icl",
        description="Bimanual manipulation via multi-agent in-context learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate expert demonstration datasets")
    gen.add_argument("--task", required=True, choices=sorted(DEFAULT_TASKS),
                     help="task archetype to generate demos for")
    gen.add_argument("--episodes", type=int, default=100, help="number of demonstrations")
    gen.add_argument("--seed", type=int, default=1234)
    gen.add_argument("--out", required=True, help="output directory root")

    run = sub.add_parser("run", help="run an experiment grid")
    run.add_argument("--task", default="lift_sym",
                     help="comma-separated task names")
    run.add_argument("--strategy", default="leader_follower",
                     help=f"comma-separated strategies from {STRATEGY_KINDS}")
    run.add_argument("--backend", choices=("oracle", "http"), default="oracle")
    run.add_argument("--seeds", default="0", help="comma-separated integer seeds")
    run.add_argument("--episodes", type=int, default=10, help="episodes per seed")
    run.add_argument("--n-demos", type=int, default=10, dest="n_demos")
    run.add_argument("--leader-arm", choices=("right", "left"), default="right",
                     dest="leader_arm")
    run.add_argument("--n-candidates", type=int, default=5, dest="n_candidates")
    run.add_argument("--max-retries", type=int, default=2, dest="max_retries")
    run.add_argument("--data-dir", default=None, dest="data_dir",
                     help="load datasets generated by gen-data instead of regenerating")
    run.add_argument("--store-size", type=int, default=100, dest="store_size")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--http-url", default="http://localhost:8000/v1/chat/completions",
                     dest="http_url")
    run.add_argument("--http-model", default="local-model", dest="http_model")
    run.add_argument("--api-key-env", default="OPENAI_API_KEY", dest="api_key_env",
                     help="environment variable holding the bearer token")
    run.add_argument("--timeout", type=float, default=60.0)
    run.add_argument("--judge-mode", choices=("llm", "rubric"), default="llm",
                     dest="judge_mode")
    run.add_argument("--out", default=None, help="output directory for logs and reports")
    run.add_argument("--config", default=None,
                     help="JSON config file; its values override the flags")

    rep = sub.add_parser("report", help="re-render tables from an episode log")
    rep.add_argument("--log", required=True, help="episodes.jsonl from a previous run")
    rep.add_argument("--out", default=None, help="directory for summary.json/report.txt")

    jud = sub.add_parser("judge", help="score a plan file against a demo dataset")
    jud.add_argument("--plan", required=True,
                     help="JSON file with 'observation' and 'actions' (14 integers each)")
    jud.add_argument("--demos", required=True, help="directory of demonstration JSON files")

    return parser


def _run_config_from_args(args) -> RunConfig:
    values = {
        "tasks": _parse_str_list(args.task),
        "strategies": _parse_str_list(args.strategy),
        "backend": args.backend,
        "seeds": _parse_int_list(args.seeds),
        "episodes": args.episodes,
        "n_demos": args.n_demos,
        "leader_arm": args.leader_arm,
        "n_candidates": args.n_candidates,
        "max_retries": args.max_retries,
        "data_dir": args.data_dir,
        "store_size": args.store_size,
        "workers": args.workers,
        "http_url": args.http_url,
        "http_model": args.http_model,
        "api_key_env": args.api_key_env,
        "timeout": args.timeout,
        "judge_mode": args.judge_mode,
        "out_dir": args.out,
    }
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
        unknown = set(overrides) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        values.update(overrides)
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "gen-data":
        demos = generate_dataset(args.task, args.episodes, args.seed)
        out = Path(args.out) / args.task
        save_demo_dir(out, demos)
        print(f"wrote {len(demos)} demonstrations to {out}")
        return 0

    if args.command == "run":
        cfg = _run_config_from_args(args)
        try:
            report = run_experiment(cfg)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        sys.stdout.write(report_tables(report))
        if cfg.out_dir:
            print(f"logs and summary written to {cfg.out_dir}")
        return 0

    if args.command == "report":
        records = load_episode_log(args.log)
        report = aggregate(records)
        sys.stdout.write(report_tables(report))
        if args.out:
            write_report(report, args.out)
        return 0

    if args.command == "judge":
        demo = load_demonstration(args.plan)
        demos = load_demo_dir(args.demos)
        verdict = score_plan(demo.actions, demos, demo.observation, mode="rubric")
        print(json.dumps({
            "check1": verdict.check1,
            "check2": verdict.check2,
            "check3": verdict.check3,
            "check4": verdict.check4,
            "score": verdict.score,
            "reasons": verdict.reasons,
        }, indent=2))
        return 0

    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
