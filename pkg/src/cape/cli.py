"""Command-line entry point: ``cape plan|batch|eval|domains validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    bundled_suite_config,
    build_report,
    evaluate,
    run_batch,
    run_episode,
    slugify,
    write_reports,
)
from .metrics import AnnotationMatrix, GroundTruthError, MetricInputError, render_markdown
from .planner import PlannerConfigError, render_trace
from .world import DomainError, load_domain

EXIT_USAGE = 2


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config or bundled_suite_config())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_plan(args) -> int:
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    cfg = _config(args)
    script = Path(args.script) if args.script else None
    if script is not None and not script.is_file():
        raise ConfigError(f"script not found: {script}")
    rec = run_episode(cfg, args.task, args.method, script=script)
    out = Path(args.out) if args.out else cfg.out
    dest = out / args.method / f"{slugify(args.task)}.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
    print(render_trace(rec.trace))
    m = rec.metrics
    print(f"executable={m.executable} affordable={m.affordable:.2f} corrections={m.corrections}")
    return 0


def cmd_batch(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else cfg.out
    records = run_batch(cfg, out, args.jobs)
    print(render_markdown(build_report(records, cfg.methods)), end="")
    print(f"wrote {len(records)} records to {out / 'results.jsonl'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    results = Path(args.results)
    if not results.is_file():
        raise ConfigError(f"results file not found: {results}")
    gt_dir = Path(args.ground_truth) if args.ground_truth else None
    if gt_dir is not None and not gt_dir.is_dir():
        raise ConfigError(f"ground-truth directory not found: {gt_dir}")
    ann = AnnotationMatrix.load(args.annotations) if args.annotations else None
    _, rows = evaluate(cfg, results, gt_dir, ann)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports(rows, out)
    print(render_markdown(rows), end="")
    return 0


def cmd_validate(args) -> int:
    bad = 0
    for p in args.paths:
        path = Path(p)
        if not path.is_file():
            print(f"{p}: file not found", file=sys.stderr)
            bad += 1
            continue
        try:
            skills, scene = load_domain(path)
        except DomainError as exc:
            print(f"{p}: {exc}", file=sys.stderr)
            bad += 1
            continue
        print(f"{p}: ok ({len(skills)} skills, {len(scene.objects)} objects, {len(scene.rooms)} rooms)")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cape", description="Plan with corrective re-prompting and evaluate baselines.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (default: bundled fixture suite)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("plan", help="run one episode and print the plan")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--method", required=True, help=", ".join(METHODS))
    p.add_argument("--script", help="scripted backend file for this task")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("batch", help="run every task x method pair")
    common(p)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("eval", help="recompute metrics from results.jsonl")
    common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--ground-truth")
    p.add_argument("--annotations")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("domains", help="domain file utilities")
    dsub = p.add_subparsers(dest="domains_command", required=True)
    v = dsub.add_parser("validate", help="check domain files")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, DomainError, PlannerConfigError, GroundTruthError, MetricInputError) as exc:
        print(f"cape: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
