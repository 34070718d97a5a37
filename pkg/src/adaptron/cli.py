"""Command line entry point: lint, run, ablate and graph."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .harness import ablate, enumerate_combos, metrics_dict, run_scenario
from .knowledge import KnowledgeBase
from .mapek import PlannerConfig, monitor_tick
from .perception import Scenario, ScenarioError, data_path, load_scenario
from .rulelang import ParseError, parse_ruleset, validate_ruleset

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("adaptron")


class UsageError(Exception):
    pass


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _load_rules(path: str):
    try:
        return parse_ruleset(_read_text(path))
    except ParseError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_scenario(path: str) -> Scenario:
    if not Path(path).is_file():
        raise UsageError(f"cannot read {path}: no such file")
    try:
        return load_scenario(path)
    except (ScenarioError, OSError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_lint(args: argparse.Namespace) -> int:
    rules = _load_rules(args.rules)
    nodes = _load_scenario(args.scenario).node_names if args.scenario else None
    diags = validate_ruleset(rules, nodes)
    for d in diags:
        print(f"{args.rules}:{d}")
    errors = sum(1 for d in diags if d.severity == "error")
    print(f"{len(rules)} rules, {errors} errors, {len(diags) - errors} warnings")
    return EXIT_FAIL if errors else EXIT_OK


def _config(args: argparse.Namespace) -> PlannerConfig:
    return PlannerConfig(args.dep_graph, args.criticality, args.system_impact)


def cmd_run(args: argparse.Namespace) -> int:
    rules = _load_rules(args.rules)
    scenario = _load_scenario(args.scenario)
    combos = enumerate_combos()
    if not 0 <= args.combo < len(combos):
        raise UsageError(f"--combo must be in 0..{len(combos) - 1}, got {args.combo}")
    errors = [d for d in validate_ruleset(rules, scenario.node_names) if d.severity == "error"]
    if errors:
        for d in errors:
            print(f"{args.rules}:{d}", file=sys.stderr)
        return EXIT_FAIL
    if args.tick_ms is not None:
        scenario = replace(scenario, tick_ms=args.tick_ms)
    result = run_scenario(combos[args.combo], args.seed, _config(args), scenario, rules, args.tick_budget)
    if args.log:
        Path(args.log).write_text(result.log.to_ndjson(), encoding="utf-8")
    record = {
        "combo": args.combo,
        "combo_name": str(result.combo),
        "seed": args.seed,
        "config": result.config.label,
        "status": result.status,
        "ticks": result.ticks,
        "metrics": metrics_dict(result.metrics),
    }
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK if result.status == "all_resolved" else EXIT_FAIL


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    rules_text = _read_text(args.rules)
    _load_rules(args.rules)
    scenario = _load_scenario(args.scenario)
    report = ablate(args.reps, args.seed0, args.jobs, scenario=scenario, rules_text=rules_text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    for entry in report.aggregate():
        cells = [entry["config"]]
        for name in ("resolved_over_executed", "reaction_time", "downtime", "unnecessary_redeploys"):
            ms = entry[name]
            cells.append("-" if ms["mean"] is None else f"{ms['mean']:.2f}±{ms['std']:.2f}")
        print("  ".join(cells))
    bad = sum(1 for r in report.rows if r["status"] != "all_resolved")
    log.info("%d runs written to %s (%d not resolved)", len(report.rows), out, bad)
    return EXIT_OK if bad == 0 else EXIT_FAIL


def cmd_graph(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario)
    bus = scenario.build_bus()
    kb = KnowledgeBase(parse_ruleset(""))
    bus.advance_tick()
    monitor_tick(bus, kb, ())
    dot = kb.graph.to_dot()
    if args.out:
        Path(args.out).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    default_rules = str(data_path("perception.rules"))
    default_scenario = str(data_path("perception.yaml"))

    parser = argparse.ArgumentParser(prog="adaptron", description="Rule-driven self-adaptation for a simulated perception pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, rules: bool = True) -> None:
        if rules:
            p.add_argument("--rules", default=default_rules, help="rule file (default: bundled perception rules)")
        p.add_argument("--scenario", default=default_scenario, help="scenario YAML (default: bundled perception pipeline)")

    p = sub.add_parser("lint", help="check a rule file for errors")
    p.add_argument("rules", help="rule file to check")
    p.add_argument("--scenario", default=None, help="scenario YAML whose node names targets must match")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("run", help="run one uncertainty combination")
    common(p)
    p.add_argument("--combo", type=int, default=0, help="combo index 0..17, ordered by error node, error kind, warning source")
    p.add_argument("--seed", type=int, default=0, help="run seed; drives injection jitter")
    p.add_argument("--dep-graph", action=argparse.BooleanOptionalAction, default=True, help="use the dependency graph")
    p.add_argument("--criticality", action=argparse.BooleanOptionalAction, default=True, help="plan by criticality level")
    p.add_argument("--system-impact", action=argparse.BooleanOptionalAction, default=True, help="include impact in the cost")
    p.add_argument("--tick-ms", type=float, default=None, help="tick duration for reported seconds")
    p.add_argument("--tick-budget", type=int, default=None, help="maximum ticks before timeout")
    p.add_argument("--log", default=None, help="write the event log here as NDJSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run all planner configurations over all combos")
    common(p)
    p.add_argument("--reps", type=int, default=9, help="repetitions per combo (default 9)")
    p.add_argument("--seed0", type=int, default=0, help="seed of the first repetition")
    p.add_argument("--out", default="ablation", help="output directory for runs.csv and report.json")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("graph", help="print the healthy topology as DOT")
    common(p, rules=False)
    p.add_argument("--out", default=None, help="write DOT here instead of stdout")
    p.set_defaults(func=cmd_graph)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("ADAPTRON_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"adaptron: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
