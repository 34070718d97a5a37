"""Evaluation protocol: uncertainty combos, single runs, metrics and ablation."""

from __future__ import annotations

import csv
import io
import itertools
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

from .knowledge import KnowledgeBase
from .mapek import ALL_CONFIGS, FULL_CONFIG, Engine, PlannerConfig, SymptomStatus
from .perception import Scenario, default_rules_text, default_scenario
from .rulelang import RuleSet, parse_ruleset
from .simbus import FaultInjection, FaultKind, RunLog

ERROR_NODES = ("camera_rgb", "fusion", "segmentation")
ERROR_KINDS = (FaultKind.OUTAGE_RESTARTABLE, FaultKind.OUTAGE_REDEPLOY_ONLY)
WARNING_KINDS = (FaultKind.MISALIGNMENT, FaultKind.DEGRADATION, FaultKind.STALE_ENHANCEMENT)

STATUSES = ("all_resolved", "exhausted", "timeout")
METRIC_NAMES = ("resolved_over_executed", "reaction_time", "downtime", "unnecessary_redeploys")


@dataclass(frozen=True)
class UncertaintyCombo:
    error_kind: FaultKind
    error_node: str
    warning_source: FaultKind
    ok_source: FaultKind = FaultKind.DEFOCUS

    def faults(self) -> list[tuple[FaultKind, str | None]]:
        return [(self.error_kind, self.error_node), (self.warning_source, None), (self.ok_source, None)]

    def __str__(self) -> str:
        return f"{self.error_kind.value}({self.error_node})+{self.warning_source.value}+{self.ok_source.value}"


def enumerate_combos() -> list[UncertaintyCombo]:
    return [
        UncertaintyCombo(kind, node, warning)
        for node in ERROR_NODES
        for kind in ERROR_KINDS
        for warning in WARNING_KINDS
    ]


@dataclass
class Metrics:
    resolved: int = 0
    executed: int = 0
    resolved_over_executed: float | None = None
    reaction_time: float | None = None
    reaction_times: list[float] = field(default_factory=list)
    downtime: float = 0.0
    unnecessary_redeploys: int = 0


@dataclass
class RunResult:
    combo: UncertaintyCombo
    seed: int
    config: PlannerConfig
    metrics: Metrics
    log: RunLog
    status: str
    ticks: int

    def row(self, combo_index: int | None = None) -> dict[str, Any]:
        m = self.metrics
        return {
            "combo": combo_index if combo_index is not None else str(self.combo),
            "combo_name": str(self.combo),
            "seed": self.seed,
            "dep_graph": int(self.config.use_dependency_graph),
            "criticality": int(self.config.use_criticality),
            "system_impact": int(self.config.use_system_impact),
            "resolved_over_executed": "" if m.resolved_over_executed is None else m.resolved_over_executed,
            "reaction_time": "" if m.reaction_time is None else m.reaction_time,
            "downtime": m.downtime,
            "unnecessary_redeploys": m.unnecessary_redeploys,
            "status": self.status,
            "ticks": self.ticks,
        }


def compute_metrics(log: RunLog | Iterable[dict], tick_s: float, stream: str = "segmentation") -> Metrics:
    """Derive the evaluation metrics from an event log alone."""
    records = list(log)
    m = Metrics()
    m.resolved = sum(1 for r in records if r["kind"] == "symptom_resolved")
    m.executed = sum(1 for r in records if r["kind"] == "strategy_dispatched")
    if m.executed:
        m.resolved_over_executed = m.resolved / m.executed

    detected = {r["episode"]: r["tick"] for r in records if r["kind"] == "symptom_detected"}
    dispatches = {r["dispatch"]: r for r in records if r["kind"] == "strategy_dispatched"}
    for r in records:
        if r["kind"] != "fault_cleared" or r.get("by") not in dispatches:
            continue
        d = dispatches[r["by"]]
        m.reaction_times.append((d["tick"] - detected[d["episode"]]) * tick_s)
    if m.reaction_times:
        m.reaction_time = statistics.fmean(m.reaction_times)

    # Longest run of ticks without a publish on the stream.
    if records:
        start = next((r["tick"] for r in records if r["kind"] == "run_started"), 0)
        end = max(r["tick"] for r in records)
        prev = start - 1
        gap = 0
        for r in records:
            if r["kind"] == "publish" and r["topic"] == stream:
                gap = max(gap, r["tick"] - prev - 1)
                prev = r["tick"]
        gap = max(gap, end - prev)
        m.downtime = gap * tick_s

    # Redeploys are needed only for a redeploy-only outage on the target itself.
    active: dict[int, tuple[str, str | None]] = {}
    for r in records:
        kind = r["kind"]
        if kind == "fault_injected":
            active[r["fault"]] = (r["fault_kind"], r["node"])
        elif kind == "fault_cleared":
            active.pop(r["fault"], None)
        elif kind == "strategy_dispatched":
            for target, adaptation in r["adaptations"]:
                if adaptation != "redeploy":
                    continue
                needed = (FaultKind.OUTAGE_REDEPLOY_ONLY.value, target) in active.values()
                if not needed:
                    m.unnecessary_redeploys += 1
    return m


def settle_ticks(scenario: Scenario) -> int:
    return scenario.window_ticks + 2 * scenario.staleness_ticks + 2


def run_scenario(
    combo: UncertaintyCombo,
    seed: int,
    config: PlannerConfig = FULL_CONFIG,
    scenario: Scenario | None = None,
    rules: RuleSet | None = None,
    tick_budget: int | None = None,
) -> RunResult:
    scenario = scenario or default_scenario()
    rules = rules or parse_ruleset(default_rules_text())
    budget = scenario.tick_budget if tick_budget is None else tick_budget

    log = RunLog()
    bus = scenario.build_bus(seed=seed, log=log)
    log.emit(0, "run_started", combo=str(combo), seed=seed, config=config.label)
    faults = [
        bus.inject_fault(FaultInjection(kind, scenario.inject_tick + bus.rng.randint(0, scenario.jitter_max), node))
        for kind, node in combo.faults()
    ]
    last_inject = max(f.inject_tick for f in faults)

    engine = Engine(
        bus, KnowledgeBase(rules), config,
        monitor_topics=scenario.monitor_topics,
        window_ticks=scenario.window_ticks,
        tick_s=scenario.tick_s,
    )
    settle = settle_ticks(scenario)
    quiet_since = None
    status = "timeout"
    while bus.tick + 1 < budget:
        engine.step()
        t = bus.tick
        if t < last_inject or not engine.quiet:
            quiet_since = None
            continue
        if quiet_since is None:
            quiet_since = t
        if t - quiet_since >= settle:
            status = "all_resolved"
            break
    else:
        if any(s.status is SymptomStatus.EXHAUSTED for s in engine.book.open.values()):
            status = "exhausted"
    # A fault can be masked without being cleared, e.g. a redeploy that
    # restores default wiring; it no longer produces a symptom.
    latent = [f.describe() for f in faults if f.active]
    log.emit(bus.tick, "run_finished", status=status, latent_faults=latent)
    return RunResult(combo, seed, config, compute_metrics(log, scenario.tick_s), log, status, bus.tick + 1)


# -- ablation ---------------------------------------------------------------


def _run_job(args: tuple[int, int, str, Scenario | None, str | None]) -> dict[str, Any]:
    combo_index, seed, label, scenario, rules_text = args
    rules = parse_ruleset(rules_text) if rules_text is not None else None
    result = run_scenario(
        enumerate_combos()[combo_index], seed, PlannerConfig.from_label(label), scenario, rules
    )
    row = result.row(combo_index)
    row["resolved"] = result.metrics.resolved
    row["executed"] = result.metrics.executed
    return row


def _mean_std(values: Sequence[float]) -> dict[str, float | None]:
    if not values:
        return {"mean": None, "std": None}
    return {
        "mean": statistics.fmean(values),
        "std": statistics.stdev(values) if len(values) > 1 else 0.0,
    }


@dataclass
class AblationReport:
    rows: list[dict[str, Any]]
    repetitions: int
    seed0: int

    def runs(self, config: PlannerConfig) -> list[dict[str, Any]]:
        bits = (int(config.use_dependency_graph), int(config.use_criticality), int(config.use_system_impact))
        return [r for r in self.rows if (r["dep_graph"], r["criticality"], r["system_impact"]) == bits]

    def aggregate(self) -> list[dict[str, Any]]:
        out = []
        for config in ALL_CONFIGS:
            runs = self.runs(config)
            entry: dict[str, Any] = {
                "config": config.label,
                "dep_graph": config.use_dependency_graph,
                "criticality": config.use_criticality,
                "system_impact": config.use_system_impact,
                "runs": len(runs),
                "statuses": {s: sum(1 for r in runs if r["status"] == s) for s in STATUSES},
            }
            for name in METRIC_NAMES:
                entry[name] = _mean_std([r[name] for r in runs if r[name] != ""])
            out.append(entry)
        return out

    def mean(self, config: PlannerConfig, metric: str) -> float | None:
        for entry in self.aggregate():
            if entry["config"] == config.label:
                return entry[metric]["mean"]
        raise KeyError(config.label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = list(self.rows[0]) if self.rows else []
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"repetitions": self.repetitions, "seed0": self.seed0, "configs": self.aggregate()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def ablate(
    repetitions: int,
    seed0: int = 0,
    jobs: int = 1,
    configs: Sequence[PlannerConfig] = ALL_CONFIGS,
    scenario: Scenario | None = None,
    rules_text: str | None = None,
) -> AblationReport:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    combos = range(len(enumerate_combos()))
    tasks = [
        (c, seed0 + r, cfg.label, scenario, rules_text)
        for cfg, c, r in itertools.product(configs, combos, range(repetitions))
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_job, tasks, chunksize=8))
    else:
        rows = [_run_job(t) for t in tasks]
    return AblationReport(rows, repetitions, seed0)


def metrics_dict(m: Metrics) -> dict[str, Any]:
    return asdict(m)
