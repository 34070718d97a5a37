"""The managing system: Monitor, Analyze, Plan and Execute, one tick at a time."""

from __future__ import annotations

import bisect
import enum
import itertools
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .knowledge import DependencyGraph, KnowledgeBase, Lifecycle
from .rulelang import (
    AdaptationKind,
    CriticalityLevel,
    EvalError,
    Rule,
    Strategy,
    eval_expression,
    variables,
)
from .simbus import Bus, RunLog


@dataclass(frozen=True)
class PlannerConfig:
    use_dependency_graph: bool = True
    use_criticality: bool = True
    use_system_impact: bool = True

    @property
    def label(self) -> str:
        bits = (self.use_dependency_graph, self.use_criticality, self.use_system_impact)
        return "".join("1" if b else "0" for b in bits)

    @classmethod
    def from_label(cls, label: str) -> "PlannerConfig":
        if len(label) != 3 or set(label) - {"0", "1"}:
            raise ValueError(f"config label must be three 0/1 digits, got {label!r}")
        return cls(*(c == "1" for c in label))


# Row order of the ablation table: dependency graph, criticality, impact.
ALL_CONFIGS = tuple(PlannerConfig(*bits) for bits in itertools.product((False, True), repeat=3))
FULL_CONFIG = PlannerConfig(True, True, True)


def strategy_cost(strategy: Strategy, i_max: int, use_system_impact: bool = True) -> float:
    """Ranking cost: failure probability plus normalised worst-case impact."""
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    # Exact arithmetic so equal costs tie and fall back to file order.
    cost = Fraction(100 - strategy.success_probability, 100)
    if use_system_impact:
        cost += Fraction(strategy.impact, i_max)
    return float(cost)


class SymptomStatus(enum.Enum):
    AWAITING_PLAN = "awaiting_plan"
    IN_FLIGHT = "strategy_in_flight"
    RESOLVED = "resolved"
    EXHAUSTED = "exhausted"


@dataclass
class Symptom:
    rule: Rule
    rule_index: int
    episode: int
    detected_tick: int
    status: SymptomStatus = SymptomStatus.AWAITING_PLAN
    strategy: Strategy | None = None
    dispatch_id: str | None = None
    dispatch_tick: int | None = None
    deadline: int | None = None
    tried: set[str] = field(default_factory=set)

    @property
    def level(self) -> CriticalityLevel:
        return self.rule.criticality


@dataclass(frozen=True)
class PlannedAction:
    symptom: str
    strategy: Strategy
    affected_nodes: frozenset[str]
    cost: float


class SymptomBook:
    """Open symptoms (one per rule) plus node hold times."""

    def __init__(self) -> None:
        self.open: dict[str, Symptom] = {}
        self.adapted_until: dict[str, int] = {}
        self._episodes = itertools.count()
        self._dispatches = itertools.count()

    def next_episode(self) -> int:
        return next(self._episodes)

    def next_dispatch_id(self) -> str:
        return f"d{next(self._dispatches)}"

    def awaiting(self) -> list[Symptom]:
        return sorted(
            (s for s in self.open.values() if s.status is SymptomStatus.AWAITING_PLAN),
            key=lambda s: s.rule_index,
        )


# -- monitor ----------------------------------------------------------------


def frequency(publish_ticks: Sequence[int], now: int, window_ticks: int, tick_s: float) -> float:
    """Publishes in the window (now - window, now], as Hz."""
    lo = bisect.bisect_right(publish_ticks, now - window_ticks)
    hi = bisect.bisect_right(publish_ticks, now)
    return (hi - lo) / (window_ticks * tick_s)


def monitor_tick(
    bus: Bus,
    kb: KnowledgeBase,
    topics: Iterable[str],
    window_ticks: int = 10,
    tick_s: float = 0.1,
    log: RunLog | None = None,
) -> None:
    now = bus.tick
    delta = kb.upsert_topology(bus.introspect())
    if delta and log is not None:
        log.emit(
            now, "graph_delta",
            added_nodes=delta.added_nodes, removed_nodes=delta.removed_nodes,
            added_edges=[list(e) for e in delta.added_edges],
            removed_edges=[list(e) for e in delta.removed_edges],
        )
    for topic in topics:
        kb.set_state(f"{topic}.frequency", frequency(bus.publish_ticks(topic), now, window_ticks, tick_s), now)
    for key, value, stamp in bus.drain_diagnostics():
        kb.set_state(key, value, stamp)


# -- analyze ----------------------------------------------------------------


def _release(kb: KnowledgeBase, book: SymptomBook, nodes: Iterable[str]) -> None:
    for n in nodes:
        book.adapted_until.pop(n, None)
    kb.set_adapted(nodes, False)


def _fresh_since(kb: KnowledgeBase, rule: Rule, tick: int) -> bool:
    for key in variables(rule.trigger):
        last = kb.state.last_update(key)
        if last is None or last < tick:
            return False
    return True


def analyze_tick(kb: KnowledgeBase, book: SymptomBook, now: int, log: RunLog) -> list[str]:
    """Detect symptoms and judge in-flight strategies; returns newly triggered rules."""
    for node, until in sorted(book.adapted_until.items()):
        if until <= now:
            _release(kb, book, [node])

    state = kb.state.snapshot()
    triggered = []
    for index, rule in enumerate(kb.rules.rules):
        try:
            value = eval_expression(rule.trigger, state)
            if not isinstance(value, bool):
                raise EvalError(f"trigger evaluated to {type(value).__name__}, not bool")
        except EvalError as exc:
            log.emit(now, "eval_error", rule=rule.name, message=str(exc))
            value = False

        sym = book.open.get(rule.name)
        if sym is None:
            if value:
                sym = Symptom(rule, index, book.next_episode(), now)
                book.open[rule.name] = sym
                for warning in kb.mark_rule_suspects(rule, True):
                    log.emit(now, "warning", message=warning)
                log.emit(now, "symptom_detected", rule=rule.name, episode=sym.episode, level=rule.criticality.name)
                triggered.append(rule.name)
            continue

        if not value:
            log.emit(
                now, "symptom_resolved", rule=rule.name, episode=sym.episode,
                previous=sym.status.value,
                by=sym.dispatch_id if sym.status is SymptomStatus.IN_FLIGHT else None,
            )
            if sym.status is SymptomStatus.IN_FLIGHT:
                _release(kb, book, sym.strategy.affected_nodes)
            sym.status = SymptomStatus.RESOLVED
            sym.tried.clear()
            kb.mark_rule_suspects(rule, False)
            del book.open[rule.name]
            continue

        if sym.status is SymptomStatus.IN_FLIGHT and now >= sym.deadline:
            # Judge only on data produced after the strategy's effects landed.
            if _fresh_since(kb, rule, sym.deadline):
                _fail(sym, now, log, reason="trigger still true after deadline")
    return triggered


def _fail(sym: Symptom, now: int, log: RunLog, reason: str) -> None:
    sym.tried.add(sym.strategy.name)
    log.emit(
        now, "strategy_failed", rule=sym.rule.name, episode=sym.episode,
        strategy=sym.strategy.name, dispatch=sym.dispatch_id, reason=reason,
    )
    sym.strategy = None
    sym.deadline = None
    if all(s.name in sym.tried for s in sym.rule.strategies):
        sym.status = SymptomStatus.EXHAUSTED
        log.emit(now, "symptom_exhausted", rule=sym.rule.name, episode=sym.episode)
    else:
        sym.status = SymptomStatus.AWAITING_PLAN


# -- plan -------------------------------------------------------------------


def strategy_invalid(strategy: Strategy, graph: DependencyGraph) -> bool:
    """Replay the strategy against the current graph state."""
    lifecycle = {n: info.lifecycle for n, info in graph.nodes.items()}
    bindings = {n: dict(info.subscriptions) for n, info in graph.nodes.items()}
    for a in strategy.adaptations:
        if a.target not in lifecycle:
            return True
        kind = a.kind
        if kind is AdaptationKind.ACTIVATE:
            if lifecycle[a.target] not in (Lifecycle.INACTIVE, Lifecycle.UNCONFIGURED):
                return True
            lifecycle[a.target] = Lifecycle.ACTIVE
        elif kind is AdaptationKind.DEACTIVATE:
            if lifecycle[a.target] is not Lifecycle.ACTIVE:
                return True
            lifecycle[a.target] = Lifecycle.INACTIVE
        elif kind is AdaptationKind.COMMUNICATION_CHANGE:
            subs = bindings[a.target]
            if a.name not in subs or subs[a.name] == a.topic:
                return True
            subs[a.name] = a.topic
        elif kind is AdaptationKind.REDEPLOY:
            lifecycle[a.target] = Lifecycle.ACTIVE
    return False


def plan_tick(
    kb: KnowledgeBase,
    symptoms: Sequence[Symptom],
    config: PlannerConfig,
) -> list[PlannedAction]:
    """Greedy interference-free selection, at most one strategy per symptom."""
    graph = kb.graph
    i_max = kb.rules.i_max
    candidates = []
    for sym in symptoms:
        if sym.status is not SymptomStatus.AWAITING_PLAN:
            continue
        for s_index, strategy in enumerate(sym.rule.strategies):
            cost = strategy_cost(strategy, i_max, config.use_system_impact)
            candidates.append((cost, sym.rule_index, s_index, sym, strategy))

    if config.use_criticality:
        levels = sorted({c[3].level for c in candidates}, reverse=True)
        pools = [[c for c in candidates if c[3].level == lv] for lv in levels]
    else:
        pools = [candidates]

    claimed: set[str] = set()
    served: set[str] = set()
    actions = []
    for pool in pools:
        for cost, _, _, sym, strategy in sorted(pool, key=lambda c: c[:3]):
            if sym.rule.name in served or strategy.name in sym.tried:
                continue
            if strategy_invalid(strategy, graph):
                continue
            nodes = strategy.affected_nodes
            blocked = False
            for node in sorted(nodes):
                info = graph.nodes.get(node)
                if info is None or info.currently_adapted or node in claimed:
                    blocked = True
                    break
                if config.use_dependency_graph and graph.relevant_dependencies_present(
                    node, sym.level, exclude_rule=sym.rule.name
                ):
                    blocked = True
                    break
            if blocked:
                continue
            claimed |= nodes
            served.add(sym.rule.name)
            actions.append(PlannedAction(sym.rule.name, strategy, nodes, cost))
    return actions


# -- execute ----------------------------------------------------------------


def execute_strategy(
    action: PlannedAction,
    bus: Bus,
    kb: KnowledgeBase,
    sym: Symptom,
    book: SymptomBook,
    log: RunLog,
) -> bool:
    """Dispatch every adaptation in order; False if a service call failed."""
    now = bus.tick
    assert not any(kb.graph.nodes[n].currently_adapted for n in action.affected_nodes)
    strategy = action.strategy
    dispatch_id = book.next_dispatch_id()
    log.emit(
        now, "strategy_dispatched", dispatch=dispatch_id, rule=sym.rule.name, episode=sym.episode,
        strategy=strategy.name, level=sym.level.name, cost=round(action.cost, 12),
        nodes=sorted(action.affected_nodes),
        adaptations=[[a.target, a.kind.value] for a in strategy.adaptations],
    )
    deadline = now + strategy.impact
    kb.set_adapted(action.affected_nodes, True)
    for node in action.affected_nodes:
        book.adapted_until[node] = deadline
    sym.strategy = strategy
    sym.dispatch_id = dispatch_id
    sym.dispatch_tick = now
    sym.deadline = deadline
    sym.status = SymptomStatus.IN_FLIGHT
    state = kb.state.snapshot()
    for a in strategy.adaptations:
        result = bus.call_adaptation_service(a.target, a, state=state, tag=dispatch_id)
        if not result.ok:
            _fail(sym, now, log, reason=f"service failure: {result.message}")
            return False
    return True


# -- engine -----------------------------------------------------------------


class Engine:
    """Runs Monitor -> Analyze -> Plan -> Execute after each bus tick."""

    def __init__(
        self,
        bus: Bus,
        kb: KnowledgeBase,
        config: PlannerConfig = FULL_CONFIG,
        *,
        monitor_topics: Iterable[str] = (),
        window_ticks: int = 10,
        tick_s: float = 0.1,
    ) -> None:
        self.bus = bus
        self.kb = kb
        self.config = config
        self.monitor_topics = tuple(monitor_topics)
        self.window_ticks = window_ticks
        self.tick_s = tick_s
        self.book = SymptomBook()
        self.log = bus.log

    def step(self) -> list[PlannedAction]:
        self.bus.advance_tick()
        now = self.bus.tick
        monitor_tick(self.bus, self.kb, self.monitor_topics, self.window_ticks, self.tick_s, self.log)
        analyze_tick(self.kb, self.book, now, self.log)
        actions = plan_tick(self.kb, self.book.awaiting(), self.config)
        for action in actions:
            execute_strategy(action, self.bus, self.kb, self.book.open[action.symptom], self.book, self.log)
        return actions

    @property
    def quiet(self) -> bool:
        """No open symptoms, no queued effects and no node held."""
        return not self.book.open and not self.bus.has_pending_effects() and not self.book.adapted_until
