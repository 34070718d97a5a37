"""Knowledge base: live dependency graph, state estimation store and rules."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .rulelang import CriticalityLevel, Rule, RuleSet
from .rulelang.expr import Value


class Lifecycle(enum.Enum):
    UNCONFIGURED = "UNCONFIGURED"
    INACTIVE = "INACTIVE"
    ACTIVE = "ACTIVE"
    FINALIZED = "FINALIZED"


Edge = tuple[str, str, str]  # (publisher, topic, subscriber)


@dataclass(frozen=True)
class Topology:
    """Introspection snapshot of the managed system."""

    nodes: Mapping[str, Lifecycle]
    edges: frozenset[Edge]
    subscriptions: Mapping[str, Mapping[str, str]] = field(default_factory=dict)


@dataclass
class GraphDelta:
    added_nodes: list[str] = field(default_factory=list)
    removed_nodes: list[str] = field(default_factory=list)
    added_edges: list[Edge] = field(default_factory=list)
    removed_edges: list[Edge] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.added_nodes or self.removed_nodes or self.added_edges or self.removed_edges)


@dataclass
class ManagedNodeInfo:
    name: str
    lifecycle: Lifecycle
    criticality_mark: CriticalityLevel = CriticalityLevel.OK
    currently_adapted: bool = False
    # rule name -> that rule's criticality
    suspected_rules: dict[str, CriticalityLevel] = field(default_factory=dict)
    subscriptions: dict[str, str] = field(default_factory=dict)

    def recompute_mark(self) -> None:
        self.criticality_mark = max(self.suspected_rules.values(), default=CriticalityLevel.OK)


class DependencyGraph:
    """Subscribers depend on the publishers of the topics they consume."""

    def __init__(self) -> None:
        self.nodes: dict[str, ManagedNodeInfo] = {}
        self.edges: set[Edge] = set()

    def upsert_topology(self, snapshot: Topology) -> GraphDelta:
        delta = GraphDelta()
        for name in sorted(set(self.nodes) - set(snapshot.nodes)):
            del self.nodes[name]
            delta.removed_nodes.append(name)
        for name in sorted(snapshot.nodes):
            lifecycle = snapshot.nodes[name]
            info = self.nodes.get(name)
            if info is None:
                info = self.nodes[name] = ManagedNodeInfo(name, lifecycle)
                delta.added_nodes.append(name)
            info.lifecycle = lifecycle
            info.subscriptions = dict(snapshot.subscriptions.get(name, {}))
        new_edges = {e for e in snapshot.edges if e[0] in self.nodes and e[2] in self.nodes}
        delta.removed_edges = sorted(self.edges - new_edges)
        delta.added_edges = sorted(new_edges - self.edges)
        self.edges = new_edges
        return delta

    def publishers_of(self, node: str) -> set[str]:
        return {p for (p, _, s) in self.edges if s == node}

    def ancestors(self, node: str) -> set[str]:
        """Transitive upstream publishers, never including ``node`` itself."""
        seen: set[str] = set()
        queue = deque(self.publishers_of(node))
        while queue:
            cur = queue.popleft()
            if cur in seen or cur == node:
                continue
            seen.add(cur)
            queue.extend(self.publishers_of(cur) - seen)
        return seen

    def relevant_dependencies_present(
        self, node: str, level: CriticalityLevel, exclude_rule: str | None = None
    ) -> bool:
        """True if an upstream node is suspected by a rule at ``level`` or above.

        Suspicion stemming from ``exclude_rule`` (the rule being planned for)
        is ignored, otherwise a rule would block its own strategies.
        """
        if node not in self.nodes:
            raise KeyError(f"unknown node {node}")
        for anc in self.ancestors(node):
            for rule, crit in self.nodes[anc].suspected_rules.items():
                if rule != exclude_rule and crit >= level:
                    return True
        return False

    def to_dot(self) -> str:
        lines = ["digraph managed_system {"]
        for name in sorted(self.nodes):
            info = self.nodes[name]
            label = f"{name} [{info.lifecycle.value}/{info.criticality_mark.name}]"
            lines.append(f'  "{name}" [label="{label}"];')
        for pub, topic, sub in sorted(self.edges):
            lines.append(f'  "{pub}" -> "{sub}" [label="{topic}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


class StateStore:
    """Key -> (value, last_update_tick); keys double as expression variables."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[Value, int]] = {}

    def set(self, key: str, value: Value, tick: int) -> bool:
        """Last writer wins; a write older than the stored tick is dropped."""
        old = self._entries.get(key)
        if old is not None and tick < old[1]:
            return False
        self._entries[key] = (value, tick)
        return True

    def get(self, key: str, default: Value | None = None) -> Value | None:
        entry = self._entries.get(key)
        return default if entry is None else entry[0]

    def last_update(self, key: str) -> int | None:
        entry = self._entries.get(key)
        return None if entry is None else entry[1]

    def snapshot(self) -> dict[str, Value]:
        return {k: v for k, (v, _) in self._entries.items()}

    def __contains__(self, key: str) -> bool:
        return key in self._entries


class KnowledgeBase:
    def __init__(self, rules: RuleSet) -> None:
        self.graph = DependencyGraph()
        self.state = StateStore()
        self.rules = rules

    def upsert_topology(self, snapshot: Topology) -> GraphDelta:
        return self.graph.upsert_topology(snapshot)

    def set_state(self, key: str, value: Value, tick: int) -> bool:
        return self.state.set(key, value, tick)

    def get_state(self, key: str) -> Value | None:
        return self.state.get(key)

    def mark_rule_suspects(self, rule: Rule, on: bool) -> list[str]:
        """Flag (or unflag) every node the rule's strategies touch.

        Returns warnings for targets missing from the graph.
        """
        warnings = []
        for name in sorted(rule.affected_nodes):
            info = self.graph.nodes.get(name)
            if info is None:
                warnings.append(f"rule {rule.name} targets unknown node {name}")
                continue
            if on:
                info.suspected_rules[rule.name] = rule.criticality
            else:
                info.suspected_rules.pop(rule.name, None)
            info.recompute_mark()
        return warnings

    def set_adapted(self, nodes: Iterable[str], value: bool) -> None:
        for name in nodes:
            if name in self.graph.nodes:
                self.graph.nodes[name].currently_adapted = value
