"""Deterministic discrete-tick publish/subscribe bus with lifecycle nodes.

The bus stands in for the middleware of the managed system: nodes publish
scalar summaries on topics, expose adaptation services and can be broken
by scheduled fault injections.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

from .knowledge import Lifecycle, Topology
from .rulelang import AdaptationKind, AdaptationSpec, EvalError, eval_expression
from .rulelang.expr import Value


class RunLog:
    """Append-only event trace; one record per event."""

    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def emit(self, tick: int, kind: str, **payload: Any) -> dict[str, Any]:
        rec = {"tick": tick, "kind": kind, **payload}
        self.records.append(rec)
        return rec

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, *kinds: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["kind"] in kinds]

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records
        )

    @classmethod
    def from_ndjson(cls, text: str) -> "RunLog":
        log = cls()
        log.records = [json.loads(line) for line in text.splitlines() if line.strip()]
        return log


@dataclass
class Message:
    topic: str
    tick: int
    publisher: str
    payload: dict[str, Any]
    # tick of the oldest sensor data behind this message (a header stamp)
    stamp: int = -1


@dataclass
class TopicState:
    last: Message | None = None
    publish_ticks: list[int] = field(default_factory=list)


Behavior = Callable[["SimNode", Mapping[str, dict], "Bus"], Mapping[str, dict]]


@dataclass
class SimNode:
    name: str
    kind: str
    behavior: Behavior
    publishes: tuple[str, ...] = ()
    default_subscriptions: dict[str, str] = field(default_factory=dict)
    default_parameters: dict[str, Value] = field(default_factory=dict)
    launch_lifecycle: Lifecycle = Lifecycle.ACTIVE
    period: int = 1
    modes: dict[str, dict[str, Any]] = field(default_factory=dict)
    lifecycle: Lifecycle = field(init=False)
    subscriptions: dict[str, str] = field(init=False)
    parameters: dict[str, Value] = field(init=False)
    mode: str | None = field(init=False, default=None)
    # (tick, seq, tag) of the most recently applied adaptation effect
    last_effect: tuple[int, int, str | None] = field(init=False, default=(-1, -1, None))

    def __post_init__(self) -> None:
        self.relaunch(self.launch_lifecycle)

    def relaunch(self, lifecycle: Lifecycle, keep_wiring: bool = False) -> None:
        """Restart from launch defaults; remaps survive if ``keep_wiring``."""
        self.lifecycle = lifecycle
        if not keep_wiring:
            self.subscriptions = dict(self.default_subscriptions)
        self.parameters = dict(self.default_parameters)
        self.mode = None


class FaultKind(enum.Enum):
    OUTAGE_RESTARTABLE = "OutageRestartable"
    OUTAGE_REDEPLOY_ONLY = "OutageRedeployOnly"
    MISALIGNMENT = "Misalignment"
    DEGRADATION = "Degradation"
    STALE_ENHANCEMENT = "StaleEnhancement"
    DEFOCUS = "Defocus"

    @property
    def is_outage(self) -> bool:
        return self in (FaultKind.OUTAGE_RESTARTABLE, FaultKind.OUTAGE_REDEPLOY_ONLY)


@dataclass(frozen=True)
class Layout:
    """Names the fault models rely on inside the perception pipeline."""

    camera: str = "camera_rgb"
    depth_camera: str = "camera_depth"
    enhancement: str = "image_enhancement"
    fusion: str = "fusion"
    segmentation: str = "segmentation"
    camera_subscription: str = "camera_input"
    raw_topic: str = "rgb_raw"
    enhanced_topic: str = "rgb_enhanced"
    recalibration_param: str = "recalibration"
    autofocus_param: str = "autofocus"


def resolvable_by(kind: FaultKind, node: str | None = None) -> frozenset[str]:
    """Strategy names that clear the fault (restart/redeploy are per node)."""
    if kind is FaultKind.OUTAGE_RESTARTABLE:
        return frozenset({f"restart:{node}", f"redeploy:{node}"})
    if kind is FaultKind.OUTAGE_REDEPLOY_ONLY:
        return frozenset({f"redeploy:{node}"})
    return frozenset(
        {
            FaultKind.MISALIGNMENT: {"recalibration"},
            FaultKind.DEGRADATION: {"enhancement_activate"},
            FaultKind.STALE_ENHANCEMENT: {"enhancement_deactivate"},
            FaultKind.DEFOCUS: {"autofocus"},
        }[kind]
    )


@dataclass
class FaultInjection:
    kind: FaultKind
    inject_tick: int
    node: str | None = None
    id: int = -1
    active: bool = False
    cleared_tick: int | None = None
    cleared_by: str | None = None

    @property
    def pending(self) -> bool:
        return not self.active and self.cleared_tick is None

    def describe(self) -> str:
        return self.kind.value if self.node is None else f"{self.kind.value}({self.node})"


@dataclass(frozen=True)
class ServiceResult:
    ok: bool
    message: str = ""


@dataclass(order=True)
class _Effect:
    due: int
    seq: int
    node: str = field(compare=False)
    kind: AdaptationKind = field(compare=False)
    name: str | None = field(compare=False, default=None)
    value: Any = field(compare=False, default=None)
    tag: str | None = field(compare=False, default=None)


class ServiceError(Exception):
    pass


class Bus:
    """Single-threaded by contract: only the run driver calls ``advance_tick``."""

    def __init__(
        self,
        seed: int = 0,
        staleness_ticks: int = 3,
        layout: Layout | None = None,
        log: RunLog | None = None,
        env: dict[str, Any] | None = None,
    ) -> None:
        self.tick = -1
        self.rng = random.Random(seed)
        self.staleness_ticks = staleness_ticks
        self.layout = layout or Layout()
        self.log = log if log is not None else RunLog()
        self.env: dict[str, Any] = dict(env or {})
        self.nodes: dict[str, SimNode] = {}
        self.topics: dict[str, TopicState] = {}
        self.faults: list[FaultInjection] = []
        self._pending: list[_Effect] = []
        self._seq = 0
        self._diagnostics: list[tuple[str, Value, int]] = []
        self._stamp = -1

    # -- setup --------------------------------------------------------------

    def register(self, node: SimNode) -> SimNode:
        if node.name in self.nodes:
            raise ValueError(f"duplicate node {node.name}")
        self.nodes[node.name] = node
        for topic in node.publishes:
            self.topics.setdefault(topic, TopicState())
        return node

    def inject_fault(self, fault: FaultInjection) -> FaultInjection:
        if fault.inject_tick <= self.tick:
            raise ValueError(f"inject_tick {fault.inject_tick} is not in the future (now {self.tick})")
        if fault.kind.is_outage and fault.node not in self.nodes:
            raise ValueError(f"unknown node {fault.node}")
        fault.id = len(self.faults)
        self.faults.append(fault)
        return fault

    # -- queries ------------------------------------------------------------

    def fault_active(self, kind: FaultKind, node: str | None = None) -> bool:
        return any(f.active and f.kind is kind and (node is None or f.node == node) for f in self.faults)

    def _outage(self, node: str) -> bool:
        return any(f.active and f.kind.is_outage and f.node == node for f in self.faults)

    def introspect(self) -> Topology:
        # Endpoints are declared per node, so edges survive deactivation and
        # the relaunch window of a redeploy.
        publishers: dict[str, list[str]] = {}
        for name, node in self.nodes.items():
            for topic in node.publishes:
                publishers.setdefault(topic, []).append(name)
        edges = set()
        for sub in self.nodes:
            for topic in self.nodes[sub].subscriptions.values():
                for pub in publishers.get(topic, ()):
                    if pub != sub:
                        edges.add((pub, topic, sub))
        return Topology(
            nodes={n: node.lifecycle for n, node in self.nodes.items()},
            edges=frozenset(edges),
            subscriptions={n: dict(node.subscriptions) for n, node in self.nodes.items()},
        )

    def publish_ticks(self, topic: str) -> list[int]:
        state = self.topics.get(topic)
        return [] if state is None else state.publish_ticks

    def diagnose(self, key: str, value: Value) -> None:
        """Report a diagnostic, stamped like the data it was computed from."""
        self._diagnostics.append((key, value, self._stamp))

    def drain_diagnostics(self) -> list[tuple[str, Value, int]]:
        out, self._diagnostics = self._diagnostics, []
        return out

    def has_pending_effects(self) -> bool:
        return bool(self._pending)

    # -- the tick -----------------------------------------------------------

    def advance_tick(self) -> list[dict[str, Any]]:
        self.tick += 1
        t = self.tick
        start = len(self.log.records)

        for fault in self.faults:
            if fault.pending and fault.inject_tick == t:
                self._activate_fault(fault)

        self._pending.sort()
        while self._pending and self._pending[0].due <= t:
            self._apply(self._pending.pop(0))

        for node in self.nodes.values():
            if node.lifecycle is not Lifecycle.ACTIVE or t % node.period != 0:
                continue
            if self._outage(node.name):
                continue
            gathered = self._gather_inputs(node, t)
            if gathered is None:
                continue
            inputs, self._stamp = gathered
            for topic, payload in node.behavior(node, inputs, self).items():
                self._publish(node.name, topic, dict(payload), self._stamp)
        self._stamp = t

        self._check_conditions()
        return self.log.records[start:]

    def _gather_inputs(self, node: SimNode, t: int) -> tuple[dict[str, dict], int] | None:
        """Latest payload per subscription and the oldest stamp among them.

        Nodes are timer driven and reuse the last message until it is older
        than the staleness window; the stamp records how old the data is.
        """
        inputs: dict[str, dict] = {}
        stamp = t
        for sub, topic in node.subscriptions.items():
            last = self.topics.get(topic, TopicState()).last
            if last is None or t - last.tick > self.staleness_ticks:
                return None
            inputs[sub] = last.payload
            stamp = min(stamp, last.stamp)
        return inputs, stamp

    def _publish(self, publisher: str, topic: str, payload: dict, stamp: int) -> None:
        state = self.topics.setdefault(topic, TopicState())
        state.last = Message(topic, self.tick, publisher, payload, stamp)
        state.publish_ticks.append(self.tick)
        self.log.emit(self.tick, "publish", node=publisher, topic=topic)

    def _activate_fault(self, fault: FaultInjection) -> None:
        fault.active = True
        lay = self.layout
        if fault.kind is FaultKind.DEGRADATION:
            self.env["degraded"] = True
        elif fault.kind is FaultKind.STALE_ENHANCEMENT:
            self.nodes[lay.enhancement].lifecycle = Lifecycle.ACTIVE
            self.nodes[lay.fusion].subscriptions[lay.camera_subscription] = lay.enhanced_topic
        self.log.emit(self.tick, "fault_injected", fault=fault.id, fault_kind=fault.kind.value, node=fault.node)

    def _clear_fault(self, fault: FaultInjection, tag: str | None) -> None:
        fault.active = False
        fault.cleared_tick = self.tick
        fault.cleared_by = tag
        self.log.emit(self.tick, "fault_cleared", fault=fault.id, fault_kind=fault.kind.value, node=fault.node, by=tag)

    def _check_conditions(self) -> None:
        lay = self.layout
        enh = self.nodes.get(lay.enhancement)
        fusion = self.nodes.get(lay.fusion)
        if enh is None or fusion is None:
            return
        on_enhanced = fusion.subscriptions.get(lay.camera_subscription) == lay.enhanced_topic
        on_raw = fusion.subscriptions.get(lay.camera_subscription) == lay.raw_topic
        enh_active = enh.lifecycle is Lifecycle.ACTIVE
        tag = max(enh.last_effect, fusion.last_effect)[2]
        for fault in self.faults:
            if not fault.active:
                continue
            if fault.kind is FaultKind.DEGRADATION and on_enhanced and enh_active:
                self._clear_fault(fault, tag)
            elif fault.kind is FaultKind.STALE_ENHANCEMENT and on_raw and not enh_active:
                self._clear_fault(fault, tag)

    # -- adaptation services ------------------------------------------------

    def projected_lifecycle(self, name: str) -> Lifecycle:
        """Lifecycle once every queued effect on the node has landed."""
        node = self.nodes[name]
        state = node.lifecycle
        for eff in sorted(self._pending):
            if eff.node != name:
                continue
            if eff.kind in (AdaptationKind.ACTIVATE, AdaptationKind.REDEPLOY):
                state = Lifecycle.ACTIVE
            elif eff.kind is AdaptationKind.DEACTIVATE:
                state = Lifecycle.INACTIVE
            elif eff.kind is AdaptationKind.MODE_CHANGE:
                lc = node.modes.get(eff.name, {}).get("lifecycle")
                if lc:
                    state = Lifecycle[lc]
        return state

    def call_adaptation_service(
        self,
        node_name: str,
        request: AdaptationSpec,
        state: Mapping[str, Value] | None = None,
        tag: str | None = None,
    ) -> ServiceResult:
        """Validate and schedule one adaptation; the ack itself is immediate."""
        try:
            effect = self._prepare(node_name, request, state or {}, tag)
        except ServiceError as exc:
            self.log.emit(
                self.tick, "service_call", node=node_name, adaptation=request.kind.value,
                ok=False, message=str(exc), tag=tag,
            )
            return ServiceResult(False, str(exc))
        self.log.emit(
            self.tick, "service_call", node=node_name, adaptation=request.kind.value,
            ok=True, message="", tag=tag,
        )
        if request.kind is AdaptationKind.REDEPLOY:
            self.nodes[node_name].lifecycle = Lifecycle.FINALIZED
            self.log.emit(self.tick, "lifecycle", node=node_name, state=Lifecycle.FINALIZED.value)
        if effect.due <= self.tick:
            self._apply(effect)
        else:
            self._pending.append(effect)
        return ServiceResult(True)

    def _prepare(self, node_name: str, req: AdaptationSpec, state: Mapping[str, Value], tag: str | None) -> _Effect:
        node = self.nodes.get(node_name)
        if node is None:
            raise ServiceError(f"unknown node {node_name}")
        kind = req.kind
        value = None
        if kind is AdaptationKind.REPARAMETRIZE:
            if req.name not in node.parameters:
                raise ServiceError(f"unknown parameter {req.name} on {node_name}")
            try:
                value = eval_expression(req.value, state)
            except EvalError as exc:
                raise ServiceError(f"parameter expression failed: {exc}") from None
        elif kind is AdaptationKind.COMMUNICATION_CHANGE:
            if req.name not in node.subscriptions:
                raise ServiceError(f"unknown subscription {req.name} on {node_name}")
            value = req.topic
        elif kind is AdaptationKind.MODE_CHANGE:
            if req.name not in node.modes:
                raise ServiceError(f"unknown mode {req.name} on {node_name}")
        elif kind is AdaptationKind.ACTIVATE:
            cur = self.projected_lifecycle(node_name)
            if cur not in (Lifecycle.INACTIVE, Lifecycle.UNCONFIGURED):
                raise ServiceError(f"invalid transition {cur.value} -> ACTIVE")
        elif kind is AdaptationKind.DEACTIVATE:
            cur = self.projected_lifecycle(node_name)
            if cur is not Lifecycle.ACTIVE:
                raise ServiceError(f"invalid transition {cur.value} -> INACTIVE")
        self._seq += 1
        return _Effect(self.tick + req.impact_ticks, self._seq, node_name, kind, req.name, value, tag)

    def _apply(self, eff: _Effect) -> None:
        node = self.nodes[eff.node]
        lay = self.layout
        node.last_effect = (self.tick, eff.seq, eff.tag)
        cleared: list[FaultInjection] = []
        if eff.kind is AdaptationKind.REPARAMETRIZE:
            node.parameters[eff.name] = eff.value
            if eff.value is True or (not isinstance(eff.value, bool) and bool(eff.value)):
                if eff.node == lay.fusion and eff.name == lay.recalibration_param:
                    cleared += [f for f in self.faults if f.active and f.kind is FaultKind.MISALIGNMENT]
                if eff.node == lay.camera and eff.name == lay.autofocus_param:
                    cleared += [f for f in self.faults if f.active and f.kind is FaultKind.DEFOCUS]
        elif eff.kind is AdaptationKind.COMMUNICATION_CHANGE:
            node.subscriptions[eff.name] = eff.value
        elif eff.kind is AdaptationKind.ACTIVATE:
            node.lifecycle = Lifecycle.ACTIVE
            cleared += [
                f for f in self.faults
                if f.active and f.kind is FaultKind.OUTAGE_RESTARTABLE and f.node == eff.node
            ]
        elif eff.kind is AdaptationKind.DEACTIVATE:
            node.lifecycle = Lifecycle.INACTIVE
        elif eff.kind is AdaptationKind.REDEPLOY:
            # Communication changes are written to the deployment description,
            # so a relaunch keeps them; parameters return to launch values.
            node.relaunch(Lifecycle.ACTIVE, keep_wiring=True)
            cleared += [f for f in self.faults if f.active and f.kind.is_outage and f.node == eff.node]
        elif eff.kind is AdaptationKind.MODE_CHANGE:
            mode = node.modes[eff.name]
            node.mode = eff.name
            node.parameters.update(mode.get("parameters", {}))
            if mode.get("lifecycle"):
                node.lifecycle = Lifecycle[mode["lifecycle"]]
        self.log.emit(
            self.tick, "adaptation_applied", node=eff.node, adaptation=eff.kind.value,
            name=eff.name, value=eff.value, tag=eff.tag,
        )
        if eff.kind in (AdaptationKind.ACTIVATE, AdaptationKind.DEACTIVATE, AdaptationKind.REDEPLOY):
            self.log.emit(self.tick, "lifecycle", node=eff.node, state=node.lifecycle.value)
        for fault in cleared:
            self._clear_fault(fault, eff.tag)
