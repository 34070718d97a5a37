"""The simulated perception pipeline and its scenario file.

Images are not simulated: nodes exchange small scalar summaries and the
segmentation node reports an entropy derived from what it received.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .knowledge import Lifecycle
from .simbus import Bus, FaultInjection, FaultKind, Layout, RunLog, SimNode

DEFAULT_CONSTANTS = {
    "healthy_entropy": 0.03,
    "misalignment_entropy": 0.10,
    "degraded_entropy": 0.09,
    "stale_enhancement_entropy": 0.08,
    "focus_ok": 1.0,
    "focus_blurred": 0.2,
}


def _constants(bus: Bus) -> Mapping[str, float]:
    return bus.env.get("constants", DEFAULT_CONSTANTS)


def rgb_camera(node: SimNode, inputs, bus: Bus):
    c = _constants(bus)
    blurred = bus.fault_active(FaultKind.DEFOCUS)
    bus.diagnose(f"{node.name}.focus_measure", c["focus_blurred"] if blurred else c["focus_ok"])
    return {t: {"degraded": bool(bus.env.get("degraded", False))} for t in node.publishes}


def depth_camera(node: SimNode, inputs, bus: Bus):
    return {t: {} for t in node.publishes}


def enhancement(node: SimNode, inputs, bus: Bus):
    src = next(iter(inputs.values()), {})
    degraded = src.get("source_degraded", src.get("degraded", False))
    return {t: {"enhanced": True, "source_degraded": degraded} for t in node.publishes}


def fusion(node: SimNode, inputs, bus: Bus):
    cam = inputs.get(bus.layout.camera_subscription, {})
    payload = {
        "enhanced": cam.get("enhanced", False),
        "degraded": cam.get("degraded", False),
        "source_degraded": cam.get("source_degraded", cam.get("degraded", False)),
        "misaligned": bus.fault_active(FaultKind.MISALIGNMENT),
    }
    return {t: payload for t in node.publishes}


def segmentation_entropy(fused: Mapping[str, Any], c: Mapping[str, float]) -> float:
    entropy = c["healthy_entropy"]
    if fused.get("misaligned"):
        entropy = max(entropy, c["misalignment_entropy"])
    if fused.get("enhanced") and not fused.get("source_degraded"):
        entropy = max(entropy, c["stale_enhancement_entropy"])
    if not fused.get("enhanced") and fused.get("degraded"):
        entropy = max(entropy, c["degraded_entropy"])
    return entropy


def segmentation(node: SimNode, inputs, bus: Bus):
    fused = next(iter(inputs.values()), {})
    entropy = segmentation_entropy(fused, _constants(bus))
    bus.diagnose("segmentation_entropy", entropy)
    return {t: {"entropy": entropy} for t in node.publishes}


BEHAVIORS = {
    "rgb_camera": rgb_camera,
    "depth_camera": depth_camera,
    "enhancement": enhancement,
    "fusion": fusion,
    "segmentation": segmentation,
}


@dataclass(frozen=True)
class NodeConfig:
    name: str
    kind: str
    publishes: tuple[str, ...] = ()
    subscriptions: Mapping[str, str] = field(default_factory=dict)
    parameters: Mapping[str, Any] = field(default_factory=dict)
    lifecycle: str = "ACTIVE"
    period: int = 1
    modes: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)


@dataclass(frozen=True)
class FaultConfig:
    kind: FaultKind
    inject_tick: int
    node: str | None = None


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeConfig, ...]
    name: str = "perception"
    seed: int = 0
    tick_ms: float = 100.0
    staleness_ticks: int = 3
    window_ticks: int = 10
    tick_budget: int = 500
    inject_tick: int = 20
    jitter_max: int = 2
    monitor_topics: tuple[str, ...] = ()
    constants: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CONSTANTS))
    faults: tuple[FaultConfig, ...] = ()

    @property
    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    @property
    def tick_s(self) -> float:
        return self.tick_ms / 1000.0

    def build_bus(self, seed: int | None = None, log: RunLog | None = None) -> Bus:
        bus = Bus(
            seed=self.seed if seed is None else seed,
            staleness_ticks=self.staleness_ticks,
            layout=Layout(),
            log=log,
            env={"constants": dict(self.constants)},
        )
        for n in self.nodes:
            if n.kind not in BEHAVIORS:
                raise ValueError(f"node {n.name}: unknown kind {n.kind!r}")
            bus.register(
                SimNode(
                    name=n.name,
                    kind=n.kind,
                    behavior=BEHAVIORS[n.kind],
                    publishes=tuple(n.publishes),
                    default_subscriptions=dict(n.subscriptions),
                    default_parameters=dict(n.parameters),
                    launch_lifecycle=Lifecycle[n.lifecycle],
                    period=n.period,
                    modes={k: dict(v) for k, v in n.modes.items()},
                )
            )
        return bus


class ScenarioError(ValueError):
    pass


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    try:
        nodes = tuple(
            NodeConfig(
                name=n["name"],
                kind=n["kind"],
                publishes=tuple(n.get("publishes", ())),
                subscriptions=dict(n.get("subscriptions") or {}),
                parameters=dict(n.get("parameters") or {}),
                lifecycle=n.get("lifecycle", "ACTIVE"),
                period=int(n.get("period", 1)),
                modes=dict(n.get("modes") or {}),
            )
            for n in data["nodes"]
        )
        faults = tuple(
            FaultConfig(FaultKind(f["kind"]), int(f["inject_tick"]), f.get("node"))
            for f in data.get("faults") or ()
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    constants = dict(DEFAULT_CONSTANTS)
    constants.update(data.get("constants") or {})
    topics = data.get("monitor_topics") or sorted({t for n in nodes for t in n.publishes})
    return Scenario(
        nodes=nodes,
        name=data.get("name", "perception"),
        seed=int(data.get("seed", 0)),
        tick_ms=float(data.get("tick_ms", 100.0)),
        staleness_ticks=int(data.get("staleness_ticks", 3)),
        window_ticks=int(data.get("window_ticks", 10)),
        tick_budget=int(data.get("tick_budget", 500)),
        inject_tick=int(data.get("inject_tick", 20)),
        jitter_max=int(data.get("jitter_max", 2)),
        monitor_topics=tuple(topics),
        constants=constants,
        faults=faults,
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(yaml.safe_load(fh))


def data_path(name: str) -> Path:
    return Path(str(resources.files("adaptron") / "data" / name))


def default_scenario() -> Scenario:
    return load_scenario(data_path("perception.yaml"))


def default_rules_text() -> str:
    return data_path("perception.rules").read_text(encoding="utf-8")


def fault_injections(faults, bus: Bus) -> list[FaultInjection]:
    return [bus.inject_fault(FaultInjection(f.kind, f.inject_tick, f.node)) for f in faults]
