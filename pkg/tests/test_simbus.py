import pytest

from adaptron.harness import ERROR_KINDS, ERROR_NODES
from adaptron.knowledge import Lifecycle
from adaptron.mapek import frequency
from adaptron.rulelang import AdaptationKind, AdaptationSpec, parse_expression
from adaptron.simbus import Bus, FaultInjection, FaultKind, RunLog, SimNode, resolvable_by

OTHER_KINDS = (FaultKind.MISALIGNMENT, FaultKind.DEGRADATION, FaultKind.STALE_ENHANCEMENT, FaultKind.DEFOCUS)
SOURCES = [(k, n) for n in ERROR_NODES for k in ERROR_KINDS] + [(k, None) for k in OTHER_KINDS]


def _ticker(name, topic, period=1):
    return SimNode(name, "t", lambda node, inputs, bus: {topic: {}}, publishes=(topic,), period=period)


def test_frequency_of_a_period_two_publisher():
    bus = Bus()
    bus.register(_ticker("slow", "s", period=2))
    bus.register(_ticker("idle", "i"))
    bus.nodes["idle"].lifecycle = Lifecycle.INACTIVE
    for _ in range(30):
        bus.advance_tick()
    assert frequency(bus.publish_ticks("s"), bus.tick, 10, 0.1) == pytest.approx(5.0)
    assert frequency(bus.publish_ticks("i"), bus.tick, 10, 0.1) == 0.0
    assert frequency(bus.publish_ticks("missing"), bus.tick, 10, 0.1) == 0.0


def test_frequency_window_is_half_open():
    ticks = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    # window (0, 10] holds ten publishes
    assert frequency(ticks, 10, 10, 0.1) == pytest.approx(10.0)
    assert frequency([0], 10, 10, 0.1) == 0.0


def _strategy_key(strategy):
    kinds = {a.kind for a in strategy.adaptations}
    target = strategy.adaptations[0].target
    if kinds == {AdaptationKind.REDEPLOY}:
        return f"redeploy:{target}"
    if kinds == {AdaptationKind.ACTIVATE, AdaptationKind.DEACTIVATE} and len(strategy.affected_nodes) == 1:
        return f"restart:{target}"
    return strategy.name


def _all_strategies(rules):
    return [s for r in rules.rules for s in r.strategies]


@pytest.mark.parametrize("kind, node", SOURCES, ids=lambda v: getattr(v, "value", v))
def test_fault_strategy_matrix(scenario, rules, kind, node):
    for strategy in _all_strategies(rules):
        bus = scenario.build_bus(seed=1)
        fault = bus.inject_fault(FaultInjection(kind, 5, node))
        for _ in range(10):
            bus.advance_tick()
        assert fault.active
        for a in strategy.adaptations:
            if not bus.call_adaptation_service(a.target, a, {}, tag=strategy.name).ok:
                break
        for _ in range(10):
            bus.advance_tick()
        expected = _strategy_key(strategy) in resolvable_by(kind, node)
        assert (not fault.active) == expected, (strategy.name, fault.describe())
        if expected:
            assert fault.cleared_by == strategy.name


def test_every_source_has_a_resolving_strategy(rules):
    keys = {_strategy_key(s) for s in _all_strategies(rules)}
    for kind, node in SOURCES:
        assert resolvable_by(kind, node) & keys


def test_outage_silences_the_node_and_downstream(scenario):
    bus = scenario.build_bus()
    bus.inject_fault(FaultInjection(FaultKind.OUTAGE_RESTARTABLE, 10, "fusion"))
    for _ in range(30):
        bus.advance_tick()
    assert max(bus.publish_ticks("fused")) == 9
    # segmentation reuses the last fused message for the staleness window
    assert max(bus.publish_ticks("segmentation")) == 9 + scenario.staleness_ticks
    assert max(bus.publish_ticks("rgb_raw")) == 29


def test_header_stamps_track_the_oldest_input(scenario):
    bus = scenario.build_bus()
    bus.inject_fault(FaultInjection(FaultKind.OUTAGE_RESTARTABLE, 10, "camera_rgb"))
    stamps = {}
    for _ in range(20):
        bus.advance_tick()
        for key, _, stamp in bus.drain_diagnostics():
            if key == "segmentation_entropy":
                stamps[bus.tick] = stamp
        if bus.tick < 10:
            assert bus.topics["segmentation"].last.stamp == bus.tick
    assert stamps[9] == 9
    # each hop may reuse its input for the staleness window
    assert all(stamps[t] == 9 for t in range(10, 16))
    assert 16 not in stamps


def test_stale_enhancement_rewires_fusion(scenario):
    bus = scenario.build_bus()
    bus.inject_fault(FaultInjection(FaultKind.STALE_ENHANCEMENT, 2))
    for _ in range(5):
        bus.advance_tick()
    assert bus.nodes["image_enhancement"].lifecycle is Lifecycle.ACTIVE
    assert bus.nodes["fusion"].subscriptions["camera_input"] == "rgb_enhanced"
    entropy = [v for k, v, _ in bus.drain_diagnostics() if k == "segmentation_entropy"]
    assert entropy[0] == pytest.approx(0.03) and entropy[-1] == pytest.approx(0.08)


def test_redeploy_finalizes_then_relaunches_keeping_wiring(scenario):
    bus = scenario.build_bus()
    bus.advance_tick()
    fusion = bus.nodes["fusion"]
    fusion.parameters["recalibration"] = True
    fusion.subscriptions["camera_input"] = "rgb_enhanced"
    spec = AdaptationSpec("fusion", AdaptationKind.REDEPLOY, 3)
    assert bus.call_adaptation_service("fusion", spec).ok
    assert fusion.lifecycle is Lifecycle.FINALIZED
    assert bus.projected_lifecycle("fusion") is Lifecycle.ACTIVE
    assert bus.has_pending_effects()
    for _ in range(3):
        bus.advance_tick()
    assert fusion.lifecycle is Lifecycle.ACTIVE
    assert fusion.parameters == {"recalibration": False}
    assert fusion.subscriptions["camera_input"] == "rgb_enhanced"
    assert not bus.has_pending_effects()


def test_introspection_keeps_declared_edges_of_inactive_nodes(scenario):
    bus = scenario.build_bus()
    topo = bus.introspect()
    assert topo.nodes["image_enhancement"] is Lifecycle.INACTIVE
    assert topo.edges == {
        ("camera_rgb", "rgb_raw", "fusion"),
        ("camera_rgb", "rgb_raw", "image_enhancement"),
        ("camera_depth", "depth_raw", "fusion"),
        ("fusion", "fused", "segmentation"),
    }
    bus.nodes["fusion"].lifecycle = Lifecycle.FINALIZED
    assert bus.introspect().edges == topo.edges


@pytest.mark.parametrize(
    "node, spec, message",
    [
        ("ghost", AdaptationSpec("ghost", AdaptationKind.ACTIVATE, 1), "unknown node ghost"),
        ("fusion", AdaptationSpec("fusion", AdaptationKind.ACTIVATE, 1), "invalid transition ACTIVE -> ACTIVE"),
        (
            "image_enhancement",
            AdaptationSpec("image_enhancement", AdaptationKind.DEACTIVATE, 1),
            "invalid transition INACTIVE -> INACTIVE",
        ),
        (
            "fusion",
            AdaptationSpec("fusion", AdaptationKind.REPARAMETRIZE, 1, name="gain", value=parse_expression("1")),
            "unknown parameter gain on fusion",
        ),
        (
            "fusion",
            AdaptationSpec("fusion", AdaptationKind.REPARAMETRIZE, 1, name="recalibration", value=parse_expression("x")),
            "parameter expression failed",
        ),
        (
            "fusion",
            AdaptationSpec("fusion", AdaptationKind.COMMUNICATION_CHANGE, 1, name="lidar", topic="t"),
            "unknown subscription lidar on fusion",
        ),
        ("fusion", AdaptationSpec("fusion", AdaptationKind.MODE_CHANGE, 1, name="turbo"), "unknown mode turbo on fusion"),
    ],
)
def test_service_rejections_are_logged(scenario, node, spec, message):
    bus = scenario.build_bus()
    bus.advance_tick()
    result = bus.call_adaptation_service(node, spec)
    assert not result.ok and message in result.message
    (rec,) = bus.log.of_kind("service_call")
    assert rec["ok"] is False and message in rec["message"]
    assert not bus.has_pending_effects()


def test_pending_effects_count_towards_lifecycle_checks(scenario):
    bus = scenario.build_bus()
    bus.advance_tick()
    deact = AdaptationSpec("fusion", AdaptationKind.DEACTIVATE, 2)
    assert bus.call_adaptation_service("fusion", deact).ok
    assert not bus.call_adaptation_service("fusion", deact).ok
    assert bus.call_adaptation_service("fusion", AdaptationSpec("fusion", AdaptationKind.ACTIVATE, 3)).ok


def test_mode_change_switches_lifecycle(scenario):
    bus = scenario.build_bus()
    bus.advance_tick()
    spec = AdaptationSpec("segmentation", AdaptationKind.MODE_CHANGE, 1, name="standby")
    assert bus.call_adaptation_service("segmentation", spec).ok
    bus.advance_tick()
    assert bus.nodes["segmentation"].lifecycle is Lifecycle.INACTIVE
    assert bus.nodes["segmentation"].mode == "standby"


def test_zero_impact_applies_immediately(scenario):
    bus = scenario.build_bus()
    bus.advance_tick()
    spec = AdaptationSpec("camera_rgb", AdaptationKind.REPARAMETRIZE, 0, name="autofocus", value=parse_expression("true"))
    assert bus.call_adaptation_service("camera_rgb", spec).ok
    assert bus.nodes["camera_rgb"].parameters["autofocus"] is True


def test_injection_validation():
    bus = Bus()
    bus.register(_ticker("a", "t"))
    bus.advance_tick()
    with pytest.raises(ValueError):
        bus.inject_fault(FaultInjection(FaultKind.DEFOCUS, 0))
    with pytest.raises(ValueError):
        bus.inject_fault(FaultInjection(FaultKind.OUTAGE_RESTARTABLE, 5, "ghost"))
    with pytest.raises(ValueError):
        bus.register(_ticker("a", "t"))


def _trace(scenario, seed):
    bus = scenario.build_bus(seed=seed)
    for kind, node in SOURCES:
        bus.inject_fault(FaultInjection(kind, 5 + bus.rng.randint(0, 4), node))
    for _ in range(40):
        bus.advance_tick()
    return bus.log.to_ndjson()


def test_bus_is_deterministic(scenario):
    assert _trace(scenario, 3) == _trace(scenario, 3)


def test_log_round_trips_through_ndjson(scenario):
    text = _trace(scenario, 1)
    assert RunLog.from_ndjson(text).to_ndjson() == text
