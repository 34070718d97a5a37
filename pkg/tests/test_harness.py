import csv
import io
import json

import pytest

from adaptron.harness import (
    AblationReport,
    UncertaintyCombo,
    ablate,
    compute_metrics,
    enumerate_combos,
    run_scenario,
    settle_ticks,
)
from adaptron.mapek import FULL_CONFIG, PlannerConfig
from adaptron.simbus import FaultKind, RunLog


def test_eighteen_combos_in_documented_order():
    combos = enumerate_combos()
    assert len(combos) == 18 == len(set(combos))
    assert str(combos[0]) == "OutageRestartable(camera_rgb)+Misalignment+Defocus"
    assert str(combos[9]) == "OutageRedeployOnly(fusion)+Misalignment+Defocus"
    assert {c.ok_source for c in combos} == {FaultKind.DEFOCUS}
    assert {c.error_node for c in combos} == {"camera_rgb", "fusion", "segmentation"}


def _scripted_log():
    log = RunLog()
    log.emit(0, "run_started")
    for t in range(0, 40):
        if not 10 <= t < 25:
            log.emit(t, "publish", node="segmentation", topic="segmentation")
    log.emit(5, "fault_injected", fault=0, fault_kind="OutageRedeployOnly", node="fusion")
    log.emit(5, "fault_injected", fault=1, fault_kind="Misalignment", node=None)
    log.emit(12, "symptom_detected", rule="FusionOutage", episode=0)
    log.emit(12, "symptom_detected", rule="SegmentationBad", episode=1)
    log.emit(14, "strategy_dispatched", dispatch="d0", episode=0, adaptations=[["fusion", "deactivate"], ["fusion", "activate"]])
    log.emit(15, "strategy_dispatched", dispatch="d1", episode=1, adaptations=[["fusion", "set_parameter"]])
    log.emit(17, "fault_cleared", fault=1, by="d1")
    log.emit(19, "strategy_failed", dispatch="d0")
    log.emit(20, "symptom_resolved", rule="SegmentationBad", episode=1, by="d1")
    log.emit(20, "strategy_dispatched", dispatch="d2", episode=0, adaptations=[["fusion", "redeploy"]])
    log.emit(24, "fault_cleared", fault=0, by="d2")
    log.emit(30, "symptom_resolved", rule="FusionOutage", episode=0, by="d2")
    log.emit(31, "strategy_dispatched", dispatch="d3", episode=2, adaptations=[["segmentation", "redeploy"]])
    log.emit(32, "symptom_resolved", rule="X", episode=2, by=None)
    log.emit(39, "run_finished")
    return log


def test_metrics_from_a_scripted_log():
    m = compute_metrics(_scripted_log(), tick_s=0.1)
    assert (m.resolved, m.executed) == (3, 4)
    assert m.resolved_over_executed == pytest.approx(0.75)
    # d1: 15 - 12, d2: 20 - 12
    assert m.reaction_times == pytest.approx([0.3, 0.8])
    assert m.reaction_time == pytest.approx(0.55)
    assert m.downtime == pytest.approx(1.5)
    # the fusion redeploy was needed; the segmentation one was not
    assert m.unnecessary_redeploys == 1


def test_metrics_of_an_empty_log():
    m = compute_metrics(RunLog(), tick_s=0.1)
    assert m.resolved_over_executed is None and m.reaction_time is None
    assert m.unnecessary_redeploys == 0 and m.downtime == 0.0


def test_redeploy_on_a_restartable_outage_is_unnecessary():
    log = RunLog()
    log.emit(0, "run_started")
    log.emit(1, "fault_injected", fault=0, fault_kind="OutageRestartable", node="fusion")
    log.emit(5, "strategy_dispatched", dispatch="d0", episode=0, adaptations=[["fusion", "redeploy"]])
    assert compute_metrics(log, 0.1).unnecessary_redeploys == 1


def test_downtime_counts_a_trailing_silence():
    log = RunLog()
    log.emit(0, "run_started")
    for t in range(5):
        log.emit(t, "publish", topic="segmentation")
    log.emit(20, "run_finished")
    # ticks 5..20 are silent
    assert compute_metrics(log, 0.1).downtime == pytest.approx(1.6)


def test_metrics_survive_an_ndjson_round_trip():
    result = run_scenario(enumerate_combos()[9], seed=2)
    reread = compute_metrics(RunLog.from_ndjson(result.log.to_ndjson()), 0.1)
    assert reread == result.metrics


def test_run_is_deterministic_per_seed():
    a = run_scenario(enumerate_combos()[5], seed=11)
    b = run_scenario(enumerate_combos()[5], seed=11)
    assert a.log.to_ndjson() == b.log.to_ndjson()


def test_run_reports_status_and_latent_faults():
    result = run_scenario(enumerate_combos()[9], seed=0)
    assert result.status == "all_resolved"
    (fin,) = result.log.of_kind("run_finished")
    assert fin["latent_faults"] == []
    starts = result.log.of_kind("run_started")
    assert starts[0]["config"] == "111" and starts[0]["seed"] == 0


def test_tight_budget_times_out():
    result = run_scenario(enumerate_combos()[0], seed=0, tick_budget=25)
    assert result.status == "timeout"
    assert result.ticks == 25


def test_settle_window(scenario):
    assert settle_ticks(scenario) == 18


def test_injection_jitter_stays_in_range(scenario):
    for seed in range(20):
        result = run_scenario(enumerate_combos()[0], seed=seed, tick_budget=30)
        ticks = [r["tick"] for r in result.log.of_kind("fault_injected")]
        assert all(scenario.inject_tick <= t <= scenario.inject_tick + scenario.jitter_max for t in ticks)


def test_small_ablation_report():
    configs = (FULL_CONFIG, PlannerConfig(False, False, False))
    report = ablate(1, seed0=3, configs=configs)
    assert len(report.rows) == 36
    assert {r["seed"] for r in report.rows} == {3}
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert len(rows) == 36 and rows[0]["dep_graph"] in ("0", "1")
    doc = json.loads(report.to_json())
    full = next(c for c in doc["configs"] if c["config"] == "111")
    assert full["runs"] == 18 and full["statuses"]["all_resolved"] == 18
    assert report.mean(FULL_CONFIG, "resolved_over_executed") == full["resolved_over_executed"]["mean"]
    empty = next(c for c in doc["configs"] if c["config"] == "010")
    assert empty["runs"] == 0 and empty["downtime"]["mean"] is None


def test_parallel_ablation_matches_serial():
    configs = (PlannerConfig(True, False, True),)
    serial = ablate(1, configs=configs)
    parallel = ablate(1, configs=configs, jobs=2)
    assert serial.rows == parallel.rows


def test_ablate_rejects_zero_repetitions():
    with pytest.raises(ValueError):
        ablate(0)


def test_report_on_no_rows():
    assert AblationReport([], 1, 0).to_csv().strip() == ""


def test_combo_fault_list():
    combo = UncertaintyCombo(FaultKind.OUTAGE_RESTARTABLE, "fusion", FaultKind.DEGRADATION)
    assert combo.faults() == [
        (FaultKind.OUTAGE_RESTARTABLE, "fusion"),
        (FaultKind.DEGRADATION, None),
        (FaultKind.DEFOCUS, None),
    ]
