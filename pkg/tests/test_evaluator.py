import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netarena.evaluator import (
    EfficiencyMetrics,
    EvaluationReport,
    SloConfig,
    Submission,
    aggregate,
    check_slos,
    grade_detection,
    grade_localization,
    grade_rca,
    summary_csv,
    window_series,
)
from netarena.incident import GroundTruth, ROOT_CAUSES


def truth_for(entities=(), causes=(), expected=True):
    return GroundTruth(
        detected_expected=expected,
        entities=sorted(entities),
        cause_set=tuple(sorted(causes)),
        injection_times=[5000] if expected else [],
    )


def universe_of(n):
    return [(f"n{i:03d}", "eth0") for i in range(n)]


# --- detection ------------------------------------------------------------------

def test_detection_true_on_issue_spec():
    r = grade_detection(Submission(detected=True), truth_for(expected=True))
    assert r.exact_match and r.tp == 1


def test_detection_false_negative():
    r = grade_detection(Submission(detected=False), truth_for(expected=True))
    assert not r.exact_match and r.fn == 1


def test_detection_false_positive_on_control():
    r = grade_detection(Submission(detected=True), truth_for(expected=False))
    assert not r.exact_match and r.fp == 1


# --- localization ------------------------------------------------------------------

def naive_confusion(pred_mask, truth_mask):
    """Independent positionwise counter used as the oracle."""
    tp = sum(1 for p, t in zip(pred_mask, truth_mask) if p and t)
    fp = sum(1 for p, t in zip(pred_mask, truth_mask) if p and not t)
    fn = sum(1 for p, t in zip(pred_mask, truth_mask) if not p and t)
    tn = sum(1 for p, t in zip(pred_mask, truth_mask) if not p and not t)
    return tp, fp, fn, tn


def test_localization_exact_identity():
    uni = universe_of(10)
    truth = truth_for(entities=[uni[3]])
    r = grade_localization(Submission(localization=[uni[3]]), truth, uni)
    assert r.exact_match and r.fp == 0 and r.fn == 0


def test_localization_empty_prediction_frozen_example():
    # universe 10, ground truth one positive, empty prediction:
    # tp=0 fn=1 tn=9 fp=0, per-entity accuracy 0.9
    uni = universe_of(10)
    truth = truth_for(entities=[uni[0]])
    r = grade_localization(Submission(localization=[]), truth, uni)
    assert (r.tp, r.fp, r.fn, r.tn) == (0, 0, 1, 9)
    assert r.per_entity_accuracy == pytest.approx(0.9)
    assert not r.exact_match


def test_localization_one_extra_frozen_example():
    uni = universe_of(10)
    truth = truth_for(entities=[uni[2]])
    r = grade_localization(Submission(localization=[uni[2], uni[5]]), truth, uni)
    assert r.fp == 1 and not r.exact_match
    assert r.recall == pytest.approx(1.0)


def test_localization_rejects_entries_outside_universe():
    uni = universe_of(4)
    with pytest.raises(ValueError) as err:
        grade_localization(Submission(localization=[("ghost", "eth9")]), truth_for(), uni)
    assert "ghost" in str(err.value)


def test_confusion_matches_naive_counter_1000_random():
    rng = random.Random(42)
    for _ in range(1000):
        n = rng.randrange(1, 201)
        uni = universe_of(n)
        truth_idx = [i for i in range(n) if rng.random() < 0.2]
        pred_idx = [i for i in range(n) if rng.random() < 0.2]
        truth = truth_for(entities=[uni[i] for i in truth_idx])
        r = grade_localization(Submission(localization=[uni[i] for i in pred_idx]), truth, uni)
        tmask = [i in set(truth_idx) for i in range(n)]
        pmask = [i in set(pred_idx) for i in range(n)]
        assert (r.tp, r.fp, r.fn, r.tn) == naive_confusion(pmask, tmask)
        assert r.tp + r.fp + r.fn + r.tn == n


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), st.data())
def test_exact_match_iff_perfect_accuracy(n, data):
    uni = universe_of(n)
    tset = data.draw(st.sets(st.integers(0, n - 1)))
    pset = data.draw(st.sets(st.integers(0, n - 1)))
    truth = truth_for(entities=[uni[i] for i in tset])
    r = grade_localization(Submission(localization=[uni[i] for i in pset]), truth, uni)
    assert r.exact_match == (r.per_entity_accuracy == 1.0)
    assert r.exact_match == (tset == pset)


# --- rca --------------------------------------------------------------------------

def test_rca_identity_and_disjoint():
    ok = grade_rca(Submission(root_causes=["link_down"]), truth_for(causes=["link_down"]))
    assert ok.exact_match
    swapped = grade_rca(Submission(root_causes=["link_flap"]), truth_for(causes=["link_down"]))
    assert swapped.fp == 1 and swapped.fn == 1 and not swapped.exact_match


def test_rca_composite_partial_recall():
    truth = truth_for(causes=["link_down", "icmp_acl_block"])
    r = grade_rca(Submission(root_causes=["link_down"]), truth)
    assert r.fn == 1 and r.recall == pytest.approx(0.5)
    assert r.tp + r.fp + r.fn + r.tn == len(ROOT_CAUSES)


# --- SLOs ------------------------------------------------------------------------

def make_windows(flow="bg:a>b", t0=5000, p95=5.0, offered=1000, dropped=0):
    samples = {flow: [(t0 + i * 10, p95, offered // 100, (offered - dropped) // 100, dropped // 100)
                      for i in range(100)]}
    return window_series(samples)


def test_slo_idle_network_no_violations():
    windows = make_windows(p95=2.0, dropped=0)
    assert check_slos(windows, SloConfig(max_p95_latency_ms=50, max_loss_fraction=0.01), since_ms=0) == []


def test_slo_vacuous_limits():
    windows = make_windows(p95=500.0, dropped=900)
    assert check_slos(windows, SloConfig(), since_ms=0) == []


def test_slo_loss_violation_detected():
    windows = make_windows(dropped=500)
    out = check_slos(windows, SloConfig(max_loss_fraction=0.0), since_ms=0)
    assert out and out[0].metric == "loss_fraction"


def test_slo_ignores_pre_injection_windows():
    windows = make_windows(t0=0, dropped=900)
    assert check_slos(windows, SloConfig(max_loss_fraction=0.0), since_ms=5000) == []


def test_window_series_p95_nearest_rank():
    samples = {"bg:x": [(i * 10, float(i + 1), 0, 0, 0) for i in range(100)]}
    w = window_series(samples)[0]
    assert w.p95_ms == 95.0  # ceil(0.95*100) = 95th smallest of 1..100
    assert w.samples == 100


# --- aggregation ---------------------------------------------------------------------

def report_with(detect=True, localize=True, rca=True, model="m", wall=1.0):
    from netarena.evaluator import GoalResult

    goals = {
        "detect": GoalResult("detect", detect, 1, 0, 0 if detect else 1, 0),
        "localize": GoalResult("localize", localize, 1, 0 if localize else 1, 0, 8),
        "rca": GoalResult("rca", rca, 1, 0 if rca else 1, 0, 16),
    }
    return EvaluationReport(
        incident="x",
        spec_hash="h",
        goals=goals,
        efficiency=EfficiencyMetrics(wall_time_s=wall, tool_calls=3,
                                     agent_metadata={"model": model, "steps": 4}),
        slo_violations=[],
        tool_histogram={"ping": 3},
        submission=Submission(detected=detect),
    )


def test_aggregate_mean_of_two():
    rows = aggregate([report_with(detect=True), report_with(detect=False)])
    assert rows[0]["Det. Acc."] == pytest.approx(0.5)
    assert rows[0]["Runs"] == 2


def test_aggregate_single_report_identity():
    rep = report_with()
    row = aggregate([rep])[0]
    assert row["Det. Acc."] == 1.0
    assert row["Time (s)"] == rep.efficiency.wall_time_s
    assert row["# Tools"] == rep.efficiency.tool_calls


def test_aggregate_matches_counting_oracle_100_reports():
    rng = random.Random(7)
    reports, count = [], {"detect": 0, "localize": 0, "rca": 0}
    for _ in range(100):
        flags = {g: rng.random() < 0.5 for g in count}
        for g in count:
            count[g] += flags[g]
        reports.append(report_with(**{k: v for k, v in zip(("detect", "localize", "rca"), flags.values())}))
    row = aggregate(reports)[0]
    assert row["Det. Acc."] == pytest.approx(count["detect"] / 100)
    assert row["Loc. Acc."] == pytest.approx(count["localize"] / 100)
    assert row["RCA Acc."] == pytest.approx(count["rca"] / 100)


def test_summary_csv_columns():
    text = summary_csv(aggregate([report_with()]))
    header = text.splitlines()[0]
    for col in ("Model", "Time (s)", "# Steps", "# Tools", "# In tokens",
                "# Out tokens", "# Rea. Tokens", "Det. Acc.", "Loc. Acc.", "RCA Acc."):
        assert col in header


def test_grading_is_pure():
    uni = universe_of(12)
    truth = truth_for(entities=[uni[1], uni[4]], causes=["link_down"])
    sub = Submission(detected=True, localization=[uni[1]], root_causes=["link_down"])
    a = grade_localization(sub, truth, uni).to_dict()
    b = grade_localization(sub, truth, uni).to_dict()
    assert a == b
