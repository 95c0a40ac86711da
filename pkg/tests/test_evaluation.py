import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab import models
from trafficlab.datasets import CarFollowEvent, FlowSample, LaneChangeSample
from trafficlab.dsl import compile_candidate, parse_candidate
from trafficlab.dsl.transcriptions import transcription
from trafficlab.errors import SimulationError
from trafficlab.evaluation import (
    BUCKET_LABELS,
    STATE_LABELS,
    ClassificationMetrics,
    ConfusionCounts,
    EvalReport,
    classification_metrics,
    evaluate,
    evaluate_carfollow,
    evaluate_flow,
    evaluate_lanechange,
    improvement_rate,
    lanechange_loss,
    pack_events,
    simulate_batch,
    simulate_event,
    weighted_total,
)

IDM_P = np.array([25.0, 1.4, 1.2, 1.8, 4.0, 2.5])


def _events(m=6, n=40, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(m):
        k = int(rng.integers(5, n))
        lv = np.maximum(0, 12 + np.cumsum(rng.normal(0, 0.3, k)))
        out.append(CarFollowEvent(f"e{i}", rng.uniform(5, 60, k), rng.uniform(0, 20, k), lv))
    return out


def test_confusion_anchor():
    m = ClassificationMetrics.from_counts(ConfusionCounts(3188, 12208, 2592, 11612))
    assert m.precision == pytest.approx(0.552, abs=1e-3)
    assert m.recall == pytest.approx(0.215, abs=1e-3)
    assert m.f1 == pytest.approx(0.310, abs=1e-3)
    assert m.specificity == pytest.approx(0.825, abs=1e-3)


def test_zero_denominators():
    m = ClassificationMetrics.from_counts(ConfusionCounts(0, 5, 0, 0))
    assert (m.precision, m.recall, m.f1, m.specificity) == (0.0, 0.0, 0.0, 1.0)


def _naive(pred, labels):
    tp = tn = fp = fn = 0
    for p, y in zip(pred, labels):
        if p and y:
            tp += 1
        elif not p and not y:
            tn += 1
        elif p:
            fp += 1
        else:
            fn += 1
    return tp, tn, fp, fn


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_metrics_match_naive_loop(pairs):
    pred, labels = zip(*pairs)
    m = classification_metrics(list(pred), list(labels))
    c = m.counts
    assert (c.TP, c.TN, c.FP, c.FN) == _naive(pred, labels)
    assert m == ClassificationMetrics.from_counts(c)


def test_metrics_input_errors():
    with pytest.raises(ValueError):
        classification_metrics([1, 0], [1])
    with pytest.raises(ValueError):
        classification_metrics([2], [1])
    with pytest.raises(ValueError):
        classification_metrics([], [])


def test_losses_and_rates():
    assert lanechange_loss(0.310) == 0.69
    assert lanechange_loss(0.846) == pytest.approx(0.154, abs=1e-15)
    assert improvement_rate(0.690, 0.154) == pytest.approx(77.68, abs=0.01)
    assert improvement_rate(0.4346, 0.03364) == pytest.approx(92.26, abs=0.1)
    assert improvement_rate(1.0, 1.5) == -50.0
    with pytest.raises(ValueError):
        improvement_rate(0.0, 0.1)


def test_stratified_identity_anchor():
    per = {"low": (0.1123, 3339), "medium": (0.3367, 1780), "high": (0.7519, 3942)}
    assert weighted_total(per) == pytest.approx(0.4346, abs=5e-4)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 2)), min_size=1, max_size=300))
def test_flow_weighted_identity(rows):
    density, speed = (np.array(c) for c in zip(*rows))
    rep = evaluate_flow(models.get_variant("lwr", "baseline"), [0.9, 0.8], (density, speed))
    assert abs(weighted_total(rep.per_scenario) - rep.total_loss) <= 1e-9
    assert rep.count == len(rows)
    assert list(rep.per_scenario) == list(BUCKET_LABELS)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_carfollow_weighted_identity(seed):
    rep = evaluate_carfollow(models.get_variant("idm", "baseline"), IDM_P, _events(seed=seed))
    assert abs(weighted_total(rep.per_scenario) - rep.total_loss) <= 1e-9
    assert list(rep.per_scenario) == list(STATE_LABELS)


def test_zero_accel_conservation():
    n = 10_000
    ev = CarFollowEvent("flat", np.full(n, 17.3), np.full(n, 13.7), np.full(n, 13.7))
    trace = simulate_event(lambda p, s, v, lv: np.zeros_like(s), IDM_P, ev)
    assert np.max(np.abs(trace.spacing - 17.3)) <= 1e-12


def test_hand_example():
    ev = CarFollowEvent("h", [10.0, 10.0], [5.0, 5.0], [5.0, 5.0])
    trace = simulate_event(lambda p, s, v, lv: np.full_like(s, -1.0), IDM_P, ev)
    assert trace.speed[1] == 4.9 and trace.spacing[1] == 10.005


def test_speed_never_negative():
    ev = CarFollowEvent("stop", np.full(50, 3.0), np.full(50, 0.5), np.zeros(50))
    trace = simulate_event(models.get_variant("idm", "baseline"), IDM_P, ev)
    assert np.all(trace.speed >= 0)


def test_native_and_candidate_agree_on_simulation():
    evs = _events(seed=3)
    native = evaluate_carfollow(models.get_variant("idm", "baseline"), IDM_P, evs)
    dsl = evaluate_carfollow(compile_candidate(transcription("idm", "baseline")), IDM_P, evs)
    assert dsl.total_loss == pytest.approx(native.total_loss, abs=1e-9)


def test_simulation_error_names_event():
    batch = pack_events(_events(m=3))
    bad = IDM_P.copy()
    bad[0] = 0.0
    with pytest.raises(SimulationError) as info:
        simulate_batch(models.get_variant("idm", "baseline"), bad, batch)
    assert info.value.event_id == "e0" and info.value.step == 0


def test_lanechange_report():
    rng = np.random.default_rng(5)
    samples = [LaneChangeSample(*rng.uniform(0, 30, 11), label=int(i % 2)) for i in range(40)]
    mp = [25, 2, 1.5, 1.5, 2, 4, 0.2, 2, 0.1]
    rep = evaluate_lanechange(models.get_variant("mobil", "baseline"), mp, samples)
    assert rep.total_loss == 1.0 - rep.classification.f1
    assert rep.count == 40 and rep.per_scenario == {}
    cand = compile_candidate(transcription("mobil", "improved-final"))
    a = evaluate("mobil", cand, mp, samples)
    b = evaluate("mobil", models.get_variant("mobil", "improved-final"), mp, samples)
    assert a.classification == b.classification


def test_report_json_roundtrip():
    rep = evaluate_flow(
        models.get_variant("lwr", "baseline"), [0.9, 0.8], [FlowSample(0.1 * i, 0.5) for i in range(11)]
    ).with_improvement(0.5)
    again = EvalReport.from_json(rep.to_json())
    assert again == rep and list(again.per_scenario) == list(BUCKET_LABELS)
    m = EvalReport("mobil", 0.69, {}, ClassificationMetrics.from_counts(ConfusionCounts(3188, 12208, 2592, 11612)))
    assert EvalReport.from_json(m.to_json()) == m
    with pytest.raises(ValueError):
        EvalReport("lwr", 0.1, {}, m.classification)


def test_render_lines():
    per = dict(zip(BUCKET_LABELS, [(0.1123, 3339), (0.3367, 1780), (0.7519, 3942)]))
    text = EvalReport("lwr", 0.4346, per).render_text("Base model")
    assert text.startswith("Base model total loss: 0.435")
    assert "performs worst in the high density scenario." in text
    m = EvalReport("mobil", 0.69, {}, ClassificationMetrics.from_counts(ConfusionCounts(3188, 12208, 2592, 11612)))
    line = m.render_text("Base model")
    assert "Precision: 0.552" in line and "TP: 3188" in line
    out = EvalReport("mobil", 0.154, {}, m.classification).render_text("Model", base_loss=0.69)
    assert out.endswith("improved rate: 77.68")


def test_empty_inputs_raise():
    with pytest.raises(ValueError):
        evaluate_flow(models.get_variant("lwr", "baseline"), [1, 1], [])
    with pytest.raises(ValueError):
        evaluate_carfollow(models.get_variant("idm", "baseline"), IDM_P, [])
    with pytest.raises(LookupError):
        evaluate("nope", None, None, None)


def test_candidate_flow_eval():
    cand = compile_candidate(parse_candidate("(defmodel lwr () (param v_f))"))
    rep = evaluate_flow(cand, [0.5, 1.0], (np.array([0.1, 0.9]), np.array([0.5, 0.7])))
    assert math.isclose(rep.total_loss, 0.1)


@given(st.floats(1e-6, 1e6))
def test_rate_identities(b):
    assert improvement_rate(b, 0.0) == 100.0
    assert improvement_rate(b, b) == 0.0


def test_flow_mae_basic_properties():
    rng = np.random.default_rng(0)
    d, v = rng.uniform(0, 1, 200), rng.uniform(0, 1, 200)
    perfect = evaluate_flow(lambda p, x: v, None, (d, v))
    assert perfect.total_loss == 0.0
    single = evaluate_flow(lambda p, x: np.zeros_like(x), None, (d * 0.29, v))
    assert single.per_scenario["low (0~0.3)"][0] == pytest.approx(single.total_loss, abs=1e-12)
