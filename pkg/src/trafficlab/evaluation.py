"""Simulation, metrics and evaluation reports for the three model families."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from trafficlab import kernels
from trafficlab.datasets import (
    DT,
    CarFollowEvent,
    DensityBucket,
    DrivingState,
    FlowSample,
    LaneChangeSample,
    StateThresholds,
    bucket_codes,
    classify_arrays,
    flow_arrays,
    lanechange_matrix,
)
from trafficlab.dsl.interp import CompiledCandidate, compile_candidate
from trafficlab.dsl.syntax import CandidateModel
from trafficlab.errors import SimulationError
from trafficlab.models import ModelVariant

STATE_LABELS = tuple(s.label for s in DrivingState)
BUCKET_LABELS = tuple(b.label for b in DensityBucket)


# --------------------------------------------------------------------------
# Model adapters
# --------------------------------------------------------------------------


def _as_compiled(model):
    if isinstance(model, CandidateModel):
        return compile_candidate(model)
    return model


def candidate_accel(compiled: CompiledCandidate) -> Callable:
    """Wrap a car-following candidate as ``accel(params, spacing, sv, lv)``."""

    def accel(params, spacing, sv_speed, lv_speed):
        bound = compiled.bind(params)
        spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
        inputs = {
            "spacing": spacing,
            "sv_spd": np.broadcast_to(np.asarray(sv_speed, dtype=float), spacing.shape),
            "lv_spd": np.broadcast_to(np.asarray(lv_speed, dtype=float), spacing.shape),
        }
        return compiled.raw(bound, inputs, spacing.shape[0])

    return accel


def _batch_simulator(model):
    """Return ``sim(params, s0, v0, lv, lengths, dt)`` for any car-following model."""
    model = _as_compiled(model)
    if isinstance(model, ModelVariant) and model.kernel is not None:
        kind = model.kernel
        return lambda p, *args: kernels.simulate_batch(kind, np.asarray(p, dtype=float), *args)
    if isinstance(model, CompiledCandidate):
        accel = candidate_accel(model)
    elif callable(model):
        accel = model
    else:
        raise TypeError(f"not a car-following model: {model!r}")
    return lambda p, *args: kernels.simulate_batch_generic(accel, p, *args)


def _decider(model):
    """Return ``decide(params, X) -> int array`` for a lane-change model."""
    model = _as_compiled(model)
    if isinstance(model, CompiledCandidate):
        return lambda p, x: (model(p, x) > 0).astype(np.int64)
    return lambda p, x: np.asarray(model(p, x)).astype(np.int64)


def _predictor(model):
    """Return ``speed(params, density) -> array`` for a flow model."""
    model = _as_compiled(model)
    if isinstance(model, CompiledCandidate):
        return lambda p, rho: model(p, {"density": rho})
    return lambda p, rho: np.broadcast_to(np.asarray(model(p, rho), dtype=float), np.shape(rho))


# --------------------------------------------------------------------------
# Car following
# --------------------------------------------------------------------------


@dataclass
class SimTrace:
    spacing: np.ndarray
    speed: np.ndarray

    def __len__(self):
        return self.spacing.shape[0]


@dataclass
class EventBatch:
    """Events padded to a common length; ``states`` is -1 on padding."""

    event_ids: list
    spacing: np.ndarray
    sv_speed: np.ndarray
    lv_speed: np.ndarray
    lengths: np.ndarray
    states: np.ndarray
    dt: float = DT

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.spacing.shape[1])[None, :] < self.lengths[:, None]

    @property
    def n_total(self) -> int:
        return int(self.lengths.sum())

    def __len__(self):
        return len(self.event_ids)


def pack_events(events: Sequence[CarFollowEvent], thresholds: StateThresholds = StateThresholds()) -> EventBatch:
    if not events:
        raise ValueError("no car-following events to evaluate")
    dts = {float(ev.dt) for ev in events}
    if len(dts) != 1:
        raise ValueError(f"events mix sampling intervals {sorted(dts)}")
    m = len(events)
    n = max(ev.n_steps for ev in events)
    spacing = np.zeros((m, n))
    sv = np.zeros((m, n))
    lv = np.zeros((m, n))
    states = np.full((m, n), -1, dtype=np.int64)
    lengths = np.zeros(m, dtype=np.int64)
    for i, ev in enumerate(events):
        k = ev.n_steps
        spacing[i, :k] = ev.spacing
        sv[i, :k] = ev.sv_speed
        lv[i, :k] = ev.lv_speed
        states[i, :k] = classify_arrays(ev.spacing, ev.sv_speed, ev.lv_speed, thresholds)
        lengths[i] = k
    return EventBatch([ev.event_id for ev in events], spacing, sv, lv, lengths, states, dts.pop())


def simulate_batch(model, params, batch: EventBatch):
    """Open-loop simulation of every event in ``batch`` from its first observed step."""
    sim = _batch_simulator(model)
    s_sim, v_sim, bad_event, bad_step = sim(
        params, batch.spacing[:, 0], batch.sv_speed[:, 0], batch.lv_speed, batch.lengths, batch.dt
    )
    if bad_event >= 0:
        eid = batch.event_ids[bad_event]
        raise SimulationError(
            f"event {eid}: non-finite acceleration at step {bad_step}", event_id=eid, step=bad_step
        )
    return s_sim, v_sim


def simulate_event(model, params, event: CarFollowEvent) -> SimTrace:
    batch = pack_events([event])
    s_sim, v_sim = simulate_batch(model, params, batch)
    return SimTrace(s_sim[0].copy(), v_sim[0].copy())


def _per_scenario(abs_err: np.ndarray, codes: np.ndarray, labels: Sequence[str]) -> dict:
    """Count-normalized mean of ``abs_err`` within each scenario code."""
    k = len(labels)
    counts = np.bincount(codes, minlength=k)
    sums = np.bincount(codes, weights=abs_err, minlength=k)
    out = {}
    for i, label in enumerate(labels):
        c = int(counts[i])
        out[label] = (float(sums[i] / c) if c else 0.0, c)
    return out


def evaluate_carfollow(model, params, events, thresholds: StateThresholds = StateThresholds()) -> "EvalReport":
    """MAE between simulated and observed spacing, overall and per driving state.

    ``events`` may be a sequence of :class:`CarFollowEvent` or a prepacked
    :class:`EventBatch` (the calibration loop packs once).
    """
    batch = events if isinstance(events, EventBatch) else pack_events(events, thresholds)
    s_sim, _ = simulate_batch(model, params, batch)
    mask = batch.mask
    abs_err = np.abs(s_sim[mask] - batch.spacing[mask])
    codes = batch.states[mask]
    total = float(np.mean(abs_err))
    return EvalReport("idm", total, _per_scenario(abs_err, codes, STATE_LABELS))


# --------------------------------------------------------------------------
# Lane change
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    TN: int
    FP: int
    FN: int

    def __post_init__(self):
        for name in ("TP", "TN", "FP", "FN"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


def _ratio(num, den) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    specificity: float
    counts: ConfusionCounts

    @classmethod
    def from_counts(cls, counts: ConfusionCounts) -> "ClassificationMetrics":
        tp, tn, fp, fn = counts.TP, counts.TN, counts.FP, counts.FN
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = _ratio(2.0 * precision * recall, precision + recall)
        specificity = _ratio(tn, tn + fp)
        return cls(precision, recall, f1, specificity, counts)

    def as_dict(self) -> dict:
        c = self.counts
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "specificity": self.specificity, "TP": c.TP, "TN": c.TN, "FP": c.FP, "FN": c.FN,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassificationMetrics":
        counts = ConfusionCounts(int(d["TP"]), int(d["TN"]), int(d["FP"]), int(d["FN"]))
        return cls(float(d["precision"]), float(d["recall"]), float(d["f1"]), float(d["specificity"]), counts)


def _binary(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(bool)


def classification_metrics(pred, labels) -> ClassificationMetrics:
    p = _binary(pred, "pred")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"pred and labels differ in length ({p.shape[0]} vs {y.shape[0]})")
    if p.size == 0:
        raise ValueError("cannot score an empty prediction set")
    tp = int(np.count_nonzero(p & y))
    tn = int(np.count_nonzero(~p & ~y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    return ClassificationMetrics.from_counts(ConfusionCounts(tp, tn, fp, fn))


def lanechange_loss(f1: float) -> float:
    return 1.0 - f1


def evaluate_lanechange(model, params, samples) -> "EvalReport":
    """F1-based evaluation; ``samples`` is a list of samples or an ``(X, y)`` pair."""
    if isinstance(samples, tuple):
        x, y = samples
    else:
        if not samples:
            raise ValueError("no lane-change samples to evaluate")
        x, y = lanechange_matrix(samples)
    if len(y) == 0:
        raise ValueError("no lane-change samples to evaluate")
    pred = _decider(model)(params, x)
    metrics = classification_metrics(pred, y)
    return EvalReport("mobil", lanechange_loss(metrics.f1), {}, classification=metrics)


# --------------------------------------------------------------------------
# Flow
# --------------------------------------------------------------------------


def evaluate_flow(model, params, samples) -> "EvalReport":
    """Speed MAE overall and per density bucket; ``samples`` may be ``(density, speed)``."""
    if isinstance(samples, tuple):
        density, speed = (np.asarray(a, dtype=float) for a in samples)
    else:
        if not samples:
            raise ValueError("no flow samples to evaluate")
        density, speed = flow_arrays(samples)
    if density.size == 0:
        raise ValueError("no flow samples to evaluate")
    pred = _predictor(model)(params, density)
    abs_err = np.abs(np.asarray(pred, dtype=float) - speed)
    total = float(np.mean(abs_err))
    return EvalReport("lwr", total, _per_scenario(abs_err, bucket_codes(density), BUCKET_LABELS))


def evaluate(family: str, model, params, data, thresholds: StateThresholds = StateThresholds()) -> "EvalReport":
    if family == "idm":
        return evaluate_carfollow(model, params, data, thresholds)
    if family == "mobil":
        return evaluate_lanechange(model, params, data)
    if family == "lwr":
        return evaluate_flow(model, params, data)
    raise LookupError(f"unknown family {family!r}")


def improvement_rate(base_loss: float, new_loss: float) -> float:
    if not base_loss > 0:
        raise ValueError(f"improvement rate needs a positive base loss, got {base_loss}")
    return 100.0 * ((base_loss - new_loss) / base_loss)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    family: str
    total_loss: float
    per_scenario: dict = field(default_factory=dict)  # label -> (loss, count)
    classification: ClassificationMetrics | None = None
    improvement_rate_pct: float | None = None

    def __post_init__(self):
        if (self.classification is not None) != (self.family == "mobil"):
            raise ValueError("classification metrics are present exactly for lane-change reports")

    @property
    def count(self) -> int:
        if self.classification is not None:
            return self.classification.counts.total
        return sum(c for _, c in self.per_scenario.values())

    def with_improvement(self, base_loss: float) -> "EvalReport":
        rate = improvement_rate(base_loss, self.total_loss) if math.isfinite(self.total_loss) else None
        return EvalReport(self.family, self.total_loss, dict(self.per_scenario), self.classification, rate)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "total_loss": self.total_loss,
            "per_scenario": {k: {"loss": v[0], "count": v[1]} for k, v in self.per_scenario.items()},
            "classification": self.classification.as_dict() if self.classification else None,
            "improvement_rate_pct": self.improvement_rate_pct,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        raw = d.get("per_scenario", {})
        canon = {"idm": STATE_LABELS, "lwr": BUCKET_LABELS}.get(d["family"], ())
        order = [k for k in canon if k in raw] + [k for k in raw if k not in canon]
        per = {k: (float(raw[k]["loss"]), int(raw[k]["count"])) for k in order}
        cls_d = d.get("classification")
        return cls(
            d["family"],
            float(d["total_loss"]),
            per,
            ClassificationMetrics.from_dict(cls_d) if cls_d else None,
            d.get("improvement_rate_pct"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def worst_scenario(self) -> str | None:
        populated = [(v[0], k) for k, v in self.per_scenario.items() if v[1] > 0]
        return max(populated)[1] if populated else None

    def render_lines(self, prefix: str = "Model") -> list[str]:
        """Log-style lines; ``prefix`` is "Model" or "Base model"."""
        lines = [f"{prefix} total loss: {self.total_loss:.3f}"]
        if self.family == "idm":
            body = ", ".join(f"{k}: {v[0]:.4f}" for k, v in self.per_scenario.items())
            lines.append(f"{prefix} loss for each driving scenarios: [{body}].")
        elif self.family == "lwr":
            body = ", ".join(f"{k}: {v[0]:.4f}" for k, v in self.per_scenario.items())
            worst = self.worst_scenario()
            tail = f" Based on the results, the model performs worst in the {worst.split(' ')[0]} density scenario." \
                if worst else ""
            lines.append(f"{prefix} loss for different density levels: [{body}].{tail}")
        else:
            m = self.classification
            c = m.counts
            lines.append(
                f"{prefix} evaluation results: [Precision: {m.precision:.3f}, Recall: {m.recall:.3f}, "
                f"F1: {m.f1:.3f}, Specificity: {m.specificity:.3f}], "
                f"{prefix} confusion matrix: [TP: {c.TP}, TN: {c.TN}, FP: {c.FP}, FN: {c.FN}]"
            )
        return lines

    def render_text(self, prefix: str = "Model", base_loss: float | None = None) -> str:
        lines = self.render_lines(prefix)
        if base_loss is not None:
            rate = self.improvement_rate_pct
            if rate is None and base_loss > 0 and math.isfinite(self.total_loss):
                rate = improvement_rate(base_loss, self.total_loss)
            shown = f"{rate:.2f}" if rate is not None else "n/a"
            lines.append(
                f"Baseline model loss: {base_loss:.3f}, improved model loss: {self.total_loss:.3f}, "
                f"improved rate: {shown}"
            )
        return "\n".join(lines)


def weighted_total(per_scenario: dict) -> float:
    """Count-weighted mean of per-scenario losses."""
    n = sum(c for _, c in per_scenario.values())
    if n == 0:
        raise ValueError("no populated scenarios")
    return sum(loss * c for loss, c in per_scenario.values()) / n


__all__ = [
    "BUCKET_LABELS",
    "STATE_LABELS",
    "ClassificationMetrics",
    "ConfusionCounts",
    "EvalReport",
    "EventBatch",
    "FlowSample",
    "LaneChangeSample",
    "SimTrace",
    "candidate_accel",
    "classification_metrics",
    "evaluate",
    "evaluate_carfollow",
    "evaluate_flow",
    "evaluate_lanechange",
    "improvement_rate",
    "lanechange_loss",
    "pack_events",
    "simulate_batch",
    "simulate_event",
    "weighted_total",
]
