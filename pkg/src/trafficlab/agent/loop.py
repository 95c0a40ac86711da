"""Iterative model-improvement loop.

One trial: calibrate and evaluate the family baseline, then repeat
idea -> candidate (with a debug loop) -> calibrate -> evaluate -> analyze
until the improvement target is met or the iteration budget runs out.
Every step is appended to a JSONL log as soon as it completes.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from trafficlab import calibration, evaluation, models
from trafficlab.agent.prompts import load_templates
from trafficlab.agent.retrieval import CorpusIndex, NullSearchProvider
from trafficlab.datasets import StateThresholds, split_events
from trafficlab.dsl.interp import compile_candidate, validate_candidate
from trafficlab.dsl.signatures import get_signature
from trafficlab.dsl.syntax import GRAMMAR, extract_dsl_block, parse_candidate, render_candidate
from trafficlab.dsl.transcriptions import TRANSCRIPTIONS
from trafficlab.errors import (
    CandidateRuntimeError,
    DslError,
    ParseError,
    SimulationError,
    TrafficlabError,
)
from trafficlab.llm import ChatRequest, RetryPolicy, with_retry

DEFAULT_TARGETS = {"idm": 25.0, "mobil": 50.0, "lwr": 50.0}
MODEL_NAMES = {"idm": "IDM", "mobil": "MOBIL", "lwr": "LWR"}
OUTCOMES = ("success", "below-target", "codegen-failed")
STATUSES = ("improved-model-found", "exhausted")
NO_PASSAGES = "No passages retrieved."


@dataclass(frozen=True)
class TrialConfig:
    family: str
    target_improvement_pct: float | None = None
    max_iterations: int = 10
    debug_max_attempts: int = 3
    calib_fraction: float = 0.2
    split_seed: int = 0
    ga: calibration.GaConfig = field(default_factory=calibration.GaConfig)
    bounds: dict = field(default_factory=dict)  # name -> (lower, upper) overrides
    thresholds: StateThresholds = field(default_factory=StateThresholds)
    retrieval_k: int = 3
    model_id: str = "gpt-4-turbo"
    idea_temperature: float = 0.7
    code_temperature: float = 0.2
    max_tokens: int = 2048
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.family not in models.FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; available: {', '.join(models.FAMILIES)}")
        if self.target_improvement_pct is None:
            object.__setattr__(self, "target_improvement_pct", DEFAULT_TARGETS[self.family])
        if not self.target_improvement_pct > 0:
            raise ValueError("target_improvement_pct must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.debug_max_attempts < 1:
            raise ValueError("debug_max_attempts must be at least 1")

    @property
    def model_name(self) -> str:
        return MODEL_NAMES[self.family]

    def snapshot(self) -> dict:
        d = asdict(self)
        d["bounds"] = {k: list(v) for k, v in sorted(self.bounds.items())}
        return d


# --------------------------------------------------------------------------
# Records and persistence
# --------------------------------------------------------------------------


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class IterationRecord:
    index: int
    idea_text: str
    outcome: str
    candidate: str | None = None  # canonical DSL text
    attempts: int = 0
    codegen_note: str | None = None
    params: dict | None = None
    calibration_loss: float | None = None
    report: dict | None = None
    improvement_rate_pct: float | None = None
    error: str | None = None
    analysis_text: str = ""
    analysis_sections: dict | None = None
    prompts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"invalid outcome {self.outcome!r}")

    @property
    def suggestions(self) -> str:
        if self.analysis_sections and self.analysis_sections.get("suggestions"):
            return self.analysis_sections["suggestions"]
        return self.analysis_text

    @property
    def questions(self) -> str:
        if self.analysis_sections and self.analysis_sections.get("questions"):
            return self.analysis_sections["questions"]
        return "(none)"

    def eval_report(self) -> evaluation.EvalReport | None:
        return evaluation.EvalReport.from_dict(self.report) if self.report else None

    def to_dict(self) -> dict:
        return {"event": "iteration", **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        d = {k: v for k, v in d.items() if k != "event"}
        return cls(**d)


@dataclass
class TrialLog:
    config: dict
    baseline: dict | None = None  # {"params": {...}, "calibration_loss": x, "report": {...}}
    iterations: list = field(default_factory=list)
    status: str | None = None
    success_factors: str | None = None

    def baseline_report(self) -> evaluation.EvalReport | None:
        return evaluation.EvalReport.from_dict(self.baseline["report"]) if self.baseline else None

    def events(self) -> list:
        out = [{"event": "config", "config": self.config}]
        if self.baseline is not None:
            out.append({"event": "baseline", **self.baseline})
        out.extend(rec.to_dict() for rec in self.iterations)
        if self.status is not None:
            out.append({"event": "status", "status": self.status, "success_factors": self.success_factors})
        return out

    def to_jsonl(self) -> str:
        return "".join(dump_event(e) for e in self.events())


def dump_event(event: dict) -> str:
    return json.dumps(event, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


class TrialLogWriter:
    """Append-only JSONL sink; each event is flushed as soon as it is written."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")

    def write(self, event: dict) -> None:
        self._fh.write(dump_event(event))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TrialLogError(TrafficlabError, ValueError):
    pass


def parse_trial_log(text: str, source: str = "<trial>") -> TrialLog:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise TrialLogError(f"{source}: trial log is empty")
    log = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            ev = json.loads(line)
            kind = ev["event"]
            if kind == "config":
                log = TrialLog(ev["config"])
            elif log is None:
                raise ValueError("first event must be the config")
            elif kind == "baseline":
                log.baseline = {k: v for k, v in ev.items() if k != "event"}
            elif kind == "iteration":
                log.iterations.append(IterationRecord.from_dict(ev))
            elif kind == "status":
                log.status = ev["status"]
                log.success_factors = ev.get("success_factors")
            else:
                raise ValueError(f"unknown event kind {kind!r}")
        except (ValueError, KeyError, TypeError) as exc:
            raise TrialLogError(f"{source}: line {lineno}: malformed trial event ({exc})") from None
    return log


def read_trial_log(path) -> TrialLog:
    path = Path(path)
    return parse_trial_log(path.read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------
# Agent steps
# --------------------------------------------------------------------------


@dataclass
class Agent:
    """Bundle of the backend, templates and retrieval used by the steps."""

    backend: object
    cfg: TrialConfig
    index: CorpusIndex = field(default_factory=CorpusIndex)
    templates: dict = field(default_factory=load_templates)
    online: object = field(default_factory=NullSearchProvider)
    sleep: Callable = None

    def ask(self, prompt: str, temperature: float) -> str:
        request = ChatRequest(
            self.cfg.model_id,
            (("system", self.templates["system"].text.strip()), ("user", prompt)),
            temperature,
            self.cfg.max_tokens,
        )
        kwargs = {"sleep": self.sleep} if self.sleep else {}
        return with_retry(self.backend, request, self.cfg.retry, **kwargs).content


def format_passages(passages) -> str:
    if not passages:
        return NO_PASSAGES
    return "\n\n".join(f"[{i}] ({p.source}) {p.text}" if p.source else f"[{i}] {p.text}"
                       for i, p in enumerate(passages, start=1))


def _retrieve(agent: Agent, query: str) -> list:
    k = agent.cfg.retrieval_k
    hits = [p for p in agent.index.search(query, k) if p.score > 0]
    return hits + agent.online.search(query, k)


def generate_idea(agent: Agent, history: Sequence[IterationRecord] = ()) -> tuple:
    """Return ``(idea_text, prompt)``."""
    cfg = agent.cfg
    name = cfg.model_name
    if not history:
        passages = _retrieve(agent, f"{name} {cfg.family} model deficiencies improvement")
        prompt = agent.templates["idea-generation"].render(model_name=name, passages=format_passages(passages))
    else:
        last = history[-1]
        previous = "\n\n".join(f"Iteration {r.index}:\n{r.idea_text.strip()}" for r in history)
        passages = _retrieve(agent, f"{name} {last.suggestions} {last.questions}")
        prompt = agent.templates["idea-refinement"].render(
            model_name=name,
            previous_ideas=previous,
            suggestions=last.suggestions,
            questions=last.questions,
            passages=format_passages(passages),
        )
    return agent.ask(prompt, cfg.idea_temperature), prompt


@dataclass
class CodegenResult:
    candidate: object | None
    attempts: int
    prompts: list
    errors: str = ""
    source: str = ""


def _check_response(text: str, family: str):
    """Parse and validate one codegen response; returns (candidate, source, error_text)."""
    try:
        source = extract_dsl_block(text)
    except ParseError as exc:
        return None, text, f"format error: {exc}"
    try:
        cand = parse_candidate(source)
    except ParseError as exc:
        return None, source, f"parse error: {exc}"
    if cand.family != family:
        return None, source, f"error: candidate declares family {cand.family!r}, expected {family!r}"
    diags = validate_candidate(cand)
    if not diags.ok:
        return None, source, diags.text()
    return cand, source, diags.text()


def generate_candidate(agent: Agent, idea: str, attempts_max: int | None = None) -> CodegenResult:
    cfg = agent.cfg
    if not idea.strip():
        raise ValueError("idea text is empty")
    attempts_max = attempts_max or cfg.debug_max_attempts
    sig = get_signature(cfg.family)
    example = TRANSCRIPTIONS[(cfg.family, "baseline")] if (cfg.family, "baseline") in TRANSCRIPTIONS \
        else TRANSCRIPTIONS[(cfg.family, "improved-final")]
    common = {"model_name": cfg.model_name, "idea": idea.strip(), "grammar": GRAMMAR, "signature": sig.describe()}
    prompt = agent.templates["code-generation"].render(example=example.strip(), **common)
    prompts = []
    source, errors = "", ""
    for attempt in range(1, attempts_max + 1):
        prompts.append(prompt)
        reply = agent.ask(prompt, cfg.code_temperature)
        cand, source, errors = _check_response(reply, cfg.family)
        if cand is not None:
            cand = parse_candidate(source, attempts=attempt)
            return CodegenResult(cand, attempt, prompts, errors, source)
        prompt = agent.templates["code-refinement"].render(source=source.strip(), errors=errors, **common)
    return CodegenResult(None, attempts_max, prompts, errors, source)


_SECTION_RE = re.compile(
    r"^[ \t]*(?:#+[ \t]*|\*\*)?(reasons?|suggestions?|new questions?)(?:\*\*)?[ \t]*:?[ \t]*(?:\*\*)?[ \t]*$",
    re.IGNORECASE | re.MULTILINE,
)
_SECTION_KEYS = {"reason": "reasons", "suggestion": "suggestions", "new question": "questions"}


def parse_analysis(text: str) -> dict | None:
    """Split analyzer output into reasons / suggestions / questions by heading."""
    hits = list(_SECTION_RE.finditer(text))
    if not hits:
        return None
    out = {}
    for i, m in enumerate(hits):
        key = _SECTION_KEYS[m.group(1).lower().rstrip("s")]
        end = hits[i + 1].start() if i + 1 < len(hits) else len(text)
        body = text[m.end():end].strip()
        if body and key not in out:
            out[key] = body
    return out or None


def baseline_info(family: str, baseline: dict) -> str:
    report = evaluation.EvalReport.from_dict(baseline["report"])
    dsl = TRANSCRIPTIONS.get((family, "baseline"))
    names = models.get_variant(family, "baseline").param_names
    values = baseline["params"]
    order = [n for n in names if n in values] + [n for n in values if n not in names]
    params = ", ".join(f"{k}={values[k]:.6g}" for k in order)
    parts = []
    if dsl:
        parts.append(f"Baseline model definition:\n{dsl.strip()}")
    parts.append(f"Calibrated parameters: {params}")
    parts.append(report.render_text("Base model"))
    return "\n".join(parts)


def iteration_log(rec: IterationRecord, base_loss: float) -> str:
    lines = [f"============ Iteration {rec.index} ============", "Idea:", rec.idea_text.strip()]
    if rec.candidate:
        lines += ["Candidate:", rec.candidate]
    if rec.outcome == "codegen-failed":
        lines.append(f"Code generation failed after {rec.attempts} attempt(s): {rec.codegen_note}")
    if rec.error:
        lines.append(f"Evaluation error: {rec.error}")
    report = rec.eval_report()
    if report is not None:
        lines.append(report.render_text("Model", base_loss=base_loss))
    return "\n".join(lines)


def analyze(agent: Agent, baseline: dict, records: Sequence[IterationRecord], success: bool) -> tuple:
    """Return ``(text, sections_or_None, prompt)``."""
    if not records:
        raise ValueError("analysis needs at least one iteration record")
    base_loss = baseline["report"]["total_loss"]
    chosen = list(records[-1:]) if success else list(records[-3:])
    history = "\n\n".join(iteration_log(r, base_loss) for r in chosen)
    name = "analysis-success" if success else "analysis-failure"
    prompt = agent.templates[name].render(
        model_name=agent.cfg.model_name, baseline_info=baseline_info(agent.cfg.family, baseline), history=history
    )
    text = agent.ask(prompt, agent.cfg.idea_temperature)
    return text, parse_analysis(text), prompt


# --------------------------------------------------------------------------
# Trial
# --------------------------------------------------------------------------


def _split(cfg: TrialConfig, data):
    items = list(data)
    if not items:
        raise ValueError("dataset is empty")
    return split_events(items, cfg.calib_fraction, cfg.split_seed)


def _calibrate_and_evaluate(cfg: TrialConfig, model, cal, val):
    bounds = calibration.default_bounds(cfg.family, model, cfg.bounds)
    result = calibration.calibrate_model(cfg.family, model, cal, bounds, cfg.ga, cfg.thresholds)
    target = compile_candidate(model) if not isinstance(model, models.ModelVariant) else model
    report = evaluation.evaluate(cfg.family, target, result.best_params, val, cfg.thresholds)
    return result, report


def _codegen_failure_analysis(rec: IterationRecord, errors: str) -> str:
    return (
        "## Reasons\n"
        f"No valid candidate was produced in {rec.attempts} attempt(s); nothing was evaluated.\n\n"
        "## Suggestions\n"
        "Keep the previous proposal but express it so it passes validation. Last diagnostics:\n"
        f"{errors}\n\n"
        "## New questions\n"
        "Which parts of the proposal can be written with the available operators and at most two extra parameters?"
    )


def run_trial(cfg: TrialConfig, backend, data, *, index: CorpusIndex | None = None, templates: dict | None = None,
              writer: TrialLogWriter | None = None, sleep: Callable | None = None) -> TrialLog:
    """Run one improvement trial; ``data`` is the full dataset for ``cfg.family``."""
    agent = Agent(backend, cfg, index or CorpusIndex(), templates or load_templates(), sleep=sleep)
    log = TrialLog(cfg.snapshot())

    def emit(event):
        if writer is not None:
            writer.write(event)

    emit({"event": "config", "config": log.config})
    cal, val = _split(cfg, data)

    base_model = models.get_variant(cfg.family, "baseline")
    base_result, base_report = _calibrate_and_evaluate(cfg, base_model, cal, val)
    log.baseline = {
        "params": base_result.params_dict(),
        "calibration_loss": _finite_or_none(base_result.best_loss),
        "report": base_report.to_dict(),
    }
    emit({"event": "baseline", **log.baseline})
    base_loss = base_report.total_loss

    for i in range(cfg.max_iterations):
        idea, idea_prompt = generate_idea(agent, log.iterations)
        code = generate_candidate(agent, idea)
        prompts = {"idea": idea_prompt, "code": code.prompts}
        if code.candidate is None:
            rec = IterationRecord(i, idea, "codegen-failed", attempts=code.attempts,
                                  codegen_note=code.errors, prompts=prompts)
            rec.analysis_text = _codegen_failure_analysis(rec, code.errors)
            rec.analysis_sections = parse_analysis(rec.analysis_text)
            log.iterations.append(rec)
            emit(rec.to_dict())
            continue

        rec = IterationRecord(i, idea, "below-target", candidate=render_candidate(code.candidate),
                              attempts=code.attempts, prompts=prompts)
        try:
            result, report = _calibrate_and_evaluate(cfg, code.candidate, cal, val)
            rec.params = result.params_dict()
            rec.calibration_loss = _finite_or_none(result.best_loss)
            rate = evaluation.improvement_rate(base_loss, report.total_loss)
            report.improvement_rate_pct = rate
            rec.report = report.to_dict()
            rec.improvement_rate_pct = rate
            if rate >= cfg.target_improvement_pct:
                rec.outcome = "success"
        except (SimulationError, CandidateRuntimeError, DslError, FloatingPointError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"

        success = rec.outcome == "success"
        text, sections, prompt = analyze(agent, log.baseline, log.iterations + [rec], success)
        rec.analysis_text, rec.analysis_sections = text, sections
        rec.prompts["analysis"] = prompt
        log.iterations.append(rec)
        emit(rec.to_dict())
        if success:
            log.status = "improved-model-found"
            log.success_factors = text
            break
    else:
        log.status = "exhausted"

    emit({"event": "status", "status": log.status, "success_factors": log.success_factors})
    return log


def best_iteration(log: TrialLog) -> IterationRecord | None:
    scored = [r for r in log.iterations if r.improvement_rate_pct is not None]
    return max(scored, key=lambda r: (r.improvement_rate_pct, -r.index)) if scored else None


__all__ = [
    "Agent",
    "CodegenResult",
    "IterationRecord",
    "TrialConfig",
    "TrialLog",
    "TrialLogError",
    "TrialLogWriter",
    "analyze",
    "best_iteration",
    "format_passages",
    "generate_candidate",
    "generate_idea",
    "parse_analysis",
    "parse_trial_log",
    "read_trial_log",
    "run_trial",
]
