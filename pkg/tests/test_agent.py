import dataclasses
import json

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from trafficlab.agent import loop
from trafficlab.agent.loop import (
    NO_PASSAGES,
    Agent,
    IterationRecord,
    TrialConfig,
    TrialLogError,
    TrialLogWriter,
    analyze,
    generate_candidate,
    generate_idea,
    parse_analysis,
    parse_trial_log,
    read_trial_log,
    run_trial,
)
from trafficlab.agent.prompts import TEMPLATE_NAMES, PromptRenderError, PromptTemplate, load_templates
from trafficlab.agent.retrieval import CorpusIndex, Passage, retrieve_passages
from trafficlab.calibration import GaConfig
from trafficlab.dsl import GRAMMAR, get_signature
from trafficlab.llm import ChatResponse, ReplayBackend, ReplayExhaustedError

from scenarios import (
    FAILURE_ANALYSIS,
    LOGISTIC_CANDIDATE,
    SQUARED_CANDIDATE,
    fenced,
    logistic_flow,
    lwr_transcript,
)

FAST_GA = GaConfig(population_size=30, generations=30)
ALLOWED = {"model_name", "previous_ideas", "suggestions", "questions", "source", "errors", "baseline_info",
           "history", "passages", "idea", "grammar", "signature", "example"}


class Recorder:
    """Replay backend that keeps every prompt it was sent."""

    def __init__(self, responses):
        self.inner = ReplayBackend(responses)
        self.prompts = []

    def chat(self, request):
        self.prompts.append(request.messages[-1][1])
        return self.inner.chat(request)


@pytest.fixture(scope="module")
def flow():
    return logistic_flow(n=600)


@pytest.fixture(scope="module")
def lwr_trial(flow):
    cfg = TrialConfig("lwr", target_improvement_pct=50, max_iterations=2, ga=FAST_GA)
    rec = Recorder(lwr_transcript())
    return run_trial(cfg, rec, flow), rec


# -- prompts ---------------------------------------------------------------


def test_templates_load_with_known_placeholders():
    t = load_templates()
    assert set(TEMPLATE_NAMES) <= set(t)
    for name in TEMPLATE_NAMES:
        assert set(t[name].placeholders) <= ALLOWED, name
        assert "model_name" in t[name].placeholders


def test_idea_prompt_anchor():
    text = load_templates()["idea-generation"].render(model_name="IDM", passages=NO_PASSAGES)
    assert "improving the original IDM model" in text


def test_code_prompt_contains_grammar_and_signature():
    sig = get_signature("lwr")
    text = load_templates()["code-generation"].render(
        model_name="LWR", idea="x", grammar=GRAMMAR, signature=sig.describe(), example="(defmodel lwr () 1)"
    )
    assert GRAMMAR in text and sig.describe() in text


def test_missing_binding_names_placeholder():
    tmpl = load_templates()["idea-refinement"]
    with pytest.raises(PromptRenderError, match="suggestions"):
        tmpl.render(model_name="LWR", previous_ideas="a", questions="b", passages="c")


def test_render_is_literal_single_pass():
    tmpl = PromptTemplate("t", "A {x} B {y}")
    assert tmpl.render(x="{y}", y="$1 \\n") == "A {y} B $1 \\n"


def test_failure_prompt_has_guidelines():
    text = load_templates()["analysis-failure"].text.lower()
    assert "deep learning" in text


def test_custom_prompt_dir_overrides(tmp_path):
    (tmp_path / "system.txt").write_text("custom system")
    t = load_templates(tmp_path)
    assert t["system"].text == "custom system"
    assert t["idea-generation"].text == load_templates()["idea-generation"].text


# -- retrieval -------------------------------------------------------------


def test_bm25_unique_term_first():
    index = CorpusIndex(["traffic flow waves", "lane change gap acceptance", "traffic density"])
    hits = retrieve_passages(index, "acceptance", 3)
    assert hits[0].text == "lane change gap acceptance"
    assert [h.text for h in hits[1:]] == ["traffic flow waves", "traffic density"]


def test_bm25_edge_cases():
    assert CorpusIndex().search("anything", 3) == []
    index = CorpusIndex(["a b", "b c"])
    assert len(index.search("b", 10)) == 2


def test_bm25_reference_score():
    # one doc of 2 tokens out of 2 docs, avgdl 2: idf = ln(1.5/1.5 + 1) = ln 2
    import math

    index = CorpusIndex(["x y", "y z"])
    s = index.scores("x")
    assert s[1] == 0.0
    assert s[0] == pytest.approx(math.log(2) * 2.2 / (1 + 1.2), rel=1e-12)


_words = st.sampled_from(["car", "lane", "gap", "speed", "flow", "jam", "wave", "merge"])
_docs = st.lists(st.lists(_words, min_size=1, max_size=12).map(" ".join), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(_docs, st.lists(_words, min_size=1, max_size=4).map(" ".join))
def test_bm25_nonnegative(docs, query):
    assert all(s >= 0 for s in CorpusIndex(docs).scores(query))


@settings(max_examples=200, deadline=None)
@given(_docs, _words)
def test_bm25_order_stable_under_neutral_append(docs, term):
    lengths = [len(d.split()) for d in docs]
    # the appended doc avoids the query term and matches the mean length exactly
    assume(sum(lengths) % len(lengths) == 0)
    index = CorpusIndex(docs)
    before = index.scores(term)
    index.add(Passage("", " ".join(["filler"] * (sum(lengths) // len(lengths)))))
    after = index.scores(term)[:-1]
    for i in range(len(docs)):
        for j in range(len(docs)):
            # idf rescales every score alike, so only gaps above rounding noise must survive
            if before[i] > before[j] * (1 + 1e-12):
                assert after[i] > after[j]


def test_corpus_from_directory(tmp_path):
    (tmp_path / "b.txt").write_text("second file para\n\nanother para")
    (tmp_path / "a.txt").write_text("first file")
    index = CorpusIndex.from_directory(tmp_path)
    assert [(p.source, p.text) for p in index.passages] == [
        ("a.txt", "first file"), ("b.txt", "second file para"), ("b.txt", "another para")]
    with pytest.raises(FileNotFoundError):
        CorpusIndex.from_directory(tmp_path / "missing")


# -- steps -----------------------------------------------------------------


def _agent(responses, family="lwr", **cfg):
    rec = Recorder(responses)
    return Agent(rec, TrialConfig(family, **cfg)), rec


def test_idea_verbatim_and_empty_corpus():
    agent, rec = _agent(["  An idea, verbatim.  "])
    idea, prompt = generate_idea(agent)
    assert idea == "  An idea, verbatim.  "
    assert NO_PASSAGES in prompt and rec.prompts == [prompt]


def test_idea_uses_retrieved_passages():
    agent, _ = _agent(["idea"])
    agent.index = CorpusIndex([Passage("notes.txt", "LWR speed density relation lwr"), Passage("x", "unrelated")])
    _, prompt = generate_idea(agent)
    assert "(notes.txt) LWR speed density relation" in prompt and "unrelated" not in prompt


def test_refinement_prompt_carries_analysis():
    agent, _ = _agent(["idea 2"])
    prev = IterationRecord(0, "first idea", "below-target", analysis_text=FAILURE_ANALYSIS,
                           analysis_sections=parse_analysis(FAILURE_ANALYSIS))
    _, prompt = generate_idea(agent, [prev])
    assert prev.suggestions in prompt and prev.questions in prompt and "first idea" in prompt


def test_codegen_first_try():
    agent, _ = _agent([fenced(LOGISTIC_CANDIDATE)])
    res = generate_candidate(agent, "idea")
    assert res.attempts == 1 and res.candidate.extra_names == ("k",)


def test_codegen_refinement_contains_error():
    agent, rec = _agent(["```dsl\n(defmodel lwr () (frob 1))\n```", fenced(SQUARED_CANDIDATE)])
    res = generate_candidate(agent, "idea")
    assert res.attempts == 2 and res.candidate.attempts == 2
    assert "unknown operator" in rec.prompts[1] and "frob" in rec.prompts[1]


def test_codegen_validation_error_text_forwarded():
    agent, rec = _agent([fenced("(defmodel lwr () (input speed))\n"), fenced(SQUARED_CANDIDATE)])
    generate_candidate(agent, "idea")
    assert "unresolved input name 'speed'" in rec.prompts[1]


def test_codegen_exhausted():
    agent, _ = _agent(["no code here"] * 3)
    res = generate_candidate(agent, "idea")
    assert res.candidate is None and res.attempts == 3 and "```dsl" in res.errors


def test_parse_analysis_variants():
    assert set(parse_analysis(FAILURE_ANALYSIS)) == {"reasons", "suggestions", "questions"}
    bold = "**Reasons:**\nbecause\n**Suggestions:**\ndo this"
    assert parse_analysis(bold) == {"reasons": "because", "suggestions": "do this"}
    assert parse_analysis("free-form text only") is None
    rec = IterationRecord(0, "i", "below-target", analysis_text="free text")
    assert rec.suggestions == "free text"


def _baseline():
    from trafficlab.evaluation import BUCKET_LABELS, EvalReport

    report = EvalReport("lwr", 0.05, dict(zip(BUCKET_LABELS, [(0.01, 1), (0.05, 1), (0.09, 1)])))
    return {"params": {"v_f": 1.0, "rho_max": 0.9}, "report": report.to_dict()}


def test_analysis_history_sizes():
    records = [IterationRecord(i, f"idea {i}", "below-target") for i in range(5)]
    agent, rec = _agent(["a", "b", "c"])
    analyze(agent, _baseline(), records[:1], success=False)
    analyze(agent, _baseline(), records, success=False)
    analyze(agent, _baseline(), records, success=True)
    count = [p.count("============ Iteration") for p in rec.prompts]
    assert count == [1, 3, 1]
    assert "idea 2" in rec.prompts[1] and "idea 1" not in rec.prompts[1]
    assert "Base model total loss: 0.050" in rec.prompts[0]
    with pytest.raises(ValueError):
        analyze(agent, _baseline(), [], success=True)


def test_trial_config_defaults_and_checks():
    assert TrialConfig("idm").target_improvement_pct == 25.0
    assert TrialConfig("mobil").target_improvement_pct == 50.0
    for kw in (dict(max_iterations=0), dict(target_improvement_pct=0), dict(debug_max_attempts=0)):
        with pytest.raises(ValueError):
            TrialConfig("lwr", **kw)
    with pytest.raises(ValueError):
        TrialConfig("abc")


# -- trials ----------------------------------------------------------------


def test_two_iteration_trial(lwr_trial):
    log, rec = lwr_trial
    assert log.status == "improved-model-found"
    first, second = log.iterations
    assert first.outcome == "below-target" and first.attempts == 2
    assert first.improvement_rate_pct < 0
    assert "square" in first.prompts["code"][1]
    assert second.outcome == "success" and second.improvement_rate_pct >= 50
    assert first.suggestions in second.prompts["idea"]
    assert log.success_factors == second.analysis_text
    assert rec.inner.remaining == 0


def test_trial_event_order(lwr_trial):
    log, _ = lwr_trial
    kinds = [e["event"] for e in log.events()]
    assert kinds == ["config", "baseline", "iteration", "iteration", "status"]


def test_trial_log_roundtrip(lwr_trial, tmp_path):
    log, _ = lwr_trial
    text = log.to_jsonl()
    again = parse_trial_log(text)
    assert again.to_jsonl() == text
    assert again.iterations[1].eval_report().total_loss == log.iterations[1].eval_report().total_loss


def test_trial_deterministic(flow, lwr_trial, tmp_path):
    cfg = TrialConfig("lwr", target_improvement_pct=50, max_iterations=2, ga=FAST_GA)
    path = tmp_path / "t.jsonl"
    with TrialLogWriter(path) as w:
        run_trial(cfg, ReplayBackend(lwr_transcript()), flow, writer=w)
    assert path.read_text() == lwr_trial[0].to_jsonl()
    assert read_trial_log(path).status == "improved-model-found"


def test_trial_exhausted(flow):
    cfg = TrialConfig("lwr", target_improvement_pct=50, max_iterations=1, ga=FAST_GA)
    responses = ["idea", fenced(SQUARED_CANDIDATE), FAILURE_ANALYSIS]
    log = run_trial(cfg, ReplayBackend(responses), flow)
    assert log.status == "exhausted" and len(log.iterations) == 1
    assert log.iterations[0].outcome == "below-target" and log.success_factors is None


def test_repeated_codegen_failures_terminate(flow):
    cfg = TrialConfig("lwr", max_iterations=3, debug_max_attempts=2, ga=FAST_GA)
    responses = ["idea", "nothing", "nothing"] * 3
    rec = Recorder(responses)
    log = run_trial(cfg, rec, flow)
    assert log.status == "exhausted"
    assert [r.outcome for r in log.iterations] == ["codegen-failed"] * 3
    # the synthetic analysis of a failed iteration feeds the next idea prompt
    assert log.iterations[0].suggestions in log.iterations[1].prompts["idea"]
    assert rec.inner.remaining == 0


def test_backend_failure_leaves_partial_log(flow, tmp_path):
    cfg = TrialConfig("lwr", max_iterations=2, ga=FAST_GA)
    path = tmp_path / "partial.jsonl"
    with pytest.raises(ReplayExhaustedError):
        with TrialLogWriter(path) as w:
            run_trial(cfg, ReplayBackend(["idea"]), flow, writer=w)
    kinds = [json.loads(line)["event"] for line in path.read_text().splitlines()]
    assert kinds == ["config", "baseline"]
    assert read_trial_log(path).status is None


def test_success_rate_invariant(lwr_trial):
    log, _ = lwr_trial
    target = log.config["target_improvement_pct"]
    *earlier, last = log.iterations
    assert last.improvement_rate_pct >= target
    assert all(r.improvement_rate_pct is None or r.improvement_rate_pct < target for r in earlier)


def test_best_iteration(lwr_trial):
    assert loop.best_iteration(lwr_trial[0]).index == 1


@pytest.mark.parametrize(
    "text,match",
    [("", "empty"), ("{not json\n", "line 1"), ('{"event": "iteration"}\n', "line 1"),
     ('{"event": "config", "config": {}}\n{"event": "weird"}\n', "line 2")],
)
def test_parse_trial_log_errors(text, match):
    with pytest.raises(TrialLogError, match=match):
        parse_trial_log(text)


def test_analysis_prompt_not_mutating_records():
    rec = IterationRecord(0, "i", "below-target")
    snapshot = dataclasses.asdict(rec)
    agent, _ = _agent(["x"])
    analyze(agent, _baseline(), [rec], success=False)
    assert dataclasses.asdict(rec) == snapshot


def test_response_type():
    assert ChatResponse("x").content == "x"
