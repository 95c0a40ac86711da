"""Model-improvement agent: prompts, retrieval and the trial loop."""

from trafficlab.agent.loop import (
    IterationRecord,
    TrialConfig,
    TrialLog,
    read_trial_log,
    run_trial,
)
from trafficlab.agent.prompts import PromptTemplate, load_templates, render_prompt
from trafficlab.agent.retrieval import CorpusIndex, retrieve_passages

__all__ = [
    "CorpusIndex",
    "IterationRecord",
    "PromptTemplate",
    "TrialConfig",
    "TrialLog",
    "load_templates",
    "read_trial_log",
    "render_prompt",
    "retrieve_passages",
    "run_trial",
]
