"""Synthetic datasets and scripted transcripts shared by several tests."""

import json
from pathlib import Path

import numpy as np

from trafficlab import kernels
from trafficlab.datasets import (
    CarFollowEvent,
    FlowSample,
    write_carfollow_events,
    write_flow_samples,
)
from trafficlab.models import lwr_improved_speed

LOGISTIC_TRUTH = (1.0, 0.8, 6.0)
IDM_TRUTH = np.array([25.0, 1.4, 1.2, 1.8, 4.0, 2.5])

SQUARED_CANDIDATE = """\
(defmodel lwr ()
  (mul (param v_f) (sub 1 (pow (div (input density) (param rho_max)) 2))))
"""

LOGISTIC_CANDIDATE = """\
(defmodel lwr (extra-params (k 0.1 10))
  (mul (param v_f)
       (sub 1 (sigmoid (mul (param k)
                            (sub (clip (input density) 0 (param rho_max))
                                 (div (param rho_max) 2)))))))
"""

# The first code reply uses an operator that does not exist.
BROKEN_CANDIDATE = """\
(defmodel lwr ()
  (mul (param v_f) (sub 1 (square (div (input density) (param rho_max))))))
"""


def logistic_flow(n=1500, seed=7, sigma=0.01):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.0, 1.0, n)
    v = np.clip(lwr_improved_speed(LOGISTIC_TRUTH, rho) + rng.normal(0.0, sigma, n), 0.0, None)
    return [FlowSample(float(a), float(b)) for a, b in zip(rho, v)]


def idm_events(m=50, seed=1, params=IDM_TRUTH):
    """Events whose follower obeys baseline IDM behind a wavy leader."""
    rng = np.random.default_rng(seed)
    events = []
    for i in range(m):
        n = int(rng.integers(150, 300))
        t = np.arange(n) * 0.1
        lv = 12 + rng.uniform(2, 6) * np.sin(2 * np.pi * t / rng.uniform(8, 25) + rng.uniform(0, 6))
        lv = np.clip(lv + rng.normal(0, 0.05, n).cumsum() * 0.2, 0, None)
        v0 = lv[0] + rng.uniform(-2, 2)
        s0 = params[5] + v0 * params[1] + rng.uniform(-3, 8)
        s, v, _, _ = kernels.simulate_batch_numpy(0, params, np.array([s0]), np.array([v0]), lv[None], np.array([n]), 0.1)
        events.append(CarFollowEvent(f"ev{i:03d}", s[0], v[0], lv))
    return events


def fenced(dsl: str) -> str:
    return f"Here is the candidate.\n\n```dsl\n{dsl}```\n"


FAILURE_ANALYSIS = """\
## Reasons
Squaring the density ratio makes speed fall too steeply once density passes the middle range.

## Suggestions
Replace the polynomial drop with a bounded logistic drop centred at half the jam density, with a steepness constant k.

## New questions
How steep should the transition be for the observed high-density speeds?
"""

SUCCESS_ANALYSIS = """\
## Reasons
The logistic drop matches the plateau at low density and the floor at high density, so errors shrink in every bucket.
"""


def lwr_transcript():
    return [
        "Idea: add a squared density term so speed falls faster in dense traffic.",
        fenced(BROKEN_CANDIDATE),
        fenced(SQUARED_CANDIDATE),
        FAILURE_ANALYSIS,
        "Idea: use a logistic speed drop centred at half the jam density.",
        fenced(LOGISTIC_CANDIDATE),
        SUCCESS_ANALYSIS,
    ]


def write_transcript(path, responses):
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in responses:
            fh.write(json.dumps({"response": r}) + "\n")


def lwr_trial_workspace(root: Path, ga_generations=200):
    """Write flow data, transcript and config; return the config path."""
    root.mkdir(parents=True, exist_ok=True)
    write_flow_samples(logistic_flow(), root / "flow.csv")
    write_transcript(root / "transcript.jsonl", lwr_transcript())
    (root / "config.yaml").write_text(
        "family: lwr\n"
        "data: flow.csv\n"
        "split: {calib_fraction: 0.2, seed: 0}\n"
        f"ga: {{generations: {ga_generations}, seed: 0}}\n"
        "trial: {target_improvement_pct: 50, max_iterations: 2, debug_max_attempts: 3}\n",
        encoding="utf-8",
    )
    return root / "config.yaml"


def write_idm_events(path, events):
    write_carfollow_events(events, path)
