"""Run configuration, read from a single YAML document.

Layout (every section optional except ``family``)::

    family: lwr
    data: flow.csv                 # relative paths resolve against this file
    split: {calib_fraction: 0.2, seed: 0}
    thresholds: {free_headway_s: 3.0, closing_dv_mps: 0.5, emergency_ttc_s: 3.0, speed_floor_mps: 1.0}
    ga: {population_size: 100, generations: 200, seed: 0, restarts: 1}
    bounds: {v_f: [0.01, 1.5]}
    trial: {target_improvement_pct: 50, max_iterations: 10, debug_max_attempts: 3, retrieval_k: 3}
    backend: {endpoint: "https://host/v1/chat/completions", model: gpt-4-turbo,
              idea_temperature: 0.7, code_temperature: 0.2, max_tokens: 2048,
              max_attempts: 3, base_delay_s: 1.0}
    prompts_dir: prompts/          # overrides for any of the shipped templates
    corpus_dir: corpus/            # plain-text notes for retrieval
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from trafficlab.agent.loop import TrialConfig
from trafficlab.calibration import GaConfig
from trafficlab.datasets import StateThresholds
from trafficlab.errors import ConfigurationError
from trafficlab.llm import RetryPolicy
from trafficlab.models import FAMILIES

_SECTIONS = {"family", "data", "split", "thresholds", "ga", "bounds", "trial", "backend", "prompts_dir", "corpus_dir"}
_TRIAL_KEYS = {"target_improvement_pct", "max_iterations", "debug_max_attempts", "retrieval_k"}
_BACKEND_KEYS = {"endpoint", "model", "idea_temperature", "code_temperature", "max_tokens", "max_attempts",
                 "base_delay_s"}


@dataclass
class RunConfig:
    family: str | None = None
    data: Path | None = None
    calib_fraction: float = 0.2
    split_seed: int = 0
    thresholds: StateThresholds = field(default_factory=StateThresholds)
    ga: GaConfig = field(default_factory=GaConfig)
    bounds: dict = field(default_factory=dict)
    trial: dict = field(default_factory=dict)
    backend: dict = field(default_factory=dict)
    prompts_dir: Path | None = None
    corpus_dir: Path | None = None

    def trial_config(self, family: str | None = None) -> TrialConfig:
        fam = family or self.family
        b = self.backend
        retry = RetryPolicy(int(b.get("max_attempts", 3)), float(b.get("base_delay_s", 1.0)))
        kwargs = dict(self.trial)
        return TrialConfig(
            fam,
            calib_fraction=self.calib_fraction,
            split_seed=self.split_seed,
            ga=self.ga,
            bounds=dict(self.bounds),
            thresholds=self.thresholds,
            model_id=str(b.get("model", "gpt-4-turbo")),
            idea_temperature=float(b.get("idea_temperature", 0.7)),
            code_temperature=float(b.get("code_temperature", 0.2)),
            max_tokens=int(b.get("max_tokens", 2048)),
            retry=retry,
            **kwargs,
        )


def _section(doc, name, allowed=None) -> dict:
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section {name!r} must be a mapping")
    if allowed is not None:
        unknown = sorted(set(value) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    return value


def _path(base: Path, value, what: str, kind: str) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise ConfigurationError(f"{what} not found: {p}")
    return p


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a mapping at top level")
    unknown = sorted(set(doc) - _SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(unknown)}")
    base = Path(base_dir)
    family = doc.get("family")
    if family is not None and family not in FAMILIES:
        raise ConfigurationError(f"unknown family {family!r}; available: {', '.join(FAMILIES)}")
    split = _section(doc, "split", {"calib_fraction", "seed"})
    try:
        thresholds = StateThresholds(**_section(doc, "thresholds"))
    except TypeError as exc:
        raise ConfigurationError(f"thresholds: {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    bounds = {}
    for name, pair in _section(doc, "bounds").items():
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigurationError(f"bounds.{name} must be [lower, upper]")
        lo, hi = float(pair[0]), float(pair[1])
        if not lo < hi:
            raise ConfigurationError(f"bounds.{name} must satisfy lower < upper")
        bounds[name] = (lo, hi)
    fraction = float(split.get("calib_fraction", 0.2))
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError("split.calib_fraction must lie in (0, 1)")
    return RunConfig(
        family=family,
        data=_path(base, doc.get("data"), "data file", "file"),
        calib_fraction=fraction,
        split_seed=int(split.get("seed", 0)),
        thresholds=thresholds,
        ga=GaConfig.from_dict(_section(doc, "ga")),
        bounds=bounds,
        trial=_section(doc, "trial", _TRIAL_KEYS),
        backend=_section(doc, "backend", _BACKEND_KEYS),
        prompts_dir=_path(base, doc.get("prompts_dir"), "prompts directory", "dir"),
        corpus_dir=_path(base, doc.get("corpus_dir"), "corpus directory", "dir"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(doc, path.parent)
