"""Seeded genetic-algorithm calibration over bounded parameter boxes."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from trafficlab import evaluation, models
from trafficlab.datasets import StateThresholds
from trafficlab.dsl.interp import validate_candidate
from trafficlab.dsl.syntax import CandidateModel
from trafficlab.errors import CandidateRuntimeError, CandidateValidationError, ConfigurationError, SimulationError


@dataclass(frozen=True)
class ParamBounds:
    """Ordered box ``[(name, lower, upper), ...]``."""

    names: tuple
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if not (len(self.names) == lo.size == hi.size) or lo.size == 0:
            raise ConfigurationError("bounds need one (name, lower, upper) entry per gene")
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError(f"duplicate gene names in bounds: {self.names}")
        bad = [n for n, a, b in zip(self.names, lo, hi) if not (np.isfinite(a) and np.isfinite(b) and a < b)]
        if bad:
            raise ConfigurationError(f"bounds must satisfy finite lower < upper for: {', '.join(bad)}")

    @classmethod
    def from_triples(cls, triples: Sequence) -> "ParamBounds":
        triples = list(triples)
        return cls(tuple(t[0] for t in triples), [t[1] for t in triples], [t[2] for t in triples])

    def triples(self) -> list:
        return [(n, float(a), float(b)) for n, a, b in zip(self.names, self.lower, self.upper)]

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    generations: int = 200
    tournament_size: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_sigma_fraction: float = 0.1
    elite_count: int = 2
    seed: int = 0
    restarts: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigurationError("population_size must be at least 2")
        if self.generations < 0:
            raise ConfigurationError("generations must be non-negative")
        if self.tournament_size < 1:
            raise ConfigurationError("tournament_size must be at least 1")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if not self.mutation_sigma_fraction >= 0:
            raise ConfigurationError("mutation_sigma_fraction must be non-negative")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigurationError("elite_count must satisfy 0 <= elite_count < population_size")
        if self.restarts < 1:
            raise ConfigurationError("restarts must be at least 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "GaConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown GA setting(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class CalibrationResult:
    names: tuple
    best_params: np.ndarray
    best_loss: float
    curve: list  # best-so-far loss per generation, generation 0 first
    evaluations: int = 0

    def params_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.best_params)}


def _fitness(values) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    return np.where(np.isfinite(out), out, np.inf)


def ga_minimize(objective: Callable, bounds: ParamBounds, cfg: GaConfig = GaConfig(),
                on_generation: Callable | None = None) -> CalibrationResult:
    """Minimize ``objective(x)`` over ``bounds``.

    With ``cfg.restarts > 1`` the GA is run that many times from independent
    seed streams spawned from ``cfg.seed`` and the best run is returned; its
    curve is the concatenation of the runs' best-so-far curves, so it stays
    non-increasing and has ``restarts * (generations + 1)`` entries.

    All random draws come from one ``numpy.random.Generator`` in a fixed
    order; objective calls may run on a thread pool (``cfg.workers``) but
    results are consumed in population order, so the outcome does not depend
    on scheduling.  ``on_generation(gen, best_loss)`` is called after every
    generation including generation 0.
    """
    if cfg.restarts > 1:
        return _ga_restarts(objective, bounds, cfg, on_generation)
    return _ga_run(objective, bounds, cfg, np.random.default_rng(cfg.seed), on_generation)


def _ga_restarts(objective, bounds, cfg, on_generation):
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    curve = []
    evaluations = 0
    for k, ss in enumerate(streams):
        def hook(gen, loss, _k=k):
            if on_generation:
                on_generation(_k * (cfg.generations + 1) + gen, min(loss, curve[-1]) if curve else loss)

        run = _ga_run(objective, bounds, cfg, np.random.default_rng(ss), hook)
        evaluations += run.evaluations
        floor = curve[-1] if curve else math.inf
        curve.extend(min(floor, v) for v in run.curve)
        if best is None or run.best_loss < best.best_loss:
            best = run
    return CalibrationResult(bounds.names, best.best_params, best.best_loss, curve, evaluations)


def _ga_run(objective, bounds, cfg, rng, on_generation):
    lo, hi, width = bounds.lower, bounds.upper, bounds.width
    p_size, dim = cfg.population_size, bounds.dim
    n_child = p_size - cfg.elite_count
    sigma = cfg.mutation_sigma_fraction * width
    evaluations = 0

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def score(pop):
        nonlocal evaluations
        evaluations += len(pop)
        rows = [row.copy() for row in pop]
        values = list(pool.map(objective, rows)) if pool else [objective(r) for r in rows]
        return _fitness([float(v) if np.ndim(v) == 0 else float(np.asarray(v).ravel()[0]) for v in values])

    try:
        pop = lo + rng.random((p_size, dim)) * width
        fit = score(pop)
        i_best = int(np.argmin(fit))
        best_x, best_f = pop[i_best].copy(), float(fit[i_best])
        curve = [best_f]
        if on_generation:
            on_generation(0, best_f)
        n_pairs = (n_child + 1) // 2
        for gen in range(1, cfg.generations + 1):
            elite_idx = np.argsort(fit, kind="stable")[: cfg.elite_count]

            contenders = rng.integers(0, p_size, size=(2 * n_pairs, cfg.tournament_size))
            winners = contenders[np.arange(2 * n_pairs), np.argmin(fit[contenders], axis=1)]
            p1, p2 = pop[winners[0::2]], pop[winners[1::2]]

            # Blend crossover: each child gene uniform on the parents' span widened by half the gap.
            do_cx = rng.random(n_pairs) < cfg.crossover_rate
            gap = np.abs(p1 - p2)
            c_lo = np.minimum(p1, p2) - 0.5 * gap
            c_span = gap * 2.0
            u1 = rng.random((n_pairs, dim))
            u2 = rng.random((n_pairs, dim))
            kids = np.empty((2 * n_pairs, dim))
            kids[0::2] = np.where(do_cx[:, None], c_lo + u1 * c_span, p1)
            kids[1::2] = np.where(do_cx[:, None], c_lo + u2 * c_span, p2)
            kids = np.clip(kids[:n_child], lo, hi)

            mutate = rng.random(kids.shape) < cfg.mutation_rate
            noise = rng.standard_normal(kids.shape) * sigma
            kids = np.clip(np.where(mutate, kids + noise, kids), lo, hi)

            kid_fit = score(kids)
            pop = np.vstack([pop[elite_idx], kids])
            fit = np.concatenate([fit[elite_idx], kid_fit])
            i_best = int(np.argmin(fit))
            if fit[i_best] < best_f:
                best_x, best_f = pop[i_best].copy(), float(fit[i_best])
            curve.append(best_f)
            if on_generation:
                on_generation(gen, best_f)
    finally:
        if pool:
            pool.shutdown()
    return CalibrationResult(bounds.names, best_x, best_f, curve, evaluations)


# --------------------------------------------------------------------------
# Model calibration
# --------------------------------------------------------------------------


def canonical_names(family: str, model) -> tuple:
    if isinstance(model, CandidateModel):
        from trafficlab.dsl.signatures import get_signature

        return get_signature(family).param_names + model.extra_names
    return tuple(model.param_names)


def default_bounds(family: str, model, overrides: dict | None = None) -> ParamBounds:
    """Family default box for ``model``'s genes; candidate extras use their declared box.

    ``overrides`` maps gene name to ``(lower, upper)`` and wins over both.
    """
    overrides = dict(overrides or {})
    table = dict(models.DEFAULT_BOUNDS[family])
    if isinstance(model, CandidateModel):
        for p in model.extra_params:
            table[p.name] = (p.lower, p.upper)
    names = canonical_names(family, model)
    unknown = sorted(set(overrides) - set(names))
    if unknown:
        raise ConfigurationError(f"bounds given for unknown parameter(s): {', '.join(unknown)}")
    triples = []
    for name in names:
        lo, hi = overrides.get(name, table.get(name, (None, None)))
        if lo is None:
            raise ConfigurationError(f"no bounds for parameter {name!r}")
        triples.append((name, float(lo), float(hi)))
    return ParamBounds.from_triples(triples)


def _data_size(family, data) -> int:
    if isinstance(data, tuple):
        return len(data[-1])
    return len(data)


def make_objective(family: str, model, data, thresholds: StateThresholds = StateThresholds()) -> Callable:
    """Scalar loss of ``model`` on ``data`` as a function of the gene vector."""
    if family == "idm":
        data = evaluation.pack_events(data, thresholds) if not isinstance(data, evaluation.EventBatch) else data
    elif family == "mobil" and not isinstance(data, tuple):
        from trafficlab.datasets import lanechange_matrix

        data = lanechange_matrix(data)
    elif family == "lwr" and not isinstance(data, tuple):
        from trafficlab.datasets import flow_arrays

        data = flow_arrays(data)
    if isinstance(model, CandidateModel):
        from trafficlab.dsl.interp import compile_candidate

        model = compile_candidate(model)

    def objective(x):
        try:
            return evaluation.evaluate(family, model, x, data, thresholds).total_loss
        except (SimulationError, CandidateRuntimeError, FloatingPointError, ZeroDivisionError):
            return math.inf

    return objective


def calibrate_model(family: str, model, data, bounds: ParamBounds | None = None, cfg: GaConfig = GaConfig(),
                    thresholds: StateThresholds = StateThresholds(),
                    on_generation: Callable | None = None) -> CalibrationResult:
    """Fit ``model`` (a registry variant or a candidate) on the calibration split."""
    if _data_size(family, data) == 0:
        raise ValueError("calibration data is empty")
    if isinstance(model, CandidateModel):
        if model.family != family:
            raise ConfigurationError(f"candidate family {model.family!r} does not match {family!r}")
        diags = validate_candidate(model)
        if not diags.ok:
            raise CandidateValidationError("candidate failed validation:\n" + diags.text(), diags)
    if bounds is None:
        bounds = default_bounds(family, model)
    expected = canonical_names(family, model)
    if bounds.names != expected:
        raise ConfigurationError(f"bounds genes {bounds.names} do not match model parameters {expected}")
    objective = make_objective(family, model, data, thresholds)
    return ga_minimize(objective, bounds, cfg, on_generation)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def write_curve_csv(result: CalibrationResult, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_loss"])
        for gen, loss in enumerate(result.curve):
            w.writerow([gen, repr(float(loss))])


def read_curve_csv(path) -> list:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["best_loss"]) for r in rows]


def params_document(result: CalibrationResult, **meta) -> dict:
    doc = {
        "param_names": list(result.names),
        "params": result.params_dict(),
        "best_loss": result.best_loss,
        "generations": len(result.curve) - 1,
        "evaluations": result.evaluations,
    }
    doc.update(meta)
    return doc


def write_params_json(result: CalibrationResult, path, **meta) -> None:
    text = json.dumps(params_document(result, **meta), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_params_json(path) -> tuple:
    """Return ``(names, vector)`` from a params document or a bare name->value mapping."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, list):
        return None, np.asarray(doc, dtype=float)
    if "params" in doc:
        names = doc.get("param_names") or list(doc["params"])
        return tuple(names), np.array([float(doc["params"][n]) for n in names])
    return tuple(doc), np.array([float(v) for v in doc.values()])
