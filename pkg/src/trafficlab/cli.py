"""Command-line entry point.

Exit codes: 0 success, 1 runtime or data error, 2 usage error,
3 trial finished without reaching the improvement target.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from trafficlab import calibration, evaluation, models
from trafficlab.agent.loop import TrialLogWriter, read_trial_log, run_trial
from trafficlab.agent.prompts import load_templates
from trafficlab.agent.retrieval import CorpusIndex
from trafficlab.config import RunConfig, load_config
from trafficlab.datasets import load_carfollow_events, load_flow_samples, load_lanechange_samples, split_events
from trafficlab.dsl.interp import compile_candidate, validate_candidate
from trafficlab.dsl.syntax import parse_candidate
from trafficlab.errors import TrafficlabError
from trafficlab.llm import BackendError, make_backend
from trafficlab.report import render_trial

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_REACHED = 0, 1, 2, 3

LOADERS = {"idm": load_carfollow_events, "mobil": load_lanechange_samples, "lwr": load_flow_samples}


def load_dataset(family: str, path):
    return LOADERS[family](path)


def _config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _data_path(args, cfg: RunConfig):
    path = getattr(args, "data", None) or cfg.data
    if path is None:
        raise TrafficlabError("no data file given (use --data or set 'data' in the config)")
    return path


def _family(args, cfg: RunConfig, parser) -> str:
    family = args.family or cfg.family
    if family is None:
        parser.error("--family is required (or set 'family' in the config)")
    return family


def _variant(parser, family, name):
    try:
        return models.get_variant(family, name)
    except LookupError as exc:
        parser.error(str(exc))


def _ordered(names, vals, wanted):
    if names is None:
        if len(vals) != len(wanted):
            raise TrafficlabError(f"params vector has {len(vals)} entries, model expects {len(wanted)}")
        return vals
    table = dict(zip(names, vals))
    missing = [n for n in wanted if n not in table]
    if missing:
        raise TrafficlabError(f"params file lacks value(s) for: {', '.join(missing)}")
    return np.array([table[n] for n in wanted])


def cmd_calibrate(args, parser) -> int:
    cfg = _config(args)
    family = _family(args, cfg, parser)
    variant = _variant(parser, family, args.variant)
    data = load_dataset(family, _data_path(args, cfg))
    cal, _ = split_events(data, cfg.calib_fraction, cfg.split_seed)
    ga = dataclasses.replace(cfg.ga, seed=args.seed) if args.seed is not None else cfg.ga
    bounds = calibration.default_bounds(family, variant, cfg.bounds)
    result = calibration.calibrate_model(family, variant, cal, bounds, ga, cfg.thresholds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    calibration.write_params_json(result, out, family=family, variant=variant.name, seed=ga.seed)
    curve = out.with_suffix(".curve.csv")
    calibration.write_curve_csv(result, curve)
    print(f"Best calibration loss: {result.best_loss:.6f}")
    print(f"Wrote {out} and {curve}")
    return EXIT_OK


def cmd_evaluate(args, parser) -> int:
    cfg = _config(args)
    family = _family(args, cfg, parser)
    if args.candidate:
        cand = parse_candidate(Path(args.candidate).read_text(encoding="utf-8"))
        if cand.family != family:
            raise TrafficlabError(f"candidate is for family {cand.family!r}, not {family!r}")
        diags = validate_candidate(cand)
        if not diags.ok:
            print("Candidate failed validation:", file=sys.stderr)
            print(diags.text(), file=sys.stderr)
            return EXIT_ERROR
        model = compile_candidate(cand)
        wanted = model.param_names
    else:
        model = _variant(parser, family, args.variant or "baseline")
        wanted = model.param_names
    params_path = Path(args.params)
    if not params_path.is_file():
        raise TrafficlabError(f"params file not found: {params_path}")
    names, vals = calibration.read_params_json(params_path)
    params = _ordered(names, vals, wanted)
    data = load_dataset(family, _data_path(args, cfg))
    report = evaluation.evaluate(family, model, params, data, cfg.thresholds)
    print(report.render_text("Model"))
    out = Path(args.out) if args.out else params_path.with_suffix(".report.json")
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_improve(args, parser) -> int:
    cfg = load_config(args.config)
    family = _family(args, cfg, parser)
    trial_cfg = cfg.trial_config(family)
    data = load_dataset(family, _data_path(args, cfg))
    backend = make_backend(args.backend, cfg.backend.get("endpoint"))
    index = CorpusIndex.from_directory(cfg.corpus_dir) if cfg.corpus_dir else CorpusIndex()
    templates = load_templates(cfg.prompts_dir)
    with TrialLogWriter(args.out) as writer:
        log = run_trial(trial_cfg, backend, data, index=index, templates=templates, writer=writer)
    last = log.iterations[-1] if log.iterations else None
    rate = f"{last.improvement_rate_pct:.2f}" if last and last.improvement_rate_pct is not None else "n/a"
    print(f"Trial status: {log.status} after {len(log.iterations)} iteration(s); last improvement rate: {rate}")
    return EXIT_OK if log.status == "improved-model-found" else EXIT_NOT_REACHED


def cmd_report(args, parser) -> int:
    log = read_trial_log(args.trial)
    sys.stdout.write(render_trial(log))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    fam = dict(choices=models.FAMILIES, help="model family")

    c = sub.add_parser("calibrate", help="fit a model variant with the genetic algorithm")
    c.add_argument("--family", **fam)
    c.add_argument("--variant", default="baseline")
    c.add_argument("--data")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True, help="params JSON path; the curve CSV is written alongside")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="evaluate a variant or candidate with given params")
    e.add_argument("--family", **fam)
    g = e.add_mutually_exclusive_group()
    g.add_argument("--variant")
    g.add_argument("--candidate", help="file holding a defmodel form")
    e.add_argument("--params", required=True)
    e.add_argument("--data")
    e.add_argument("--config")
    e.add_argument("--out", help="report JSON path (default: next to the params file)")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("improve", help="run an improvement trial")
    i.add_argument("--family", **fam)
    i.add_argument("--config", required=True)
    i.add_argument("--data")
    i.add_argument("--backend", required=True, help="live | replay:<transcript.jsonl>")
    i.add_argument("--out", required=True, help="trial JSONL path")
    i.set_defaults(func=cmd_improve)

    r = sub.add_parser("report", help="render a trial log")
    r.add_argument("--trial", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args, sub)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (TrafficlabError, BackendError, OSError, ValueError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
