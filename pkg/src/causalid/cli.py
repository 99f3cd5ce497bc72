"""Command line entry point ``causalid``.

Exit codes: 0 success, 1 nothing to construct, 2 configuration error,
3 estimator precondition failure, 4 estimand not identified (a certified
counterexample is written when ``--out`` is given).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import io
from .core import ate, censor, sample_censored
from .exceptions import ConfigError, PreconditionError
from .harness import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PRECONDITION,
    ExperimentConfig,
    resolve_instance,
    run_counterexample,
    run_estimator,
    run_experiment,
    run_identify,
)
from .instances import INSTANCES


def _emit(obj) -> None:
    print(json.dumps(io.round12(obj), indent=2, allow_nan=False))


def _cmd_check_identify(args) -> int:
    code, report = run_identify({"classes": args.classes, "estimand": args.estimand, "output_dir": args.out})
    _emit(report)
    return code


def _cmd_build_counterexample(args) -> int:
    cfg = {"classes": args.classes, "kind": args.kind, "output_dir": args.out}
    if args.c is not None:
        cfg["c"] = args.c
    code, report = run_counterexample(cfg)
    _emit(report)
    return code


def _estimation_inputs(args):
    """Class pair, treated set, censored samples and (if simulated) the truth."""
    if args.instance is not None:
        inst = resolve_instance(ExperimentConfig(instance=args.instance, scenario=args.scenario))
        pair, treated, c, eps = inst.pair, inst.params.get("treated"), inst.c, inst.eps
        study = inst.study
    else:
        if args.classes is None:
            raise ConfigError("estimate needs --classes or --instance")
        spec = io.load_json(args.classes)
        pair = io.pair_from_dict(spec)
        mask = io.treated_set_from_spec(spec, pair.grid)
        treated = None if mask is None else mask.tolist()
        c, eps = pair.p_class.c, 0.1
        study = io.load_study(args.simulate) if args.simulate else None
    c = args.c if args.c is not None else c
    eps = args.eps if args.eps is not None else eps
    if args.samples:
        samples = io.load_samples(args.samples, pair.grid)
        truth = None
    else:
        if study is None:
            raise ConfigError("estimate needs --samples, --simulate or --instance")
        if study.grid != pair.grid:
            raise ConfigError("study and classes use different grids")
        samples = sample_censored(censor(study), args.n, args.seed)
        truth = ate(study)
    return pair, treated, c, eps, samples, truth


def _cmd_estimate(args) -> int:
    pair, treated, c, eps, samples, truth = _estimation_inputs(args)
    try:
        rep = run_estimator(args.scenario, samples, pair, c, eps, args.eta, treated)
    except PreconditionError as exc:
        print(f"estimator precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    if truth is not None:
        rep = rep.with_truth(truth, args.seed)
    _emit(io.report_to_dict(rep))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    study = io.load_study(args.study)
    samples = sample_censored(censor(study), args.n, args.seed)
    io.save_samples(samples, args.out)
    _emit({"samples": args.out, "n": args.n, "seed": args.seed, "ate": ate(study)})
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    summary = run_experiment(cfg)
    _emit(summary.summary_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-identify", help="decide identifiability for a class-spec file")
    p.add_argument("--classes", required=True)
    p.add_argument("--estimand", choices=["ate", "att", "hte"], default="ate")
    p.add_argument("--out", help="directory for the counterexample files")
    p.set_defaults(func=_cmd_check_identify)

    p = sub.add_parser("build-counterexample", help="write a certified pair of indistinguishable studies")
    p.add_argument("--classes", required=True)
    p.add_argument("--kind", choices=["condition1", "condition3", "overlap_zero"], default="condition1")
    p.add_argument("--c", type=float)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_build_counterexample)

    p = sub.add_parser("estimate", help="estimate the ATE from censored samples")
    p.add_argument("--scenario", choices=["1", "2", "3", "rd"], required=True)
    p.add_argument("--classes")
    p.add_argument("--instance", choices=sorted(INSTANCES))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--samples", help="CSV with columns x0..,t,y")
    src.add_argument("--simulate", help="study JSON to draw samples from")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--eta", type=float)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("simulate", help="draw censored samples from a study")
    p.add_argument("--study", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run a Monte Carlo experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
