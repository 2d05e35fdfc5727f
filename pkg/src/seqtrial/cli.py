"""Command-line interface: ``seqtrial <subcommand> ...``.

Exit codes: 0 success, 2 input or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import design as gsd
from .estimators import ESTIMATORS, TwoStageOutcome, estimate_all
from .exceptions import (
    AccuracyError,
    BracketError,
    ConvergenceError,
    DegenerateVarianceError,
    InsufficientConditioningError,
    UnsupportedDesignError,
    ValidationError,
)
from .simulation import BootstrapModel, emit_report, parse_theta_grid, run_bootstrap, run_performance_sweep
from .trial_data import BinaryTwoArmData, load_data
from .validation import check_estimation_design

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
_NUMERIC_ERRORS = (AccuracyError, BracketError, ConvergenceError, InsufficientConditioningError)
_INPUT_ERRORS = (ValidationError, UnsupportedDesignError, DegenerateVarianceError,
                 ValueError, OSError, KeyError)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False)


def _outcome(args) -> TwoStageOutcome:
    design = gsd.load_design(args.design)
    check_estimation_design(design)
    data = load_data(args.data)
    if isinstance(data, BinaryTwoArmData):
        return TwoStageOutcome.from_data(data, design)
    return TwoStageOutcome.from_summaries(data, design)


def cmd_analyze(args) -> int:
    outcome = _outcome(args)
    result = estimate_all(outcome, primary=args.primary)
    naive = [k for k, v in result.entries.items() if v.naive]
    result.notes.append("naive (stopping rule ignored): " + ", ".join(naive))
    if args.format == "json":
        doc = result.to_dict()
        doc["inputs"] = {
            "info": list(outcome.design.info),
            "efficacy_boundary_z": outcome.e,
            "efficacy_boundary_estimate_scale": outcome.boundary_estimate_scale,
            "theta_hat_stage1": outcome.theta_hat_stage1,
            "theta_hat_overall": outcome.theta_obs,
            "wald_z_final": outcome.wald_z_final,
        }
        print(_dump(doc))
    else:
        print(f"Stopped at stage {outcome.stopped_stage}; I1 = {outcome.info1:.2f}, "
              f"I2 = {outcome.info2:.2f}, efficacy boundary z = {outcome.e:.3f} "
              f"({outcome.boundary_estimate_scale:.4f} on the estimate scale)")
        print(f"Primary adjusted estimator: {args.primary}")
        print()
        print(result.to_table())
    return EXIT_NUMERIC if result.failed else EXIT_OK


def cmd_boundaries(args) -> int:
    if args.family == "obf":
        d = gsd.obf_boundaries(args.looks, args.alpha, args.sided)
    else:
        d = gsd.haybittle_peto_boundaries(args.looks, args.interim_z, args.alpha, args.sided,
                                          calibrate=not args.no_calibrate)
    if args.info:
        d = d.with_info([float(v) for v in args.info.split(",")])
    print(_dump(d.to_dict()))
    return EXIT_OK


def cmd_stopprob(args) -> int:
    design = gsd.load_design(args.design)
    if args.method == "mc":
        if args.seed is None:
            return _usage(args, "--method mc requires --seed")
        profile = gsd.stopping_probabilities_mc(design, args.theta, args.reps, args.seed,
                                                threads=args.threads)
    else:
        profile = gsd.stopping_probabilities_recursive(design, args.theta)
    doc = profile.to_dict()
    doc["theta"] = args.theta
    print(_dump(doc))
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    design = gsd.load_design(args.design)
    data = load_data(args.data)
    if not isinstance(data, BinaryTwoArmData):
        raise ValidationError(["bootstrap needs count data, not summaries"])
    outcome = TwoStageOutcome.from_data(data, design)
    model = BootstrapModel.from_data(data, outcome.design, args.true_diff, args.control_rate,
                                     args.reps, args.seed)
    res = run_bootstrap(model, threads=args.threads, path=args.model)
    if args.format == "json":
        doc = {"model": model.to_dict(), "path": args.model, **res.to_dict()}
        print(_dump(doc))
    else:
        print(f"Parametric bootstrap ({args.model} model), {res.replicates_used} replicates "
              f"used, {res.replicates_dropped} dropped; P(stop at stage 1) = "
              f"{res.prob_stop_stage1:.4f}")
        print(f"{'Estimator':<22}{'SE (all)':>10}{'SE (T=2)':>10}")
        for name in ESTIMATORS:
            u, c = res.se_unconditional[name], res.se_conditional_T2[name]
            print(f"{name:<22}{'-' if u is None else f'{u:.4f}':>10}{c:>10.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    design = gsd.load_design(args.design)
    estimators = list(ESTIMATORS) if args.estimators is None else \
        [s for s in args.estimators.split(",") if s]
    kwargs = {}
    if args.model == "binomial":
        if args.data is None:
            return _usage(args, "--model binomial requires --data for sample sizes")
        data = load_data(args.data)
        final = data.stages[-1]
        kwargs = dict(
            control_rate=args.control_rate if args.control_rate is not None
            else final.control_responders / final.control_total,
            stage_sample_sizes=tuple((s.control_total, s.experimental_total) for s in data.stages),
        )
        design = TwoStageOutcome.from_data(data, design).design
    report = run_performance_sweep(design, parse_theta_grid(args.theta_grid), args.reps,
                                   args.seed, estimators, model=args.model,
                                   threads=args.threads, **kwargs)
    emit_report(report, args.format, args.out)
    return EXIT_OK


def _usage(args, message: str) -> int:
    args._parser.print_usage(sys.stderr)
    print(f"seqtrial {args.command}: error: {message}", file=sys.stderr)
    return EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqtrial",
        description="Bias-adjusted estimation after two-stage group sequential trials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    threads = dict(type=int, default=os.cpu_count() or 1,
                   help="worker threads (results do not depend on this)")

    p = sub.add_parser("analyze", help="all point estimates for an observed trial")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--primary", required=True, choices=list(ESTIMATORS),
                   help="pre-specified primary adjusted estimator")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(func=cmd_analyze, _parser=p)

    p = sub.add_parser("boundaries", help="generate a boundary design document")
    p.add_argument("--family", choices=["obf", "haybittle-peto"], required=True)
    p.add_argument("--looks", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sided", type=int, choices=[1, 2], default=2)
    p.add_argument("--interim-z", type=float, default=None)
    p.add_argument("--no-calibrate", action="store_true",
                   help="keep the nominal final Haybittle-Peto boundary")
    p.add_argument("--info", default=None, help="comma-separated information levels")
    p.set_defaults(func=cmd_boundaries, _parser=p)

    p = sub.add_parser("stopprob", help="stagewise stopping probabilities")
    p.add_argument("--design", required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--method", choices=["recursion", "mc"], default="recursion")
    p.add_argument("--reps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["json"], default="json")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_stopprob, _parser=p)

    p = sub.add_parser("bootstrap", help="parametric-bootstrap standard errors")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--true-diff", type=float, required=True)
    p.add_argument("--control-rate", type=float, default=None)
    p.add_argument("--reps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", choices=["binomial", "normal"], default="binomial")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_bootstrap, _parser=p)

    p = sub.add_parser("simulate", help="bias/MSE sweep over a grid of true effects")
    p.add_argument("--design", required=True)
    p.add_argument("--theta-grid", required=True, help="lo:hi:step")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output path, or - for stdout")
    p.add_argument("--model", choices=["binomial", "normal"], default="normal")
    p.add_argument("--data", default=None, help="count data fixing sample sizes (binomial)")
    p.add_argument("--control-rate", type=float, default=None)
    p.add_argument("--estimators", default=None, help="comma-separated subset; empty for none")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--threads", **threads)
    p.set_defaults(func=cmd_simulate, _parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"seqtrial {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnsupportedDesignError as exc:
        print(f"seqtrial {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        for err in exc.errors:
            print(f"seqtrial {args.command}: invalid input: {err}", file=sys.stderr)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        print(f"seqtrial {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
