"""Command-line entry point: ``robustot {transfer,register,eval-cost,losses}``.

Exit codes: 0 success, 2 usage error, 3 input or parse error, 4 numerical
failure. Settings come from defaults, then ``--config`` (JSON with the field
names of the cost, solver and penalty configs), then explicit flags.
"""

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .density import CsvFormatError
from .kernel import LossKind, emit_loss_curves, loss_curves_csv
from .pipeline import (
    ImageError,
    RunConfig,
    format_breakdown,
    load_run_config,
    run_eval_cost,
    run_register,
    run_transfer,
)
from .solver import NumericalFailure

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _shared(p):
    g = p.add_argument_group("model and solver")
    g.add_argument("--h", type=float, help="first-stage bandwidth (eval-cost: the bandwidth)")
    g.add_argument("--h-tilde", type=float, help="bandwidth of the mapped source")
    g.add_argument("--hc", type=float, help="robust cost scale")
    g.add_argument("--lambda", dest="lam", type=float, help="paired/unpaired mix, combined mode")
    g.add_argument("--lambda1", type=float, help="paired term weight, legacy mode")
    g.add_argument("--lambda2", type=float, help="range penalty weight")
    g.add_argument("--lambda3", type=float, help="bending energy weight")
    g.add_argument("--mode", choices=("legacy", "combined"))
    g.add_argument("--inlier-fraction", type=float)
    g.add_argument("--max-samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--stages", type=int, help="number of annealing stages")
    g.add_argument("--anneal", type=float, help="bandwidth factor between stages")
    g.add_argument("--workers", type=int)
    g.add_argument("--config", help="JSON configuration file")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="robustot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer", help="recolour an image with another image's palette")
    p.add_argument("target", help="PNG image to recolour")
    p.add_argument("palette", help="PNG image providing the colours")
    p.add_argument("--correspondences", help="CSV: palette RGB, target RGB per row")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--trace", help="CSV trace of the optimisation")
    _shared(p)

    p = sub.add_parser("register", help="register a source point set onto a target")
    p.add_argument("target", help="CSV of target points")
    p.add_argument("source", help="CSV of source points")
    p.add_argument("--correspondences", help="CSV: target then source coordinates per row")
    p.add_argument("--out", required=True, help="output transform record")
    p.add_argument("--trace")
    _shared(p)

    p = sub.add_parser("eval-cost", help="print every term of the objective")
    p.add_argument("target")
    p.add_argument("source")
    p.add_argument("--correspondences")
    p.add_argument("--transform", help="transform record (default: identity)")
    p.add_argument("--t0", action="store_true", help="include the target entropy term")
    p.add_argument("--out", help="also write the breakdown to this file")
    _shared(p)

    p = sub.add_parser("losses", help="tabulate robust loss curves as CSV")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--eps-max", type=float, default=5.0, help="grid end, in units of sigma")
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def resolve_config(args, annealed=True):
    """Defaults, then the config file, then flags."""
    try:
        cfg = RunConfig()
        if args.config:
            cfg = load_run_config(args.config, cfg)
        cost, solver, pen = cfg.cost, cfg.solver, cfg.penalties
        if args.h is not None:
            cost = replace(cost, h_sq=args.h**2)
            if annealed:
                solver = replace(solver, initial_h=args.h)
        if args.h_tilde is not None:
            cost = replace(cost, ht_sq=args.h_tilde**2)
        if args.hc is not None:
            cost = replace(cost, hc_sq=args.hc**2)
        for flag, name in (("lam", "lam"), ("lambda1", "lambda1"), ("mode", "mode"),
                           ("inlier_fraction", "inlier_fraction"), ("workers", "workers")):
            if getattr(args, flag) is not None:
                cost = replace(cost, **{name: getattr(args, flag)})
        if getattr(args, "t0", False):
            cost = replace(cost, include_t0=True)
        if args.lambda2 is not None:
            pen = replace(pen, lambda2=args.lambda2)
        if args.lambda3 is not None:
            pen = replace(pen, lambda3=args.lambda3)
        if args.stages is not None:
            solver = replace(solver, max_outer=args.stages)
        if args.anneal is not None:
            solver = replace(solver, anneal_factor=args.anneal)
        top = {}
        if args.max_samples is not None:
            top["max_samples"] = args.max_samples
        if args.seed is not None:
            top["seed"] = args.seed
            solver = replace(solver, seed=args.seed)
        return replace(cfg, cost=cost, solver=solver, penalties=pen, **top)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc


def _cmd_transfer(args):
    cfg = resolve_config(args)
    res = run_transfer(args.target, args.palette, args.out, args.correspondences, cfg, args.trace)
    print(f"l2_before = {res.l2_before:.17g}")
    print(f"l2_after = {res.l2_after:.17g}")
    print(f"final_total = {res.report.final_total:.17g}")


def _cmd_register(args):
    cfg = resolve_config(args)
    res = run_register(args.target, args.source, args.out, args.correspondences, cfg, args.trace)
    print(f"final_total = {res.report.final_total:.17g}")
    if res.rmse is not None:
        print(f"rmse = {res.rmse:.17g}")


def _cmd_eval_cost(args):
    cfg = resolve_config(args, annealed=False)
    br = run_eval_cost(args.target, args.source, args.correspondences, args.transform, cfg)
    text = format_breakdown(br)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


def _cmd_losses(args):
    if not (args.sigma > 0 and args.eps_max > 0 and args.points >= 2):
        raise UsageError("--sigma and --eps-max must be > 0, --points >= 2")
    kinds = [LossKind.least_squares(), LossKind.absolute(),
             LossKind.welsch(args.sigma), LossKind.geman_mcclure(args.sigma)]
    grid = np.linspace(0.0, args.eps_max * args.sigma, args.points)
    text = loss_curves_csv(emit_loss_curves(kinds, grid))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = {"transfer": _cmd_transfer, "register": _cmd_register,
            "eval-cost": _cmd_eval_cost, "losses": _cmd_losses}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"robustot: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"robustot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ImageError, CsvFormatError, ValueError) as exc:
        print(f"robustot: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
