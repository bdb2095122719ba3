"""Command line front end: ``nhint run|order|compare|verify``.

Exit codes: 0 success, 1 verification residuals above tolerance,
2 solver failure, 3 invalid configuration, 4 inconsistent initial data.
"""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .errors import (
    CompatibilityError,
    ConfigurationError,
    InconsistentInitialDataError,
    NonConvergenceError,
    StepFailure,
)
from .harness import RunConfig, _fmt, compare, order_estimate, run
from .identities import random_admissible_states, verify_exact_identities
from .steppers import METHODS

EXIT_OK, EXIT_RESIDUAL, EXIT_SOLVER, EXIT_CONFIG, EXIT_INITIAL = 0, 1, 2, 3, 4
MOMENTUM_TOL, ADDITIVITY_TOL = 1e-5, 1e-7


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--system")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--symmetric", action="store_true", default=None)
    p.add_argument("--h", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--q0", type=_float_list)
    p.add_argument("--v0", type=_float_list)
    p.add_argument("--project-v0", dest="project_v0", action="store_true", default=None)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nhint", description="Nonholonomic integrators from discrete generating functions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="integrate and write a trajectory CSV"))
    p = sub.add_parser("order", help="estimate the convergence order at fixed final time")
    _common(p)
    p.add_argument("--h-list", dest="h_list", type=_float_list, required=True)
    p.add_argument("--h-ref", dest="h_ref", type=float)
    p = sub.add_parser("compare", help="summary table over several methods")
    _common(p)
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=list(METHODS))
    p = sub.add_parser("verify", help="check the exact-flow generating-function identities")
    _common(p)
    p.add_argument("--points", type=int, default=10, help="random admissible states when --q0 is absent")
    return parser


_CONFIG_KEYS = ("system", "method", "alpha", "symmetric", "h", "steps", "q0", "v0",
                "project_v0", "tol", "max_iter", "out", "seed")


def config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
    if args.config:
        return RunConfig.from_json(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def _cmd_run(args, cfg):
    traj = run(cfg)
    if not cfg.out:
        print(f"{cfg.method}: {traj.steps} steps, final q = {np.array2string(traj.q[-1], precision=10)}")
    return EXIT_OK


def _cmd_order(args, cfg):
    report = order_estimate(cfg, args.h_list, h_ref=args.h_ref)
    rows = [("h", "error", "ratio")]
    ratios = [""] + [_fmt(r) for r in report.ratios]
    rows += [(_fmt(h), _fmt(e), r) for h, e, r in zip(report.h, report.errors, ratios)]
    _emit(rows, cfg.out)
    print(f"slope = {report.slope:.6f}", file=sys.stderr if not cfg.out else sys.stdout)
    return EXIT_OK


def _cmd_compare(args, cfg):
    rows = compare(cfg, args.methods, out=cfg.out)
    if not cfg.out:
        keys = list(rows[0])
        _emit([keys] + [[r[k] if isinstance(r[k], (str, int)) else _fmt(r[k]) for k in keys] for r in rows], None)
    return EXIT_OK


def _cmd_verify(args, cfg):
    system = cfg.build_system()
    if args.q0 is not None:
        points = [(np.array(cfg.q0), np.array(cfg.v0))]
    else:
        points = random_admissible_states(system, args.points, seed=cfg.seed)
    rows = [("point", "max_momentum_residual", "max_stationarity_residual", "additivity")]
    worst = 0.0
    worst_add = 0.0
    for i, (q, v) in enumerate(points):
        rep = verify_exact_identities(system, q, v, cfg.h)
        rows.append((i, _fmt(rep.max_momentum_residual), _fmt(rep.max_stationarity_residual), _fmt(rep.additivity)))
        worst = max(worst, rep.max_momentum_residual, rep.max_stationarity_residual)
        worst_add = max(worst_add, rep.additivity)
    _emit(rows, cfg.out)
    return EXIT_OK if worst <= MOMENTUM_TOL and worst_add <= ADDITIVITY_TOL else EXIT_RESIDUAL


def _emit(rows, out):
    if out:
        with open(out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    else:
        csv.writer(sys.stdout).writerows(rows)


_COMMANDS = {"run": _cmd_run, "order": _cmd_order, "compare": _cmd_compare, "verify": _cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return _COMMANDS[args.command](args, cfg)
    except ConfigurationError as exc:
        print(f"nhint: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconsistentInitialDataError as exc:
        print(f"nhint: {exc}", file=sys.stderr)
        return EXIT_INITIAL
    except StepFailure as exc:
        print(f"nhint: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (NonConvergenceError, CompatibilityError) as exc:
        print(f"nhint: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
