"""Command-line interface for the benchmark harness.

Subcommands: converge, efficiency, run, check-jacobian,
order-conditions. Exit status is 0 on success and nonzero when any
check fails.
"""

import argparse
import sys

import numpy as np

from . import harness
from .integrators import SCHEME_NAMES, SCHEMES, integrate, verify_order_conditions


def _add_common(p):
    p.add_argument("--problem", default="manufactured",
                   choices=harness.PROBLEM_NAMES)
    p.add_argument("--schemes", default=",".join(SCHEME_NAMES),
                   help="comma-separated scheme names")
    p.add_argument("--dts", default="0.2,0.1,0.05,0.025",
                   help="comma-separated descending step sizes")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-10,
                   help="engine tolerance per phi call")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None,
                   help="key=value file with problem options")
    p.add_argument("--out", default=None, help="CSV output path")


def _study_config(args):
    options = harness.parse_config(args.config) if args.config else {}
    return harness.StudyConfig(
        problem=args.problem,
        schemes=tuple(s for s in args.schemes.split(",") if s),
        dts=tuple(float(d) for d in args.dts.split(",") if d),
        t_end=args.t_end,
        tol=args.tol,
        seed=args.seed,
        out=args.out,
        options=options,
    )


def _emit(rows, out):
    if out:
        harness.write_csv(rows, out)
    else:
        print(harness.CSV_HEADER)
        for row in rows:
            print(row.csv())


def cmd_converge(args):
    config = _study_config(args)
    rows, orders = harness.run_convergence_study(config)
    _emit(rows, args.out)
    for scheme, order in orders.items():
        label = "n/a (floor-dominated)" if order is None else f"{order:.3f}"
        print(f"# order[{scheme}] = {label}", file=sys.stderr)
    return 0


def cmd_efficiency(args):
    config = _study_config(args)
    rows, best_dt = harness.run_efficiency_study(config, args.threshold)
    _emit(rows, args.out)
    if args.threshold is not None:
        for scheme, dt in best_dt.items():
            print(f"# max_dt[{scheme}] @ {args.threshold:g} = {dt}",
                  file=sys.stderr)
    return 0


def cmd_run(args):
    config = _study_config(args)
    if len(config.schemes) != 1 or len(config.dts) != 1:
        print("run expects exactly one scheme and one dt", file=sys.stderr)
        return 2
    bundle = harness.make_problem(config)
    ref = harness.make_reference_solution(config, bundle)
    row = harness._run_one(bundle, config.schemes[0], config.dts[0],
                           config, ref)
    _emit([row], args.out)
    return 0


def cmd_check_jacobian(args):
    config = _study_config(args)
    config.problem = "swe_planar"
    err = harness.jacobian_fd_check(config)
    print(f"max directional-derivative relative error: {err:.3e}")
    if err > 1e-5:
        print("FAIL: Jacobian mismatch above 1e-5", file=sys.stderr)
        return 1
    return 0


def cmd_order_conditions(args):
    rng = np.random.default_rng(args.seed)
    status = 0
    for name, scheme in SCHEMES.items():
        worst = np.zeros(4)
        for _ in range(10):
            Z = rng.standard_normal((8, 8))
            K = rng.standard_normal((8, 8))
            worst = np.maximum(worst, verify_order_conditions(scheme, Z, K))
        print(f"{name}: " + " ".join(f"cond{i + 1}={w:.3e}"
                                     for i, w in enumerate(worst)))
        checks = [worst[0] <= 1e-12]
        if name in ("pexprb43", "exprb53"):
            checks.append(worst[1] <= 1e-12)
        if not all(checks):
            status = 1
    return status


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="expintkit",
        description="Exponential integrator benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge", help="convergence study (error vs dt)")
    _add_common(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("efficiency", help="efficiency study (error vs CPU)")
    _add_common(p)
    p.add_argument("--threshold", type=float, default=None,
                   help="error threshold for the step-size-ratio table")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("run", help="single scheme / single dt run")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-jacobian",
                       help="verify the shallow-water Jacobian by finite differences")
    _add_common(p)
    p.set_defaults(func=cmd_check_jacobian)

    p = sub.add_parser("order-conditions",
                       help="stiff order-condition residuals for the Rosenbrock schemes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_order_conditions)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
