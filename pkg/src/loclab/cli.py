"""Command-line surface.

    loclab run <config.json>        execute a declarative experiment
    loclab describe <check>         print what a check verifies
    loclab thinshell ...            variance constant for one family
    loclab report ...               figures + CSV for traces or sweeps

Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error.
The environment variable LOCLAB_SEED overrides the config master seed.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, LoclabError
from .jsonio import dump_json_atomic


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="loclab",
        description="numerical laboratory for Brownian tilt flows and "
                    "thin-shell variance chains")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a JSON experiment config")
    p_run.add_argument("config", help="path to the config document")

    p_desc = sub.add_parser("describe", help="print what a check verifies")
    p_desc.add_argument("check")

    p_thin = sub.add_parser(
        "thinshell",
        help="variance of |X|^2 for a model family; CSV columns are "
             "n,var_norm_sq,var_over_n,chain_middle,chain_right,"
             "chain_right_se,chain_right_over_n,t_used")
    p_thin.add_argument("--family", default="cube",
                        choices=("cube", "gaussian", "exp"))
    p_thin.add_argument("--dim", type=int, default=16)
    p_thin.add_argument("--samples", type=int, default=200_000)
    p_thin.add_argument("--seed", type=int, default=0)
    p_thin.add_argument("--method", default="monte-carlo",
                        choices=("monte-carlo", "exact"))
    p_thin.add_argument("--resolution", type=int, default=1024)
    p_thin.add_argument("--out", default="thinshell_report.json")

    p_rep = sub.add_parser("report", help="render figures next to CSV output")
    p_rep.add_argument("--family", default="cube",
                       choices=("cube", "gaussian", "exp", "two-atom"))
    p_rep.add_argument("--mode", default="traces",
                       choices=("traces", "scaling"))
    p_rep.add_argument("--dim", type=int, default=4)
    p_rep.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    p_rep.add_argument("--n-traces", type=int, default=4)
    p_rep.add_argument("--n-paths", type=int, default=256)
    p_rep.add_argument("--t-max", type=float, default=1.0)
    p_rep.add_argument("--dt", type=float, default=1e-3)
    p_rep.add_argument("--seed", type=int, default=0)
    p_rep.add_argument("--out-dir", default="report")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "describe":
            return _cmd_describe(args)
        if args.command == "thinshell":
            return _cmd_thinshell(args)
        if args.command == "report":
            return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except LoclabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_run(args) -> int:
    from .experiments import load_config, run

    config = load_config(args.config)
    manifest = run(config)
    for check in manifest.checks:
        status = "PASS" if check.get("pass", True) else "FAIL"
        margin = check.get("margin")
        extra = "" if margin is None else f" margin={margin:.3g}"
        print(f"[{status}] {check['name']}{extra}")
    print(f"manifest: {os.path.join(config.out_dir, 'manifest.json')}")
    return 0 if manifest.all_passed else 1


def _cmd_describe(args) -> int:
    from .experiments import describe

    print(describe(args.check))
    return 0


def _cmd_thinshell(args) -> int:
    from .experiments import ExperimentConfig, run

    seed = int(os.environ.get("LOCLAB_SEED", args.seed))
    config = ExperimentConfig(
        kind="thinshell", seed=seed,
        out_dir=os.path.dirname(os.path.abspath(args.out)) or ".",
        thinshell={"family": args.family, "dim": args.dim,
                   "samples": args.samples, "method": args.method,
                   "resolution": args.resolution})
    manifest = run(config)
    entry = {"schema": 1, **manifest.checks[0]}
    dump_json_atomic(args.out, entry)
    print(f"Var(|X|^2)/n = {entry['var_norm_sq_over_n']:.6f} "
          f"(n={entry['n']}, {entry['method']}, report: {args.out})")
    return 0


def _cmd_report(args) -> int:
    from .experiments import ExperimentConfig, run

    seed = int(os.environ.get("LOCLAB_SEED", args.seed))
    config = ExperimentConfig(
        kind="report", seed=seed, out_dir=args.out_dir,
        measure={"family": args.family, "dim": args.dim,
                 "resolution": 256 if args.family != "gaussian" else 128},
        dynamics={"t_max": args.t_max, "dt": args.dt},
        report={"mode": args.mode, "n_traces": args.n_traces,
                "dims": args.dims, "n_paths": args.n_paths,
                "t": args.t_max})
    manifest = run(config)
    for path in manifest.outputs:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
