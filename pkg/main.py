# main.py
"""
Command-line entry point.

    python main.py solve --example portfolio --dim 50 --alpha 0.05 --N 10000 --method fd --seed 1
    python main.py bench --plan table1 --replications 3 --out results/table1.csv
    python main.py gapcheck --dims 50 100 --alphas 0.05 0.1
    python main.py sweep-beta --example portfolio --dim 50 --alpha 0.1 --Ns 5000

Report rows go to stdout as CSV; status lines and logs go to stderr.
Exit codes: 0 ok, 2 usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

import pandas as pd

import harness
from errors import EXIT_OK, EXIT_SOLVER, ConfigurationError, QcpError, exit_code_for
from settings import Settings, load_settings

# settings with a dedicated flag of their own
_CELL_KEYS = {"log_level"}


def _add_setting_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("algorithm settings (override config file and QCP_* environment)")
    for f in fields(Settings):
        if f.name in _CELL_KEYS:
            continue
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", default=None,
                           metavar="VALUE", help=f"QCP_{f.name.upper()} (default {f.default})")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="dotenv-style config file (default: $QCP_CONFIG).")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
    common.add_argument("--seed", type=int, default=0, help="Master seed.")
    common.add_argument("--omit-time", action="store_true",
                        help="Leave the wall_time column empty so repeated runs are byte-identical.")
    common.add_argument("--trace-dir", default=None,
                        help="Write per-cell inner and outer iteration traces as CSV here.")
    _add_setting_flags(common)
    return common


def parse_args(argv=None):
    common = _common()
    p = argparse.ArgumentParser(
        description="Solve chance-constrained programs via the quantile reformulation "
                    "(augmented Lagrangian + probabilistic trust region).")
    sub = p.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="Solve one instance and print its report row.")
    solve.add_argument("--example", required=True, help="nonconvex1d, portfolio or jointchance.")
    solve.add_argument("--dim", type=int, default=None, help="Problem dimension (1 for nonconvex1d).")
    solve.add_argument("--alpha", type=float, required=True, help="Risk level in (0, 1).")
    solve.add_argument("--N", type=int, default=10_000, help="Scenarios per batch.")
    solve.add_argument("--method", default="fd", help="Quantile gradient: fd or smoothing.")

    bench = sub.add_parser("bench", parents=[common], help="Run a benchmark grid.")
    bench.add_argument("--plan", default="table1", choices=("table1", "table2", "table3"))
    bench.add_argument("--examples", nargs="+", default=None)
    bench.add_argument("--portfolio-dims", nargs="+", type=int, default=list(harness.PORTFOLIO_DIMS))
    bench.add_argument("--joint-dims", nargs="+", type=int, default=list(harness.JOINT_DIMS))
    bench.add_argument("--alphas", nargs="+", type=float, default=list(harness.ALPHAS))
    bench.add_argument("--Ns", nargs="+", type=int, default=None)
    bench.add_argument("--out", default=None, help="CSV path; a .meta.json is written next to it.")
    bench.add_argument("--summary", action="store_true", help="Print medians over replications.")

    gap = sub.add_parser("gapcheck", parents=[common], help="Portfolio optimality gaps vs the convex oracle.")
    gap.add_argument("--dims", nargs="+", type=int, default=list(harness.PORTFOLIO_DIMS))
    gap.add_argument("--alphas", nargs="+", type=float, default=list(harness.ALPHAS))
    gap.add_argument("--N", type=int, default=10_000)
    gap.add_argument("--out", default=None)

    sweep = sub.add_parser("sweep-beta", parents=[common], help="Finite-difference step sweep.")
    sweep.add_argument("--example", default="portfolio")
    sweep.add_argument("--dim", type=int, default=50)
    sweep.add_argument("--alpha", type=float, default=0.1)
    sweep.add_argument("--Ns", nargs="+", type=int, default=[5000, 10_000])
    sweep.add_argument("--betas", nargs="+", type=float, default=list(harness.BETAS))
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--summary", action="store_true")

    return p.parse_args(argv)


def _settings(args) -> Settings:
    overrides = {name[len("set_"):]: value for name, value in vars(args).items()
                 if name.startswith("set_") and value is not None}
    if args.log_level is not None:
        overrides["log_level"] = args.log_level
    return load_settings(args.config, overrides)


def _emit(frame: pd.DataFrame) -> None:
    frame.to_csv(sys.stdout, index=False)


def cli_solve(args, settings: Settings) -> int:
    dim = args.dim if args.dim is not None else (1 if args.example == "nonconvex1d" else None)
    if dim is None:
        raise ConfigurationError(f"--dim is required for {args.example}")
    cell = harness.PlanCell(args.example, dim, args.alpha, args.N,
                            settings.beta, args.method)
    print(f"▶️ Solving {cell.example} dim={cell.dim} alpha={cell.alpha} N={cell.N} "
          f"method={cell.method} seed={args.seed}", file=sys.stderr)
    report = harness.solve_cell(cell, settings, args.seed, omit_time=args.omit_time,
                                keep_traces=args.trace_dir is not None)
    if args.trace_dir:
        harness.write_traces(report, args.trace_dir)
    _emit(harness.report_frame([report]))
    print(f"✅ objective {report.objective:.6g}, violation {report.violation:.4f} ({report.alm_status})",
          file=sys.stderr)
    return EXIT_OK


def _run(plan: harness.ExperimentPlan, args, settings: Settings) -> pd.DataFrame:
    return harness.execute_plan(plan, settings, trace_dir=args.trace_dir, omit_time=args.omit_time)


def cli_bench(args, settings: Settings) -> int:
    common = dict(master_seed=args.seed, replications=settings.replications, output=args.out,
                  alphas=args.alphas)
    if args.plan == "table1":
        plan = harness.table1_plan(examples=args.examples, portfolio_dims=args.portfolio_dims,
                                   joint_dims=args.joint_dims, Ns=args.Ns or (5000, 10_000, 20_000),
                                   beta=settings.beta, **common)
    elif args.plan == "table2":
        plan = harness.table2_plan(dims=args.portfolio_dims, N=(args.Ns or [10_000])[0],
                                   beta=settings.beta, **common)
    else:
        plan = harness.table3_plan(examples=args.examples, portfolio_dims=args.portfolio_dims,
                                   joint_dims=args.joint_dims, Ns=args.Ns or (5000, 10_000), **common)
    frame = _run(plan, args, settings)
    _emit(harness.summarize(frame) if args.summary else frame)
    return EXIT_OK


def cli_gapcheck(args, settings: Settings) -> int:
    plan = harness.table2_plan(master_seed=args.seed, replications=settings.replications,
                               output=args.out, dims=args.dims, alphas=args.alphas, N=args.N,
                               beta=settings.beta)
    _emit(harness.gap_table(_run(plan, args, settings)))
    return EXIT_OK


def cli_sweep_beta(args, settings: Settings) -> int:
    plan = harness.ExperimentPlan.grid([(args.example, [args.dim])], [args.alpha], args.Ns, args.betas,
                                       replications=settings.replications, master_seed=args.seed,
                                       output=args.out, name="sweep-beta")
    frame = _run(plan, args, settings)
    _emit(harness.summarize(frame) if args.summary else frame)
    return EXIT_OK


COMMANDS = {"solve": cli_solve, "bench": cli_bench, "gapcheck": cli_gapcheck, "sweep-beta": cli_sweep_beta}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = _settings(args)
        logging.basicConfig(level=settings.log_level, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args, settings)
    except QcpError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        print(f"❌ solver failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
