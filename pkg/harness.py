# harness.py
"""
Experiment orchestrator.

- build_problem() turns (example, dim, alpha) into a ProblemSpec + OracleBundle
- solve_cell() runs alm_solve + validate_solution for one grid cell
- execute_plan() runs a whole ExperimentPlan, optionally in worker processes,
  and writes the CSV report plus a .meta.json with the full configuration
- table1_plan / table2_plan / table3_plan build the benchmark grids
"""

from __future__ import annotations

import hashlib
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
from tqdm import tqdm

from alm import alm_solve, outer_trace_frame, validate_solution
from errors import ConfigurationError
from problems import make_joint_chance, make_nonconvex1d, make_portfolio
from settings import Settings
from trust_region import trace_frame

EXAMPLES = ("nonconvex1d", "portfolio", "jointchance")
METHODS = {"fd": "finite-difference", "smoothing": "smoothing"}

REPORT_COLUMNS = [
    "example", "dim", "alpha", "N", "beta", "method", "replication", "seed", "status",
    "objective", "violation", "sigma", "quantile", "oracle_optimum", "gap_pct",
    "outer_iterations", "alm_status", "wall_time",
]


def _status(message: str) -> None:
    print(message, file=sys.stderr)


def build_problem(example: str, dim: int, alpha: float, settings: Settings | None = None,
                  check_oracle: bool = True, seed: int = 0):
    settings = settings or Settings()
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if example == "nonconvex1d":
        if dim != 1:
            raise ConfigurationError(f"nonconvex1d has dim 1, got {dim}")
        return make_nonconvex1d(alpha, spread=settings.spread, check_oracle=check_oracle, seed=seed)
    if example == "portfolio":
        return make_portfolio(dim, alpha, check_oracle=check_oracle, seed=seed)
    if example == "jointchance":
        return make_joint_chance(dim, m=settings.joint_m, U=settings.joint_u, alpha=alpha)
    raise ConfigurationError(f"unknown example {example!r}; choose from {', '.join(EXAMPLES)}")


@dataclass(frozen=True)
class PlanCell:
    example: str
    dim: int
    alpha: float
    N: int
    beta: float
    method: str = "fd"
    replication: int = 0

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ConfigurationError(f"unknown example {self.example!r}; choose from {', '.join(EXAMPLES)}")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.N < 1:
            raise ConfigurationError(f"N must be >= 1, got {self.N}")
        if not self.beta > 0.0:
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    @property
    def key(self) -> str:
        return (f"{self.example}|{self.dim}|{self.alpha!r}|{self.N}|{self.beta!r}|"
                f"{self.method}|{self.replication}")


def cell_seed(master_seed: int, cell: PlanCell) -> int:
    """First 16 hex digits of sha256("master|cell key")."""
    digest = hashlib.sha256(f"{master_seed}|{cell.key}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


@dataclass(frozen=True)
class ExperimentPlan:
    cells: tuple[PlanCell, ...]
    master_seed: int = 0
    output: str | None = None
    name: str = "bench"

    def __post_init__(self):
        if not self.cells:
            raise ConfigurationError("experiment plan has an empty grid")

    @classmethod
    def grid(cls, examples: Iterable[tuple[str, Iterable[int]]], alphas: Iterable[float],
             Ns: Iterable[int], betas: Iterable[float], methods: Iterable[str] = ("fd",),
             replications: int = 1, master_seed: int = 0, output: str | None = None,
             name: str = "bench") -> "ExperimentPlan":
        """Cartesian grid; `examples` pairs each example with its dims."""
        if replications < 1:
            raise ConfigurationError(f"replications must be >= 1, got {replications}")
        alphas, Ns, betas, methods = list(alphas), list(Ns), list(betas), list(methods)
        cells = [
            PlanCell(example, int(dim), float(alpha), int(N), float(beta), method, rep)
            for example, dims in examples
            for dim, alpha, N, method, beta, rep in itertools.product(
                dims, alphas, Ns, methods, betas, range(replications))
        ]
        return cls(cells=tuple(cells), master_seed=master_seed, output=output, name=name)


@dataclass
class RunReport:
    example: str
    dim: int
    alpha: float
    N: int
    beta: float
    method: str
    replication: int
    seed: int
    status: str = "ok"
    objective: float = float("nan")
    violation: float = float("nan")
    sigma: float = float("nan")
    quantile: float = float("nan")
    oracle_optimum: float | None = None
    gap_pct: float | None = None
    outer_iterations: int = 0
    alm_status: str = ""
    wall_time: float | None = None
    traces: dict = field(default_factory=dict, repr=False)

    def row(self) -> dict:
        data = asdict(self)
        data.pop("traces")
        data["method"] = METHODS.get(self.method, self.method)
        return data


def _gap(report_sign: float, optimum: float, best: float) -> float:
    """Shortfall of best vs optimum in percent, in the benchmark's own sense."""
    shortfall = (optimum - best) if report_sign < 0 else (best - optimum)
    return 100.0 * shortfall / abs(optimum)


def solve_cell(cell: PlanCell, settings: Settings, seed: int, omit_time: bool = False,
               keep_traces: bool = False) -> RunReport:
    """Run one cell; errors propagate."""
    settings = replace(settings, beta=cell.beta)
    problem, oracle = build_problem(cell.example, cell.dim, cell.alpha, settings, seed=seed)
    config = settings.alm(seed=seed, sample_size=cell.N, gradient_method=cell.method)

    start = time.perf_counter()
    result = alm_solve(problem, None, config)
    elapsed = time.perf_counter() - start
    check = validate_solution(problem, result.x_star, settings.n_val, seed=seed)

    optimum = oracle.optimum
    if oracle.basin_optimum is not None:
        # multimodal: compare against the local optimum whose basin the solver ended in
        optimum = oracle.basin_optimum(float(result.x_star[0]))[1]
    report = RunReport(
        example=cell.example, dim=cell.dim, alpha=cell.alpha, N=cell.N, beta=cell.beta,
        method=cell.method, replication=cell.replication, seed=seed,
        objective=check.objective, violation=check.violation, sigma=check.sigma,
        quantile=check.quantile,
        oracle_optimum=optimum,
        gap_pct=None if optimum is None else _gap(problem.report_sign, optimum, check.objective),
        outer_iterations=result.outer_iterations, alm_status=result.status,
        wall_time=None if omit_time else round(elapsed, 3),
    )
    if keep_traces:
        inner = [trace_frame(steps).assign(outer=k) for k, steps in enumerate(result.inner_traces)]
        report.traces = {
            "outer": outer_trace_frame(result),
            "inner": pd.concat(inner, ignore_index=True) if inner else trace_frame([]),
        }
    return report


def run_cell(cell: PlanCell, settings: Settings, seed: int, omit_time: bool = False,
             keep_traces: bool = False) -> RunReport:
    """solve_cell, but a failure becomes a row with status 'failed: ...'."""
    try:
        return solve_cell(cell, settings, seed, omit_time, keep_traces)
    except Exception as exc:
        return RunReport(example=cell.example, dim=cell.dim, alpha=cell.alpha, N=cell.N,
                         beta=cell.beta, method=cell.method, replication=cell.replication,
                         seed=seed, status=f"failed: {type(exc).__name__}: {exc}")


def write_traces(report: RunReport, trace_dir: str | Path) -> None:
    if not report.traces:
        return
    out = Path(trace_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = (f"{report.example}_d{report.dim}_a{report.alpha:g}_N{report.N}_b{report.beta:g}_"
            f"{report.method}_r{report.replication}")
    report.traces["outer"].to_csv(out / f"{stem}_outer.csv", index=False)
    report.traces["inner"].to_csv(out / f"{stem}_inner.csv", index=False)


def report_frame(reports: Iterable[RunReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports], columns=REPORT_COLUMNS)


def execute_plan(plan: ExperimentPlan, settings: Settings | None = None, workers: int | None = None,
                 trace_dir: str | Path | None = None, omit_time: bool = False,
                 progress: bool = True) -> pd.DataFrame:
    """
    Run every cell of `plan` and return the report frame in cell order.

    Cell i runs with seed cell_seed(plan.master_seed, cell). Failed cells keep
    their row with a 'failed: ...' status.
    """
    settings = settings or Settings()
    workers = workers or settings.workers
    seeds = [cell_seed(plan.master_seed, cell) for cell in plan.cells]
    keep = trace_dir is not None
    reports: list[RunReport | None] = [None] * len(plan.cells)

    _status(f"▶️ Running plan {plan.name!r}: {len(plan.cells)} cells, {workers} worker(s)")
    bar = tqdm(total=len(plan.cells), desc=plan.name, disable=not progress, file=sys.stderr)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_cell, cell, settings, seed, omit_time, keep): i
                       for i, (cell, seed) in enumerate(zip(plan.cells, seeds))}
            for future in as_completed(futures):
                reports[futures[future]] = future.result()
                bar.update()
    else:
        for i, (cell, seed) in enumerate(zip(plan.cells, seeds)):
            reports[i] = run_cell(cell, settings, seed, omit_time, keep)
            bar.update()
    bar.close()

    for report in reports:
        if report.status != "ok":
            _status(f"❌ {report.example} dim={report.dim} alpha={report.alpha} N={report.N} "
                    f"beta={report.beta:g} {report.method}: {report.status}")
        if keep:
            write_traces(report, trace_dir)

    frame = report_frame(reports)
    failed = int((frame["status"] != "ok").sum())
    if plan.output:
        write_report(frame, plan, settings)
    if failed:
        _status(f"⚠️ {failed} of {len(frame)} cells failed")
    else:
        _status(f"✅ Plan {plan.name!r} complete")
    return frame


def write_report(frame: pd.DataFrame, plan: ExperimentPlan, settings: Settings) -> Path:
    """CSV at plan.output plus <output>.meta.json with the plan and settings."""
    out = Path(plan.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    meta = {
        "plan": plan.name,
        "master_seed": plan.master_seed,
        "cells": [asdict(cell) | {"seed": cell_seed(plan.master_seed, cell)} for cell in plan.cells],
        "columns": REPORT_COLUMNS,
        "settings": {k: (str(v) if isinstance(v, float) and not np.isfinite(v) else v)
                     for k, v in settings.as_dict().items()},
    }
    meta_path = out.with_name(out.name + ".meta.json")
    try:
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, ensure_ascii=False)
        _status(f"📝 Report written to {out} (metadata: {meta_path.name})")
    except OSError as e:
        _status(f"⚠️ Could not write metadata: {e}")
    return out


SUMMARY_KEYS = ["example", "dim", "alpha", "N", "beta", "method"]
SUMMARY_VALUES = ["objective", "violation", "sigma", "gap_pct", "wall_time"]


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Median over replications of every successful cell."""
    ok = frame[frame["status"] == "ok"].copy()
    for column in SUMMARY_VALUES:
        ok[column] = pd.to_numeric(ok[column], errors="coerce")
    summary = ok.groupby(SUMMARY_KEYS, sort=False)[SUMMARY_VALUES].median().reset_index()
    counts = ok.groupby(SUMMARY_KEYS, sort=False).size().reset_index(name="runs")
    return summary.merge(counts, on=SUMMARY_KEYS)


# ---------------------------------------------------------------------------
# benchmark grids
# ---------------------------------------------------------------------------

ALPHAS = (0.05, 0.1, 0.15)
PORTFOLIO_DIMS = (50, 100, 150, 200)
JOINT_DIMS = (10, 20, 30, 40)
BETAS = (1e-4, 5e-4, 1e-3, 5e-3, 1e-2)


def _examples(examples: Iterable[str] | None, portfolio_dims, joint_dims):
    chosen = list(examples or EXAMPLES)
    dims = {"nonconvex1d": (1,), "portfolio": tuple(portfolio_dims), "jointchance": tuple(joint_dims)}
    unknown = [e for e in chosen if e not in dims]
    if unknown:
        raise ConfigurationError(f"unknown example(s) {unknown}; choose from {', '.join(EXAMPLES)}")
    return [(e, dims[e]) for e in chosen]


def table1_plan(master_seed: int = 0, replications: int = 3, output: str | None = None,
                examples: Iterable[str] | None = None, portfolio_dims=PORTFOLIO_DIMS,
                joint_dims=JOINT_DIMS, alphas=ALPHAS, Ns=(5000, 10_000, 20_000),
                beta: float = 1e-3) -> ExperimentPlan:
    """Method comparison: finite difference vs smoothing over every instance and N."""
    return ExperimentPlan.grid(_examples(examples, portfolio_dims, joint_dims), alphas, Ns, [beta],
                               methods=("fd", "smoothing"), replications=replications,
                               master_seed=master_seed, output=output, name="table1")


def table2_plan(master_seed: int = 0, replications: int = 3, output: str | None = None,
                dims=PORTFOLIO_DIMS, alphas=ALPHAS, N: int = 10_000,
                beta: float = 1e-3) -> ExperimentPlan:
    """Portfolio optimality gaps against the convex oracle."""
    return ExperimentPlan.grid([("portfolio", dims)], alphas, [N], [beta], replications=replications,
                               master_seed=master_seed, output=output, name="table2")


def table3_plan(master_seed: int = 0, replications: int = 3, output: str | None = None,
                examples: Iterable[str] | None = None, portfolio_dims=PORTFOLIO_DIMS,
                joint_dims=JOINT_DIMS, alphas=ALPHAS, Ns=(5000, 10_000),
                betas=BETAS) -> ExperimentPlan:
    """Finite-difference step sweep."""
    return ExperimentPlan.grid(_examples(examples, portfolio_dims, joint_dims), alphas, Ns, betas,
                               replications=replications, master_seed=master_seed, output=output,
                               name="table3")


GAP_COLUMNS = ["dim", "alpha", "opt_obj", "best_obj", "gap_pct"]


def gap_table(frame: pd.DataFrame) -> pd.DataFrame:
    """(dim, alpha, opt obj, best obj, gap %) with the best objective over replications."""
    ok = frame[(frame["status"] == "ok") & (frame["example"] == "portfolio")]
    rows = []
    for (dim, alpha), group in ok.groupby(["dim", "alpha"], sort=False):
        best = float(group["objective"].max())
        optimum = float(pd.to_numeric(group["oracle_optimum"], errors="coerce").iloc[0])
        gap = _gap(-1.0, optimum, best) if np.isfinite(optimum) else float("nan")
        rows.append((dim, alpha, optimum, best, gap))
    return pd.DataFrame(rows, columns=GAP_COLUMNS)
