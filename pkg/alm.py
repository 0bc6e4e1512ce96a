# alm.py
"""
Outer augmented Lagrangian loop.

Each outer iteration k
  1. minimizes Phi_N(., rho^k, mu_bar^k) with the trust-region solver, warm
     started at the previous iterate, on the scenario set of size N^k,
  2. evaluates g_0 on the same scenario set and updates mu, mu_bar,
  3. multiplies rho by theta_rho when sigma(x^k, mu^{k+1}) > eta^k.

A new scenario set is drawn only when N^k changes, so with a constant schedule
the whole solve works on one sample.

The loop stops after two consecutive iterations that are feasible to eta^k,
whose inner solve reached r^k, and that moved less than stall_tol (1 + ||x||),
or after max_outer iterations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from errors import ConfigurationError, InnerSolveError, QcpError
from merit import (MeritParams, feasibility_sigma, update_multipliers, update_penalty)
from problems import ProblemSpec
from quantile_est import empirical_quantile, quantile_of_constraint
from sampling import derive_seed
from trust_region import TrustRegionConfig, TrustRegionStep, tr_minimize

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_OUTER = "max_outer"
INNER_FAILURE = "inner_failure"


@dataclass(frozen=True)
class Schedule:
    """initial * factor^k, never below floor."""
    initial: float
    factor: float = 1.0
    floor: float = 0.0

    def __post_init__(self):
        if not self.initial > 0.0:
            raise ConfigurationError(f"schedule start must be > 0, got {self.initial}")
        if not (0.0 < self.factor <= 1.0):
            raise ConfigurationError(f"schedule factor must lie in (0, 1], got {self.factor}")
        if self.floor < 0.0:
            raise ConfigurationError(f"schedule floor must be >= 0, got {self.floor}")

    def at(self, k: int) -> float:
        return max(self.floor, self.initial * self.factor ** k)


@dataclass(frozen=True)
class AlmConfig:
    theta_rho: float = 2.0
    mu_max: float = 1e4
    rho0: float = 10.0
    rho_max: float = math.inf
    r_schedule: Schedule = Schedule(1e-5)
    eta_schedule: Schedule = Schedule(1e-5)
    n_schedule: Schedule = Schedule(10_000)
    max_outer: int = 50
    stall_tol: float = 1e-6
    # recorded for provenance only; the loop does not read them
    epsilon: float = 0.1
    theta_r: float = 0.5
    theta_mu: float = 0.5
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.theta_rho > 1.0:
            raise ConfigurationError(f"theta_rho must be > 1, got {self.theta_rho}")
        if not self.mu_max > 0.0:
            raise ConfigurationError(f"mu_max must be > 0, got {self.mu_max}")
        if not (0.0 < self.rho0 <= self.rho_max):
            raise ConfigurationError(f"need 0 < rho0 <= rho_max, got {self.rho0}, {self.rho_max}")
        if self.max_outer < 1:
            raise ConfigurationError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.stall_tol < 0.0:
            raise ConfigurationError(f"stall_tol must be >= 0, got {self.stall_tol}")
        if not self.r_schedule.initial < self.trust_region.delta0:
            raise ConfigurationError(
                f"r_term {self.r_schedule.initial} must be below delta0 {self.trust_region.delta0}")
        if self.r_schedule.floor <= 0.0 and self.r_schedule.factor < 1.0:
            raise ConfigurationError("a shrinking r schedule needs a positive floor")
        if self.n_schedule.at(0) < 1:
            raise ConfigurationError("validation sample size must be >= 1")


@dataclass(frozen=True)
class OuterIteration:
    iteration: int
    objective: float
    g0: float
    sigma: float
    rho: float
    mu_norm: float
    inner_iterations: int
    inner_delta: float
    inner_truncated: bool
    movement: float


@dataclass(frozen=True, eq=False)
class AlmResult:
    x_star: np.ndarray
    mu_final: np.ndarray
    mu_bar_final: np.ndarray
    rho_final: float
    outer_trace: list[OuterIteration] = field(repr=False)
    status: str = MAX_OUTER
    inner_traces: list[list[TrustRegionStep]] = field(default_factory=list, repr=False)

    @property
    def outer_iterations(self) -> int:
        return len(self.outer_trace)


def _result(x, params: MeritParams, trace, status, inner_traces) -> AlmResult:
    return AlmResult(x_star=x.copy(), mu_final=params.mu.copy(), mu_bar_final=params.mu_bar.copy(),
                     rho_final=params.rho, outer_trace=list(trace), status=status,
                     inner_traces=list(inner_traces))


def alm_solve(problem: ProblemSpec, x0=None, config: AlmConfig | None = None) -> AlmResult:
    """
    Solve the quantile-constrained problem from x0 (problem.x0 when omitted).

    Seeds: the scenario set first used at outer iteration k is derive_seed(seed, k, 1);
    growth-mode inner draws are derive_seed(seed, k, 0, j).
    """
    config = config or AlmConfig()
    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    if x.shape != (problem.n,) or not np.all(np.isfinite(x)):
        raise ConfigurationError(f"x0 must be a finite vector of length {problem.n}")

    params = MeritParams.initial(problem.n_constraints, rho=config.rho0, mu_max=config.mu_max)
    trace: list[OuterIteration] = []
    inner_traces: list[list[TrustRegionStep]] = []
    quiet = 0
    batch = None

    for k in range(config.max_outer):
        r_k = config.r_schedule.at(k)
        eta_k = config.eta_schedule.at(k)
        n_k = max(1, int(round(config.n_schedule.at(k))))
        if batch is None or batch.N != n_k:
            batch = problem.draw(n_k, derive_seed(config.seed, k, 1))

        try:
            inner = tr_minimize(problem, x, params, r_k, config.trust_region,
                                seed=config.seed, seed_path=(k, 0), batch=batch)
        except QcpError as exc:
            partial = _result(x, params, trace, INNER_FAILURE, inner_traces)
            raise InnerSolveError(f"inner solve failed at outer iteration {k}: {exc}", partial) from exc
        inner_traces.append(inner.trace)
        if inner.truncated:
            logger.warning("outer %d: inner solve truncated at delta=%.3g", k, inner.delta)

        g0 = quantile_of_constraint(problem.chance, inner.x, batch, problem.alpha)
        g = problem.constraint_vector(inner.x, g0)
        rho_k = params.rho
        params = update_multipliers(g, params)
        sigma = feasibility_sigma(g, params.mu)
        params = update_penalty(sigma, eta_k, params, config.theta_rho)
        if params.rho > config.rho_max:
            params = replace(params, rho=config.rho_max)

        movement = float(np.linalg.norm(inner.x - x))
        x = inner.x
        trace.append(OuterIteration(
            iteration=k, objective=float(problem.objective(x)), g0=g0, sigma=sigma, rho=rho_k,
            mu_norm=float(np.linalg.norm(params.mu)), inner_iterations=inner.iterations,
            inner_delta=inner.delta, inner_truncated=inner.truncated, movement=movement))
        logger.info("outer %d: f=%.8g g0=%.3g sigma=%.3g rho=%.3g inner=%d",
                    k, trace[-1].objective, g0, sigma, rho_k, inner.iterations)

        settled = (sigma <= eta_k and not inner.truncated and inner.delta <= r_k
                   and movement <= config.stall_tol * (1.0 + float(np.linalg.norm(x))))
        quiet = quiet + 1 if settled else 0
        if quiet >= 2:
            return _result(x, params, trace, CONVERGED, inner_traces)

    logger.info("outer loop stopped at max_outer=%d", config.max_outer)
    return _result(x, params, trace, MAX_OUTER, inner_traces)


@dataclass(frozen=True)
class ValidationReport:
    objective: float   # in the problem's reported sense
    violation: float   # fraction of scenarios with c1(x, xi) > 0
    quantile: float
    sigma: float       # norm of the positive parts of (g0, g_det)


def validate_solution(problem: ProblemSpec, x, N_val: int = 100_000, alpha: float | None = None,
                      seed: int = 0) -> ValidationReport:
    """Out-of-sample check of P[c1(x, xi) <= 0] >= 1 - alpha on derive_seed(seed, 0, 2)."""
    if N_val < 1000:
        raise ConfigurationError(f"N_val must be >= 1000, got {N_val}")
    alpha = problem.alpha if alpha is None else alpha
    x = np.asarray(x, dtype=float)
    batch = problem.draw(N_val, derive_seed(seed, 0, 2))
    values = problem.chance(x, batch.scenarios)
    quantile = empirical_quantile(values, alpha)
    g = problem.constraint_vector(x, quantile)
    return ValidationReport(
        objective=problem.reported_objective(x),
        violation=float(np.mean(values > 0.0)),
        quantile=quantile,
        sigma=feasibility_sigma(g, np.zeros(len(g))),
    )


OUTER_TRACE_COLUMNS = ["outer", "objective", "g0", "sigma", "rho", "mu_norm",
                       "inner_iterations", "inner_delta", "inner_truncated", "movement"]


def outer_trace_frame(result: AlmResult) -> pd.DataFrame:
    return pd.DataFrame(
        [(o.iteration, o.objective, o.g0, o.sigma, o.rho, o.mu_norm, o.inner_iterations,
          o.inner_delta, o.inner_truncated, o.movement) for o in result.outer_trace],
        columns=OUTER_TRACE_COLUMNS,
    )
