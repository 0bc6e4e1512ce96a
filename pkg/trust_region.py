# trust_region.py
"""
Probabilistic trust-region solver for the sampled merit function Phi_N at fixed
(rho, mu_bar).

Each iteration builds the quadratic model

    m(x0 + s) = Phi_N(x0) + phi_N(x0)^T s + 0.5 s^T H s

on the current scenario set (gradient from the quantile-gradient estimator, H
from a neighborhood fit), takes a dogleg step, and judges the step with Phi_N
values from the same set. The set is drawn anew only while the sample size is
still growing; once it reaches sample_size no further samples are added. The
loop stops once the radius falls to r_term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from errors import ConfigurationError, SubproblemContractError
from merit import ConstraintVector, MeritParams, merit_gradient_estimate, merit_value
from problems import ProblemSpec
from quantile_est import (QuantileQuery, empirical_quantile, fd_quantile_gradient,
                          quantile_of_constraint, smoothing_quantile_gradient)
from sampling import SampleBatch, derive_seed

logger = logging.getLogger(__name__)

GRADIENT_METHODS = ("fd", "smoothing")


@dataclass(frozen=True)
class TrustRegionConfig:
    eta1: float = 0.1
    eta2: float = 0.25
    gamma_inc: float = 2.0
    gamma_dec: float = 0.5
    r0: float = 0.5
    delta0: float = 0.1
    beta: float = 1e-3
    beta_mode: str = "constant"   # "constant" or "radius" (beta = r0 * delta)
    sample_size: int = 10_000
    sample_mode: str = "fixed"    # "fixed" or "growth"
    n0: int = 100
    max_iterations: int = 10_000
    gradient_method: str = "fd"
    smoothing_epsilon: float | None = None
    hessian_points: int = 0       # 0 -> min((n+1)(n+2)/2, 2n+1)
    debug_checks: bool = False

    def __post_init__(self):
        for name in ("eta1", "eta2", "r0"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1), got {value}")
        if not (0.0 < self.gamma_dec < 1.0 < self.gamma_inc):
            raise ConfigurationError(
                f"need 0 < gamma_dec < 1 < gamma_inc, got {self.gamma_dec}, {self.gamma_inc}")
        if not self.delta0 > 0.0:
            raise ConfigurationError(f"delta0 must be > 0, got {self.delta0}")
        if not self.beta > 0.0:
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if self.beta_mode not in ("constant", "radius"):
            raise ConfigurationError(f"beta_mode must be 'constant' or 'radius', got {self.beta_mode!r}")
        if self.sample_mode not in ("fixed", "growth"):
            raise ConfigurationError(f"sample_mode must be 'fixed' or 'growth', got {self.sample_mode!r}")
        if self.sample_size < 1 or self.n0 < 1:
            raise ConfigurationError("sample sizes must be >= 1")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.gradient_method not in GRADIENT_METHODS:
            raise ConfigurationError(
                f"gradient_method must be one of {GRADIENT_METHODS}, got {self.gradient_method!r}")
        if self.hessian_points < 0:
            raise ConfigurationError("hessian_points must be >= 0")

    def batch_size(self, delta: float) -> int:
        if self.sample_mode == "fixed":
            return self.sample_size
        return int(min(self.sample_size, self.n0 * math.ceil(delta ** -2)))

    def fd_step(self, delta: float) -> float:
        return self.beta if self.beta_mode == "constant" else self.r0 * delta


class SampledMerit:
    """Phi_N and phi_N of one problem on one batch, for fixed merit parameters."""

    def __init__(self, problem: ProblemSpec, batch: SampleBatch, params: MeritParams):
        self.problem = problem
        self.batch = batch
        self.params = params

    def components(self, x: np.ndarray) -> tuple[float, ConstraintVector]:
        g0 = quantile_of_constraint(self.problem.chance, x, self.batch, self.problem.alpha)
        return float(self.problem.objective(x)), self.problem.constraint_vector(x, g0)

    def value(self, x: np.ndarray) -> float:
        f_val, g = self.components(x)
        return merit_value(f_val, g, self.params)

    def values_at(self, X: np.ndarray) -> np.ndarray:
        """Phi_N at every row of X; the quantiles share one evaluation pass."""
        raw = self.problem.chance.values_at(X, self.batch.scenarios)
        quantiles = np.atleast_1d(empirical_quantile(raw, self.problem.alpha))
        return np.array([
            merit_value(self.problem.objective(x), self.problem.constraint_vector(x, q), self.params)
            for x, q in zip(X, quantiles)
        ])

    def quantile_gradient(self, x: np.ndarray, beta: float, method: str = "fd",
                          epsilon: float | None = None) -> np.ndarray:
        if method == "smoothing":
            return smoothing_quantile_gradient(self.problem.chance, x, self.batch,
                                               self.problem.alpha, epsilon)
        return fd_quantile_gradient(self.problem.chance, x, self.batch,
                                    QuantileQuery(self.problem.alpha, beta))

    def gradient(self, x: np.ndarray, g: ConstraintVector, beta: float, method: str = "fd",
                 epsilon: float | None = None) -> np.ndarray:
        grad_g0 = self.quantile_gradient(x, beta, method, epsilon)
        return merit_gradient_estimate(self.problem.objective_grad(x), g, grad_g0,
                                       self.problem.jacobian(x), self.params)


@dataclass(frozen=True, eq=False)
class LocalModel:
    base_point: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def predict(self, s: np.ndarray) -> float:
        return float(self.value + self.gradient @ s + 0.5 * s @ self.hessian @ s)

    def decrease(self, s: np.ndarray) -> float:
        """m(x0) - m(x0 + s)."""
        return float(-(self.gradient @ s) - 0.5 * s @ self.hessian @ s)


def default_hessian_points(n: int) -> int:
    return min((n + 1) * (n + 2) // 2, 2 * n + 1)


def fit_hessian(merit: SampledMerit, x0: np.ndarray, value: float, gradient: np.ndarray,
                delta: float, points: int = 0, seed: int = 0) -> np.ndarray:
    """
    Minimum-Frobenius-norm Hessian from Phi_N at `points` sites on the sphere of radius delta.

    With residuals r_j = Phi_N(x0 + s_j) - Phi_N(x0) - g^T s_j, solve
    min ||H||_F s.t. 0.5 s_j^T H s_j = r_j; then H = sum_j lambda_j s_j s_j^T with
    M lambda = r, M_ij = 0.5 (s_i^T s_j)^2. Falls back to H = 0 when M is rank deficient.
    """
    n = x0.size
    points = points or default_hessian_points(n)
    rng = np.random.default_rng(derive_seed(seed, 7))
    directions = rng.standard_normal((points, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    steps = delta * directions

    residuals = merit.values_at(x0 + steps) - value - steps @ gradient
    gram = 0.5 * (steps @ steps.T) ** 2
    expected_rank = min(points, n * (n + 1) // 2)
    try:
        lam, _, rank, _ = scipy.linalg.lstsq(gram, residuals, cond=1e-10)
    except (np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("Hessian fit failed (%s); using a linear model", exc)
        return np.zeros((n, n))
    if rank < expected_rank:
        logger.warning("Hessian fit rank %d < %d; using a linear model", rank, expected_rank)
        return np.zeros((n, n))

    hessian = steps.T @ (lam[:, None] * steps)
    hessian = 0.5 * (hessian + hessian.T)
    if not np.all(np.isfinite(hessian)):
        logger.warning("Hessian fit produced non-finite entries; using a linear model")
        return np.zeros((n, n))
    return hessian


def _build(merit: SampledMerit, x0: np.ndarray, delta: float, beta: float,
           config: TrustRegionConfig) -> LocalModel:
    f_val, g = merit.components(x0)
    value = merit_value(f_val, g, merit.params)
    gradient = merit.gradient(x0, g, beta, config.gradient_method, config.smoothing_epsilon)
    hessian = fit_hessian(merit, x0, value, gradient, delta, config.hessian_points, merit.batch.seed)
    return LocalModel(base_point=x0, value=value, gradient=gradient, hessian=hessian)


def build_local_model(problem: ProblemSpec, x0, batch: SampleBatch, p: MeritParams, delta: float,
                      beta: float, config: TrustRegionConfig | None = None) -> LocalModel:
    """Quadratic model of Phi_N around x0; every evaluation uses `batch`."""
    config = config or TrustRegionConfig()
    return _build(SampledMerit(problem, batch, p), np.asarray(x0, dtype=float), delta, beta, config)


def cauchy_decrease_bound(model: LocalModel, delta: float) -> float:
    """0.5 ||g|| min(delta, ||g|| / (1 + ||H||))."""
    gnorm = float(np.linalg.norm(model.gradient))
    hnorm = float(np.linalg.norm(model.hessian, 2))
    return 0.5 * gnorm * min(delta, gnorm / (1.0 + hnorm))


def solve_tr_subproblem(model: LocalModel, delta: float) -> np.ndarray:
    """
    Dogleg step for min m(x0 + s) over ||s|| <= delta.

    Takes the Newton step when H is positive definite and the step fits, the
    dogleg point between the unconstrained Cauchy point and the Newton step when
    it does not, and the Cauchy point when H is not positive definite.
    """
    if not delta > 0.0:
        raise ConfigurationError(f"trust-region radius must be > 0, got {delta}")
    g = model.gradient
    H = model.hessian
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)

    gHg = float(g @ H @ g)
    tau = 1.0 if gHg <= 0.0 else min(gnorm ** 3 / (delta * gHg), 1.0)
    cauchy = -(tau * delta / gnorm) * g

    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError:
        return cauchy
    newton = -scipy.linalg.cho_solve(factor, g)
    if np.linalg.norm(newton) <= delta:
        return newton

    steepest = -(gnorm ** 2 / gHg) * g
    if np.linalg.norm(steepest) >= delta:
        return -(delta / gnorm) * g

    # boundary crossing of steepest + t (newton - steepest), t in [0, 1]
    d = newton - steepest
    a = float(d @ d)
    b = 2.0 * float(steepest @ d)
    c = float(steepest @ steepest) - delta ** 2
    t = (-b + math.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
    step = steepest + t * d
    norm = float(np.linalg.norm(step))
    return step * (delta / norm) if norm > delta else step


@dataclass(frozen=True)
class TrustRegionStep:
    iteration: int
    delta: float
    model_decrease: float
    ratio: float
    accepted: bool
    merit: float
    grad_norm: float
    sample_size: int
    beta: float


@dataclass(frozen=True, eq=False)
class TrustRegionResult:
    x: np.ndarray
    delta: float
    trace: list[TrustRegionStep] = field(repr=False)
    truncated: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace)


def tr_minimize(problem: ProblemSpec, x_init, p: MeritParams, r_term: float,
                config: TrustRegionConfig | None = None, seed: int = 0,
                seed_path: tuple[int, ...] = (), batch: SampleBatch | None = None) -> TrustRegionResult:
    """
    Minimize Phi_N(., rho, mu_bar) from x_init until the radius drops to r_term.

    In "fixed" mode every iteration uses one scenario set: `batch` when given,
    else a draw with seed derive_seed(seed, *seed_path). In "growth" mode
    iteration j draws N_j = max(N_{j-1}, batch_size(delta)) scenarios with seed
    derive_seed(seed, *seed_path, j) until N_j reaches sample_size; from then on
    the set is frozen (`batch` is used for it when given).
    """
    config = config or TrustRegionConfig()
    if not (0.0 < r_term < config.delta0):
        raise ConfigurationError(f"r_term must lie in (0, delta0={config.delta0}), got {r_term}")
    x = np.array(x_init, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("initial point must be finite")

    growing = config.sample_mode == "growth"
    if not growing and batch is None:
        batch = problem.draw(config.sample_size, derive_seed(seed, *seed_path))
    current = batch
    size = 0

    delta = config.delta0
    trace: list[TrustRegionStep] = []
    for k in range(config.max_iterations):
        beta = config.fd_step(delta)
        if growing and size < config.sample_size:
            size = max(size, config.batch_size(delta))
            if size >= config.sample_size and batch is not None:
                current = batch
            else:
                current = problem.draw(size, derive_seed(seed, *seed_path, k))
        sample_size = current.N
        merit = SampledMerit(problem, current, p)
        model = _build(merit, x, delta, beta, config)
        step = solve_tr_subproblem(model, delta)
        predicted = model.decrease(step)

        if config.debug_checks:
            bound = cauchy_decrease_bound(model, delta)
            if predicted < bound * (1.0 - 1e-8) - 1e-14:
                raise SubproblemContractError(
                    f"iteration {k}: model decrease {predicted:.6g} below Cauchy bound {bound:.6g}")

        ratio = float("nan")
        accepted = False
        if predicted >= config.eta1 * min(delta, delta ** 2):
            ratio = (model.value - merit.value(x + step)) / predicted
            accepted = ratio >= config.eta2

        trace.append(TrustRegionStep(
            iteration=k, delta=delta, model_decrease=predicted, ratio=ratio, accepted=accepted,
            merit=model.value, grad_norm=float(np.linalg.norm(model.gradient)),
            sample_size=sample_size, beta=beta))
        logger.debug("tr %d: delta=%.3g pred=%.3g ratio=%.3g accepted=%s merit=%.8g",
                     k, delta, predicted, ratio, accepted, model.value)

        if accepted:
            x = x + step
            delta *= config.gamma_inc
        else:
            delta *= config.gamma_dec
        if delta <= r_term:
            return TrustRegionResult(x=x, delta=delta, trace=trace)

    logger.warning("trust-region loop hit the iteration cap (%d) with delta=%.3g",
                   config.max_iterations, delta)
    return TrustRegionResult(x=x, delta=delta, trace=trace, truncated=True)


TRACE_COLUMNS = ["iter", "delta", "model_decrease", "ratio", "accepted", "merit", "grad_norm"]


def trace_frame(trace: list[TrustRegionStep]) -> pd.DataFrame:
    """Trace rows as a DataFrame with columns TRACE_COLUMNS."""
    return pd.DataFrame(
        [(s.iteration, s.delta, s.model_decrease, s.ratio, s.accepted, s.merit, s.grad_norm)
         for s in trace],
        columns=TRACE_COLUMNS,
    )
