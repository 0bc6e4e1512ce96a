# quantile_est.py
"""
Empirical quantiles of constraint values and two estimators of the quantile gradient.

- empirical_quantile: the ceil((1 - alpha) N)-th smallest value (plain order statistic)
- quantile_of_constraint: empirical quantile of c1(x, xi_k) over a batch
- fd_quantile_gradient: central finite differences of the empirical quantile,
  all 2n perturbed evaluations on the same batch (common random numbers)
- smoothing_quantile_gradient: kernel-weighted average of scenario gradients
  near the empirical quantile (baseline estimator)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import ConfigurationError, DegenerateBandwidthError, EvaluationError
from sampling import SampleBatch

logger = logging.getLogger(__name__)

# (x, scenarios) -> values with shape (N,)
ValuesFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (x, scenarios) -> scenario gradients with shape (N, n)
GradientsFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (X with shape (P, n), scenarios) -> values with shape (N, P)
MultiFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"risk level alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


@dataclass(frozen=True)
class QuantileQuery:
    alpha: float
    beta: float = 1e-3

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ConfigurationError(f"finite-difference step beta must be > 0, got {self.beta}")


@dataclass(frozen=True, eq=False)
class ConstraintEvaluator:
    """
    The random constraint c1(x, xi), evaluated over a whole batch at once.

    `values(x, scenarios)` returns one value per scenario. `gradients` is only
    needed by the smoothing estimator. `multi` is an optional vectorized form of
    `values` for several decision vectors; it must agree with `values` exactly.
    """
    values: ValuesFn
    gradients: GradientsFn | None = None
    multi: MultiFn | None = None

    def __call__(self, x: np.ndarray, scenarios: np.ndarray) -> np.ndarray:
        return np.asarray(self.values(np.asarray(x, dtype=float), scenarios), dtype=float)

    def values_at(self, X: np.ndarray, scenarios: np.ndarray) -> np.ndarray:
        """Values at every row of X, as an (N, P) array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.multi is not None:
            return np.asarray(self.multi(X, scenarios), dtype=float)
        return np.column_stack([self(x, scenarios) for x in X])

    @property
    def has_gradients(self) -> bool:
        return self.gradients is not None


def quantile_index(N: int, alpha: float) -> int:
    """1-based index ceil((1 - alpha) N), clamped to [1, N]."""
    # round() strips representation error such as (1 - 0.1) * 10 = 9.000000000000002
    k = math.ceil(round((1.0 - alpha) * N, 9))
    return min(max(k, 1), N)


def empirical_quantile(values, alpha: float):
    """
    The ceil((1 - alpha) N)-th smallest entry of `values`.

    A 2-D array is treated column-wise and yields one quantile per column.
    """
    alpha = _check_alpha(alpha)
    values = np.asarray(values, dtype=float)
    if values.ndim == 0 or values.shape[0] == 0:
        raise ConfigurationError("empirical_quantile needs at least one value")
    k = quantile_index(values.shape[0], alpha)
    ordered = np.sort(values, axis=0)
    result = ordered[k - 1]
    return float(result) if values.ndim == 1 else result


def _require_finite(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        index = int(bad[0])
        raise EvaluationError(f"constraint evaluated to a non-finite value at scenario {index}",
                              scenario_index=index)
    return values


def _check_batch(batch: SampleBatch) -> None:
    if batch.N < 1:
        raise ConfigurationError("scenario batch is empty")


def quantile_of_constraint(c1: ConstraintEvaluator, x, batch: SampleBatch, alpha: float) -> float:
    _check_batch(batch)
    values = _require_finite(c1(x, batch.scenarios))
    return empirical_quantile(values, alpha)


def fd_quantile_gradient(c1: ConstraintEvaluator, x, batch: SampleBatch,
                         query: QuantileQuery) -> np.ndarray:
    """
    sum_k [Q_N(x + beta e_k) - Q_N(x - beta e_k)] / (2 beta) e_k on one shared batch.
    """
    _check_batch(batch)
    x = np.asarray(x, dtype=float)
    n = x.size
    steps = query.beta * np.eye(n)
    points = np.vstack([x + steps, x - steps])
    values = _require_finite(c1.values_at(points, batch.scenarios))
    quantiles = empirical_quantile(values, query.alpha)
    return (quantiles[:n] - quantiles[n:]) / (2.0 * query.beta)


def smoothing_kernel(y, epsilon: float):
    """Gamma_eps: 1 below -eps, 0 above eps, quintic in between."""
    y = np.asarray(y, dtype=float)
    u = np.clip(y / epsilon, -1.0, 1.0)
    inner = (15.0 / 16.0) * (-(u ** 5) / 5.0 + 2.0 * (u ** 3) / 3.0 - u + 8.0 / 15.0)
    return np.where(y <= -epsilon, 1.0, np.where(y >= epsilon, 0.0, inner))


def smoothing_kernel_derivative(y, epsilon: float):
    """Gamma'_eps: -(15 / (16 eps)) (1 - (y/eps)^2)^2 inside (-eps, eps), 0 outside."""
    y = np.asarray(y, dtype=float)
    u = y / epsilon
    inside = np.abs(u) < 1.0
    return np.where(inside, -(15.0 / (16.0 * epsilon)) * (1.0 - u ** 2) ** 2, 0.0)


def default_bandwidth(values: np.ndarray) -> float:
    """0.1 x the sample interquartile range."""
    q75, q25 = np.percentile(values, [75.0, 25.0])
    return 0.1 * float(q75 - q25)


def smoothing_quantile_gradient(c1: ConstraintEvaluator, x, batch: SampleBatch, alpha: float,
                                epsilon: float | None = None) -> np.ndarray:
    """
    sum_i w_i grad c1(x, xi_i) / sum_i w_i with w_i = -Gamma'_eps(c1(x, xi_i) - Q_N(x)).
    """
    if not c1.has_gradients:
        raise ConfigurationError("smoothing estimator needs scenario gradients of c1")
    if epsilon is not None and not epsilon > 0.0:
        raise ConfigurationError(f"smoothing bandwidth must be > 0, got {epsilon}")
    _check_batch(batch)

    x = np.asarray(x, dtype=float)
    values = _require_finite(c1(x, batch.scenarios))
    quantile = empirical_quantile(values, alpha)
    eps = default_bandwidth(values) if epsilon is None else float(epsilon)
    if not eps > 0.0:
        raise DegenerateBandwidthError(
            "interquartile range of the constraint values is zero; pass a larger epsilon")

    weights = -smoothing_kernel_derivative(values - quantile, eps)
    active = np.flatnonzero(weights > 0.0)
    total = float(weights[active].sum())
    if active.size == 0 or total <= 0.0:
        raise DegenerateBandwidthError(
            f"no scenario within epsilon={eps:g} of the quantile; try a larger epsilon")

    grads = np.asarray(c1.gradients(x, batch.scenarios[active]), dtype=float)
    logger.debug("smoothing gradient: %d of %d scenarios inside eps=%g", active.size, batch.N, eps)
    return weights[active] @ grads / total
