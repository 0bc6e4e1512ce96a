# merit.py
"""
PHR augmented Lagrangian merit function for

    minimize f(x)  s.t.  g_0(x) = Q^{1-alpha}(x) <= 0,  g_i(x) <= 0 (i in I)

together with the feasibility measure sigma and the multiplier / penalty updates
of the outer loop. Index 0 of every multiplier vector belongs to the quantile
constraint, indices 1..l2 to the deterministic constraints.

Everything here is a pure function of its arguments; MeritParams is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class MeritParams:
    """
    rho: penalty; mu: multipliers; mu_bar: safeguarded multipliers in [0, mu_max].

    The inner solve penalizes with `mu_bar`; `mu` is the unclipped estimate.
    """
    rho: float
    mu: np.ndarray = field(repr=False)
    mu_bar: np.ndarray = field(repr=False)
    mu_max: float = 1e4

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        mu_bar = np.atleast_1d(np.asarray(self.mu_bar, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "mu_bar", mu_bar)
        if not (self.rho > 0.0 and np.isfinite(self.rho)):
            raise ConfigurationError(f"penalty rho must be positive and finite, got {self.rho}")
        if not self.mu_max > 0.0:
            raise ConfigurationError(f"mu_max must be > 0, got {self.mu_max}")
        if mu.shape != mu_bar.shape:
            raise ConfigurationError("mu and mu_bar must have the same length")
        if np.any(mu < 0.0):
            raise ConfigurationError("multipliers mu must be nonnegative")
        if np.any(mu_bar < 0.0) or np.any(mu_bar > self.mu_max):
            raise ConfigurationError("safeguarded multipliers must lie in [0, mu_max]")

    @classmethod
    def initial(cls, n_constraints: int, rho: float = 10.0, mu_max: float = 1e4) -> "MeritParams":
        """mu = mu_bar = 1 for the quantile constraint and every deterministic one."""
        ones = np.ones(n_constraints)
        return cls(rho=rho, mu=ones, mu_bar=np.minimum(ones, mu_max), mu_max=mu_max)

    @property
    def size(self) -> int:
        return int(self.mu.size)


@dataclass(frozen=True, eq=False)
class ConstraintVector:
    """g0: sampled quantile constraint value; g_det: deterministic constraint values."""
    g0: float
    g_det: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        g_det = np.atleast_1d(np.asarray(self.g_det, dtype=float))
        object.__setattr__(self, "g_det", g_det)
        object.__setattr__(self, "g0", float(self.g0))
        if not np.isfinite(self.g0) or not np.all(np.isfinite(g_det)):
            raise ConfigurationError("constraint values must be finite")

    def stacked(self) -> np.ndarray:
        return np.concatenate(([self.g0], self.g_det))

    def __len__(self) -> int:
        return 1 + self.g_det.size


def _check_sizes(g: ConstraintVector, mu: np.ndarray) -> None:
    if len(g) != mu.size:
        raise ConfigurationError(f"{len(g)} constraints but {mu.size} multipliers")


def _shifted(g: ConstraintVector, p: MeritParams) -> np.ndarray:
    """max{0, g_i + mu_i / rho} for i in I0."""
    _check_sizes(g, p.mu_bar)
    return np.maximum(0.0, g.stacked() + p.mu_bar / p.rho)


def merit_value(f_val: float, g: ConstraintVector, p: MeritParams) -> float:
    """f + (rho / 2) sum_i max{0, g_i + mu_i / rho}^2 (Phi_N when g0 is sampled)."""
    shifted = _shifted(g, p)
    return float(f_val) + 0.5 * p.rho * float(shifted @ shifted)


def merit_gradient_estimate(grad_f, g: ConstraintVector, grad_g0_est, grad_g_det,
                            p: MeritParams) -> np.ndarray:
    """
    grad f + rho max{0, g0 + mu_0/rho} G_N + rho sum_i max{0, g_i + mu_i/rho} grad g_i.

    grad_g_det is the (l2, n) Jacobian of the deterministic constraints.
    """
    grad_f = np.asarray(grad_f, dtype=float)
    grad_g0_est = np.asarray(grad_g0_est, dtype=float)
    jac = np.asarray(grad_g_det, dtype=float).reshape(g.g_det.size, grad_f.size)
    if grad_g0_est.shape != grad_f.shape:
        raise ConfigurationError("quantile gradient and objective gradient differ in size")
    shifted = _shifted(g, p)
    return grad_f + p.rho * (shifted[0] * grad_g0_est + shifted[1:] @ jac)


def feasibility_sigma(g: ConstraintVector, mu) -> float:
    """sqrt(sum_i min{-g_i, mu_i}^2) over I0."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    _check_sizes(g, mu)
    residual = np.minimum(-g.stacked(), mu)
    return float(np.sqrt(residual @ residual))


def update_multipliers(g: ConstraintVector, p: MeritParams) -> MeritParams:
    """mu_i <- max{0, mu_bar_i + rho g_i}; mu_bar_i <- min{mu_max, mu_i}; rho unchanged."""
    _check_sizes(g, p.mu_bar)
    mu = np.maximum(0.0, p.mu_bar + p.rho * g.stacked())
    return replace(p, mu=mu, mu_bar=np.minimum(p.mu_max, mu))


def update_penalty(sigma: float, eta: float, p: MeritParams, theta_rho: float = 2.0) -> MeritParams:
    """rho <- theta_rho rho when sigma > eta."""
    if not theta_rho > 1.0:
        raise ConfigurationError(f"theta_rho must be > 1, got {theta_rho}")
    if sigma > eta:
        return replace(p, rho=p.rho * theta_rho)
    return p
