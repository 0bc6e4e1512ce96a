# problems.py
"""
Chance-constrained problem instances and their oracles.

    minimize f(x)  s.t.  P[c1(x, xi) <= 0] >= 1 - alpha,  c2(x) <= 0

Three benchmark families are shipped:
- nonconvex1D: minimize the (1 - alpha)-quantile of a quartic with noisy slope/offset
- portfolio:   maximize the value-at-risk threshold t of a long-only portfolio
- jointChance: maximize sum(x) under a joint chance constraint, reduced with a max

Equality constraints are split into two inequalities; bounds are ordinary
inequalities. Every `make_*` returns (ProblemSpec, OracleBundle).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from errors import ConfigurationError, OracleMismatchError
from merit import ConstraintVector
from quantile_est import ConstraintEvaluator, empirical_quantile
from sampling import DistributionSpec, SampleBatch, derive_seed, draw_batch

logger = logging.getLogger(__name__)

VectorFn = Callable[[np.ndarray], np.ndarray]


def _no_constraints(x: np.ndarray) -> np.ndarray:
    return np.zeros(0)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    One (CCP) instance in minimization form.

    `report_sign` turns the minimized objective back into the benchmark's own
    sense (e.g. -1 for a maximization folded into a minimization).
    `sampler(N, seed)` defaults to draws from `dist`.
    """
    name: str
    n: int
    objective: Callable[[np.ndarray], float]
    objective_grad: VectorFn
    chance: ConstraintEvaluator
    alpha: float
    x0: np.ndarray = field(repr=False)
    dist: DistributionSpec | None = None
    det_constraints: VectorFn = _no_constraints
    det_jacobian: VectorFn | None = None
    n_det: int = 0
    report_sign: float = 1.0
    sampler: Callable[[int, int], SampleBatch] | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.dist is None and self.sampler is None:
            raise ConfigurationError(f"problem {self.name!r} needs a distribution or a sampler")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @property
    def n_constraints(self) -> int:
        """|I0|: the quantile constraint plus the deterministic ones."""
        return 1 + self.n_det

    def draw(self, N: int, seed: int) -> SampleBatch:
        if self.sampler is not None:
            return self.sampler(N, seed)
        return draw_batch(self.dist, N, seed)

    def deterministic(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.det_constraints(x), dtype=float).reshape(self.n_det)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.det_jacobian is None:
            return np.zeros((self.n_det, self.n))
        return np.asarray(self.det_jacobian(x), dtype=float).reshape(self.n_det, self.n)

    def constraint_vector(self, x: np.ndarray, g0: float) -> ConstraintVector:
        return ConstraintVector(g0=g0, g_det=self.deterministic(x))

    def reported_objective(self, x: np.ndarray) -> float:
        return self.report_sign * float(self.objective(x))


@dataclass(frozen=True, eq=False)
class OracleBundle:
    """
    Optional exact information about an instance.

    `optimum` is in the reported sense (see ProblemSpec.report_sign).
    `local_optima` holds (x, value) pairs where a problem has several.
    """
    quantile: VectorFn | None = None
    quantile_grad: VectorFn | None = None
    optimum: float | None = None
    optimum_x: np.ndarray | None = field(default=None, repr=False)
    provenance: str = ""
    local_optima: tuple[tuple[float, float], ...] = ()
    basin_optimum: Callable[[float], tuple[float, float]] | None = field(default=None, repr=False)


def density_at_quantile(values: np.ndarray, alpha: float, h: float = 0.01) -> float:
    """Finite-difference density estimate of the sample at its (1 - alpha)-quantile."""
    h = min(h, alpha / 2.0, (1.0 - alpha) / 2.0)
    upper = empirical_quantile(values, alpha - h)
    lower = empirical_quantile(values, alpha + h)
    spread = upper - lower
    return 2.0 * h / spread if spread > 0.0 else np.inf


def cross_check_oracle(problem: ProblemSpec, oracle: OracleBundle, x, N: int = 100_000,
                       seed: int = 0) -> float:
    """
    Compare the analytic quantile with the empirical one at x.

    Raises OracleMismatchError when they differ by more than
    4 sqrt(alpha (1 - alpha)) / (density sqrt(N)). Returns the absolute difference.
    """
    if oracle.quantile is None:
        return 0.0
    x = np.asarray(x, dtype=float)
    batch = problem.draw(N, derive_seed(seed, 0, 3))
    values = problem.chance(x, batch.scenarios)
    empirical = empirical_quantile(values, problem.alpha)
    analytic = float(oracle.quantile(x))
    density = density_at_quantile(values, problem.alpha)
    tolerance = 4.0 * np.sqrt(problem.alpha * (1.0 - problem.alpha)) / (density * np.sqrt(N))
    gap = abs(analytic - empirical)
    if gap > tolerance:
        raise OracleMismatchError(
            f"{problem.name}: analytic quantile {analytic:.6g} vs empirical {empirical:.6g} "
            f"(|diff| {gap:.3g} > tolerance {tolerance:.3g})")
    logger.debug("%s oracle cross-check ok: |diff| %.3g <= %.3g", problem.name, gap, tolerance)
    return gap


# ---------------------------------------------------------------------------
# nonconvex1D
# ---------------------------------------------------------------------------

def _quartic(x):
    return 0.25 * x ** 4 - x ** 3 / 3.0 - x ** 2 + 0.2 * x - 19.5


def _quartic_slope(x):
    return x ** 3 - x ** 2 - 2.0 * x + 0.2


def _grid_local_minima(h: Callable, lo: float, hi: float, points: int):
    grid = np.linspace(lo, hi, points)
    values = h(grid)
    interior = np.flatnonzero((values[1:-1] < values[:-2]) & (values[1:-1] < values[2:])) + 1
    minima = []
    for i in interior:
        res = minimize_scalar(h, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                              tol=1e-12)
        minima.append((float(res.x), float(res.fun)))
    # endpoints count when the grid slopes down into them
    if values[0] < values[1]:
        minima.insert(0, (float(grid[0]), float(values[0])))
    if values[-1] < values[-2]:
        minima.append((float(grid[-1]), float(values[-1])))
    return grid, values, minima


def make_nonconvex1d(alpha: float, spread: str = "variance", check_oracle: bool = True,
                     grid_points: int = 100_000, seed: int = 0):
    """
    Decision (x, y); minimize y s.t. P[c(x, xi) <= y] >= 1 - alpha with
    c(x, xi) = 0.25x^4 - x^3/3 - x^2 + 0.2x - 19.5 + xi_1 x + xi_2.

    spread="variance" reads xi_1 ~ N(0, 3), xi_2 ~ N(0, 144) as variances;
    spread="std" reads the same numbers as standard deviations.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if spread == "variance":
        variances = (3.0, 144.0)
    elif spread == "std":
        variances = (9.0, 144.0 ** 2)
    else:
        raise ConfigurationError(f"spread must be 'variance' or 'std', got {spread!r}")
    v1, v2 = variances
    z = float(norm.ppf(1.0 - alpha))

    def values(p, s):
        return _quartic(p[0]) + s[:, 0] * p[0] + s[:, 1] - p[1]

    def multi(P, s):
        x, y = P[:, 0], P[:, 1]
        return _quartic(x)[None, :] + s[:, [0]] * x[None, :] + s[:, [1]] - y[None, :]

    def gradients(p, s):
        return np.column_stack([_quartic_slope(p[0]) + s[:, 0], -np.ones(s.shape[0])])

    def exact_quantile(p):
        return _quartic(p[0]) + z * np.sqrt(v1 * p[0] ** 2 + v2) - p[1]

    def exact_quantile_grad(p):
        slope = _quartic_slope(p[0]) + z * v1 * p[0] / np.sqrt(v1 * p[0] ** 2 + v2)
        return np.array([slope, -1.0])

    def profile(x):
        return _quartic(x) + z * np.sqrt(v1 * np.asarray(x) ** 2 + v2)

    grid, grid_values, minima = _grid_local_minima(profile, -5.0, 5.0, grid_points)
    best_x, best_value = min(minima, key=lambda item: item[1])

    def basin_optimum(x: float) -> tuple[float, float]:
        """Local minimum reached by walking downhill on the grid from x."""
        i = int(np.clip(np.searchsorted(grid, x), 0, grid.size - 1))
        while True:
            if i > 0 and grid_values[i - 1] < grid_values[i]:
                i -= 1
            elif i < grid.size - 1 and grid_values[i + 1] < grid_values[i]:
                i += 1
            else:
                break
        return min(minima, key=lambda item: abs(item[0] - grid[i]))

    dist = DistributionSpec.independent_gaussian(means=[0.0, 0.0], variances=variances)
    problem = ProblemSpec(
        name="nonconvex1d",
        n=2,
        objective=lambda p: float(p[1]),
        objective_grad=lambda p: np.array([0.0, 1.0]),
        chance=ConstraintEvaluator(values=values, gradients=gradients, multi=multi),
        alpha=alpha,
        x0=np.array([0.0, 0.0]),
        dist=dist,
    )
    oracle = OracleBundle(
        quantile=exact_quantile,
        quantile_grad=exact_quantile_grad,
        optimum=best_value,
        optimum_x=np.array([best_x, best_value]),
        provenance=f"grid of {grid_points} points on [-5, 5] + golden-section refine",
        local_optima=tuple(minima),
        basin_optimum=basin_optimum,
    )
    if check_oracle:
        cross_check_oracle(problem, oracle, problem.x0, seed=seed)
    return problem, oracle


# ---------------------------------------------------------------------------
# portfolio
# ---------------------------------------------------------------------------

def portfolio_parameters(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return means mu_i = 1.05 + 0.3 (n-i)/(n-1) and std devs sigma_i = (0.05 + 0.6 (n-i)/(n-1)) / 3."""
    i = np.arange(1, n + 1, dtype=float)
    frac = (n - i) / (n - 1)
    return 1.05 + 0.3 * frac, (0.05 + 0.6 * frac) / 3.0


def simplex_projection(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Euclidean projection of v onto {y >= 0, sum(y) = z} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - z
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - cssv / ind > 0)
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def portfolio_optimum(mu: np.ndarray, sigma: np.ndarray, alpha: float, tol: float = 1e-8,
                      max_iter: int = 200_000) -> tuple[float, np.ndarray]:
    """
    maximize mu^T x + q_alpha ||sigma o x|| over the unit simplex (concave for alpha < 0.5)
    by projected gradient ascent with backtracking, to ||x - P(x + grad)|| <= tol.
    """
    q = float(norm.ppf(alpha))

    def value(x):
        return float(mu @ x + q * np.linalg.norm(sigma * x))

    def grad(x):
        scale = np.linalg.norm(sigma * x)
        return mu + q * sigma ** 2 * x / scale

    x = np.full(mu.size, 1.0 / mu.size)
    step = 1.0
    for _ in range(max_iter):
        g = grad(x)
        if np.linalg.norm(x - simplex_projection(x + g)) <= tol:
            break
        fx = value(x)
        while True:
            trial = simplex_projection(x + step * g)
            d = trial - x
            if value(trial) >= fx + g @ d - (d @ d) / (2.0 * step) or step < 1e-16:
                break
            step *= 0.5
        x = trial
        step *= 1.5
    else:
        logger.warning("portfolio oracle stopped after %d iterations", max_iter)
    return value(x), x


def make_portfolio(n: int, alpha: float, check_oracle: bool = True, seed: int = 0):
    """
    Decision (x_1..x_n, t); maximize t s.t. P[xi^T x >= t] >= 1 - alpha,
    sum(x) = 1, x >= 0, with xi_i ~ N(mu_i, sigma_i^2) independent.
    """
    if n < 2:
        raise ConfigurationError(f"portfolio needs n >= 2 assets, got {n}")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    mu, sigma = portfolio_parameters(n)
    q = float(norm.ppf(alpha))

    def values(p, s):
        return p[-1] - s @ p[:-1]

    def multi(P, s):
        return P[:, -1][None, :] - s @ P[:, :-1].T

    def gradients(p, s):
        return np.column_stack([-s, np.ones(s.shape[0])])

    def det_constraints(p):
        total = p[:-1].sum()
        return np.concatenate(([total - 1.0, 1.0 - total], -p[:-1]))

    jac = np.zeros((n + 2, n + 1))
    jac[0, :n] = 1.0
    jac[1, :n] = -1.0
    jac[2:, :n] = -np.eye(n)

    def exact_quantile(p):
        return p[-1] - mu @ p[:-1] - q * np.linalg.norm(sigma * p[:-1])

    def exact_quantile_grad(p):
        x = p[:-1]
        scale = np.linalg.norm(sigma * x)
        gx = -mu - (q * sigma ** 2 * x / scale if scale > 0.0 else 0.0)
        return np.concatenate((gx, [1.0]))

    best, weights = portfolio_optimum(mu, sigma, alpha) if alpha < 0.5 else (None, None)
    x0 = np.concatenate((np.full(n, 1.0 / n), [1.0]))
    problem = ProblemSpec(
        name="portfolio",
        n=n + 1,
        objective=lambda p: -float(p[-1]),
        objective_grad=lambda p: np.concatenate((np.zeros(n), [-1.0])),
        chance=ConstraintEvaluator(values=values, gradients=gradients, multi=multi),
        alpha=alpha,
        x0=x0,
        dist=DistributionSpec.independent_gaussian(means=mu, variances=sigma ** 2),
        det_constraints=det_constraints,
        det_jacobian=lambda p: jac,
        n_det=n + 2,
        report_sign=-1.0,
    )
    oracle = OracleBundle(
        quantile=exact_quantile,
        quantile_grad=exact_quantile_grad,
        optimum=best,
        optimum_x=None if weights is None else np.concatenate((weights, [best])),
        provenance="second-order-cone reformulation solved by projected gradient ascent",
    )
    if check_oracle:
        cross_check_oracle(problem, oracle, problem.x0, seed=seed)
    return problem, oracle


# ---------------------------------------------------------------------------
# jointChance
# ---------------------------------------------------------------------------

def make_joint_chance(n: int, m: int = 5, U: float = 100.0, alpha: float = 0.05):
    """
    maximize sum(x) s.t. P[sum_i xi_ij^2 x_i^2 <= U for all j] >= 1 - alpha, x >= 0.

    The joint constraint enters as c1(x, xi) = max_j (sum_i xi_ij^2 x_i^2 - U).
    """
    if n < 1 or m < 1:
        raise ConfigurationError(f"jointChance needs n >= 1 and m >= 1, got n={n}, m={m}")
    if not U > 0.0:
        raise ConfigurationError(f"jointChance bound U must be > 0, got {U}")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")

    def rows(x, s):
        return np.einsum("kij,i->kj", s ** 2, x ** 2)

    def values(x, s):
        return rows(x, s).max(axis=1) - U

    def multi(X, s):
        return np.einsum("kij,pi->kjp", s ** 2, X ** 2).max(axis=1) - U

    def gradients(x, s):
        sq = s ** 2
        # argmax returns the lowest j on ties
        worst = np.argmax(rows(x, s), axis=1)
        return 2.0 * sq[np.arange(s.shape[0]), :, worst] * x

    problem = ProblemSpec(
        name="jointchance",
        n=n,
        objective=lambda x: -float(np.sum(x)),
        objective_grad=lambda x: -np.ones(n),
        chance=ConstraintEvaluator(values=values, gradients=gradients, multi=multi),
        alpha=alpha,
        x0=np.full(n, 0.5),
        dist=DistributionSpec.joint_chance(n, m),
        det_constraints=lambda x: -x,
        det_jacobian=lambda x: -np.eye(n),
        n_det=n,
        report_sign=-1.0,
    )
    return problem, OracleBundle(provenance="no analytic oracle; empirical only")
