# sampling.py
"""
Seeded scenario generation for the benchmark distributions.

Exports:
- DistributionSpec: independent Gaussian or the correlated joint-chance family
- SampleBatch: N scenario draws plus the (seed, N) that reproduce them
- draw_batch(dist, N, seed) / draw_joint_chance_batch(n, m, N, seed)
- derive_seed(master, *keys): reproducible sub-seeds for outer/inner iterations

Every batch is a pure function of (dist, N, seed). Draws go through numpy's
PCG64 generator seeded by a SeedSequence, so sub-streams derived with
`derive_seed` never overlap and can be regenerated independently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger(__name__)

INDEPENDENT_GAUSSIAN = "independent-gaussian"
JOINT_CHANCE = "joint-chance-correlated"

_SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, *keys: int) -> int:
    """
    Map a master seed and an integer key path to a 64-bit seed.

    Keys used by the solver:
      (k, 0, j)  growth-mode inner batch j of outer iteration k
      (k, 1)     scenario set drawn at outer iteration k (inner solve and multiplier update)
      (0, 2)     out-of-sample validation batch
    """
    seq = np.random.SeedSequence(entropy=int(master) & _SEED_MASK,
                                 spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & _SEED_MASK)))


@dataclass(frozen=True)
class DistributionSpec:
    """
    Scenario distribution.

    kind == "independent-gaussian": xi_i ~ N(means[i], variances[i]), independent.
    kind == "joint-chance-correlated": n x m matrix with xi_ij = j/m + sqrt(0.5)(W_j + V_ij).
    """
    kind: str
    means: tuple[float, ...] = ()
    variances: tuple[float, ...] = ()
    n: int = 0
    m: int = 0

    def __post_init__(self):
        if self.kind == INDEPENDENT_GAUSSIAN:
            if len(self.means) == 0 or len(self.means) != len(self.variances):
                raise ConfigurationError(
                    "independent-gaussian needs matching, nonempty means and variances")
            variances = np.asarray(self.variances, dtype=float)
            if not np.all(np.isfinite(variances)) or np.any(variances <= 0.0):
                raise ConfigurationError(
                    f"variances must be strictly positive, got {list(self.variances)}")
            if not np.all(np.isfinite(self.means)):
                raise ConfigurationError("means must be finite")
        elif self.kind == JOINT_CHANCE:
            if self.n < 1 or self.m < 1:
                raise ConfigurationError(f"joint-chance needs n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        else:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def independent_gaussian(cls, means, variances) -> "DistributionSpec":
        return cls(kind=INDEPENDENT_GAUSSIAN,
                   means=tuple(float(v) for v in np.ravel(means)),
                   variances=tuple(float(v) for v in np.ravel(variances)))

    @classmethod
    def joint_chance(cls, n: int, m: int) -> "DistributionSpec":
        return cls(kind=JOINT_CHANCE, n=int(n), m=int(m))

    @property
    def event_shape(self) -> tuple[int, ...]:
        if self.kind == JOINT_CHANCE:
            return (self.n, self.m)
        return (len(self.means),)

    @property
    def dimension(self) -> int:
        return int(np.prod(self.event_shape))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """N i.i.d. scenarios; `scenarios[k]` is scenario k with shape dist.event_shape."""
    scenarios: np.ndarray = field(repr=False)
    seed: int
    dist: DistributionSpec | None = None

    @property
    def N(self) -> int:
        return int(self.scenarios.shape[0])

    def __len__(self) -> int:
        return self.N


def _check_count(N: int) -> int:
    if int(N) != N or N < 1:
        raise ConfigurationError(f"sample size N must be a positive integer, got {N}")
    return int(N)


def draw_batch(dist: DistributionSpec, N: int, seed: int) -> SampleBatch:
    N = _check_count(N)
    if dist.kind == JOINT_CHANCE:
        return draw_joint_chance_batch(dist.n, dist.m, N, seed)

    rng = _rng(seed)
    means = np.asarray(dist.means, dtype=float)
    scale = np.sqrt(np.asarray(dist.variances, dtype=float))
    scenarios = means + scale * rng.standard_normal((N, means.size))
    logger.debug("drew %d independent-gaussian scenarios (dim %d, seed %d)", N, means.size, seed)
    return SampleBatch(scenarios=scenarios, seed=int(seed), dist=dist)


def draw_joint_chance_batch(n: int, m: int, N: int, seed: int) -> SampleBatch:
    """
    Scenarios of shape (N, n, m): xi_ij = j/m + sqrt(0.5) * (W_j + V_ij).

    W_j is shared by every row i of column j, so var(xi_ij) = 1,
    cov(xi_ij, xi_i'j) = 0.5 and columns are independent.
    """
    dist = DistributionSpec.joint_chance(n, m)
    N = _check_count(N)
    rng = _rng(seed)
    shared = rng.standard_normal((N, 1, m))
    own = rng.standard_normal((N, n, m))
    column_means = np.arange(1, m + 1, dtype=float) / m
    scenarios = column_means + np.sqrt(0.5) * (shared + own)
    logger.debug("drew %d joint-chance scenarios (n=%d, m=%d, seed %d)", N, n, m, seed)
    return SampleBatch(scenarios=scenarios, seed=int(seed), dist=dist)


def point_mass_batch(point, N: int = 1, seed: int = 0) -> SampleBatch:
    """Degenerate batch: N copies of one scenario (deterministic problems, tests)."""
    N = _check_count(N)
    point = np.atleast_1d(np.asarray(point, dtype=float))
    scenarios = np.broadcast_to(point, (N,) + point.shape).copy()
    return SampleBatch(scenarios=scenarios, seed=int(seed), dist=None)
