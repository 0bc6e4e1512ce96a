# settings.py
"""
Flat key-value configuration.

Sources, lowest to highest precedence:
  built-in defaults < config file (dotenv syntax) < QCP_* environment variables < CLI overrides

The config file is `path` if given, else the file named by QCP_CONFIG. A
commented example lives in templates/solver.env.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from dotenv import dotenv_values

from alm import AlmConfig, Schedule
from errors import ConfigurationError
from trust_region import TrustRegionConfig

logger = logging.getLogger(__name__)

PREFIX = "QCP_"
CONFIG_ENV = "QCP_CONFIG"
# smallest r^k a shrinking schedule may reach
R_FLOOR = 1e-10


@dataclass(frozen=True)
class Settings:
    gamma_inc: float = 2.0
    gamma_dec: float = 0.5
    eta1: float = 0.1
    eta2: float = 0.25
    r0: float = 0.5
    delta0: float = 0.1
    beta: float = 1e-3
    beta_mode: str = "constant"
    sample_mode: str = "fixed"
    n0: int = 100
    r_term: float = 1e-5
    eta_tol: float = 1e-5
    schedule_factor: float = 1.0
    theta_rho: float = 2.0
    theta_r: float = 0.5
    theta_mu: float = 0.5
    epsilon: float = 0.1
    mu_max: float = 1e4
    rho0: float = 10.0
    rho_max: float = math.inf
    max_outer: int = 50
    max_inner: int = 10_000
    stall_tol: float = 1e-6
    hessian_points: int = 0
    smoothing_eps: float | None = None
    joint_u: float = 100.0
    joint_m: int = 5
    spread: str = "variance"
    n_val: int = 100_000
    replications: int = 3
    workers: int = 1
    debug_checks: bool = False
    log_level: str = "INFO"

    def trust_region(self, sample_size: int = 10_000, gradient_method: str = "fd") -> TrustRegionConfig:
        return TrustRegionConfig(
            eta1=self.eta1, eta2=self.eta2, gamma_inc=self.gamma_inc, gamma_dec=self.gamma_dec,
            r0=self.r0, delta0=self.delta0, beta=self.beta, beta_mode=self.beta_mode,
            sample_size=sample_size, sample_mode=self.sample_mode, n0=self.n0,
            max_iterations=self.max_inner, gradient_method=gradient_method,
            smoothing_epsilon=self.smoothing_eps, hessian_points=self.hessian_points,
            debug_checks=self.debug_checks,
        )

    def alm(self, seed: int = 0, sample_size: int = 10_000, gradient_method: str = "fd") -> AlmConfig:
        shrinking = self.schedule_factor < 1.0
        return AlmConfig(
            theta_rho=self.theta_rho, mu_max=self.mu_max, rho0=self.rho0, rho_max=self.rho_max,
            r_schedule=Schedule(self.r_term, self.schedule_factor, R_FLOOR if shrinking else 0.0),
            eta_schedule=Schedule(self.eta_tol, self.schedule_factor),
            n_schedule=Schedule(sample_size),
            max_outer=self.max_outer, stall_tol=self.stall_tol, epsilon=self.epsilon,
            theta_r=self.theta_r, theta_mu=self.theta_mu,
            trust_region=self.trust_region(sample_size, gradient_method), seed=seed,
        )

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no", ""):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int(raw) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"not an integer: {raw!r}")
    return int(value)


def _parse_optional_float(raw) -> float | None:
    if raw is None or str(raw).strip() == "":
        return None
    return float(raw)


def _choice(*allowed: str) -> Callable[[Any], str]:
    def parse(raw) -> str:
        text = str(raw).strip()
        if text not in allowed:
            raise ValueError(f"expected one of {allowed}, got {raw!r}")
        return text
    return parse


_PARSERS: dict[str, Callable[[Any], Any]] = {
    "beta_mode": _choice("constant", "radius"),
    "sample_mode": _choice("fixed", "growth"),
    "spread": _choice("variance", "std"),
    "log_level": lambda raw: _choice("DEBUG", "INFO", "WARNING", "ERROR")(str(raw).upper()),
    "smoothing_eps": _parse_optional_float,
    "debug_checks": _parse_bool,
}
for _field in fields(Settings):
    if _field.name not in _PARSERS:
        _PARSERS[_field.name] = _parse_int if _field.type == "int" else float

_POSITIVE = {"gamma_inc", "gamma_dec", "eta1", "eta2", "r0", "delta0", "beta", "n0", "r_term",
             "eta_tol", "schedule_factor", "theta_rho", "mu_max", "rho0", "rho_max", "max_outer",
             "max_inner", "joint_u", "joint_m", "n_val", "replications", "workers"}


def _attr_for(key: str) -> str:
    name = key[len(PREFIX):] if key.upper().startswith(PREFIX) else key
    return name.lower().replace("-", "_")


def _apply(values: dict[str, Any], source: Mapping[str, Any], origin: str, strict: bool) -> None:
    for key, raw in source.items():
        if raw is None:
            continue
        attr = _attr_for(key)
        if attr not in _PARSERS:
            if strict:
                raise ConfigurationError(f"unknown configuration key {key!r} in {origin}")
            logger.warning("ignoring unknown key %s from %s", key, origin)
            continue
        try:
            value = _PARSERS[attr](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{PREFIX}{attr.upper()} from {origin}: {exc}") from exc
        if attr in _POSITIVE and not value > 0:
            raise ConfigurationError(f"{PREFIX}{attr.upper()} from {origin} must be > 0, got {value}")
        values[attr] = value


def load_settings(path: str | os.PathLike | None = None, overrides: Mapping[str, Any] | None = None,
                  environ: Mapping[str, str] | None = None) -> Settings:
    """Merge defaults, file, environment and overrides into one Settings value."""
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}

    path = path or environ.get(CONFIG_ENV)
    if path:
        file = Path(path)
        if not file.is_file():
            raise ConfigurationError(f"config file not found: {file}")
        _apply(values, dotenv_values(file), str(file), strict=True)

    env = {k: v for k, v in environ.items() if k.upper().startswith(PREFIX) and k.upper() != CONFIG_ENV}
    _apply(values, env, "environment", strict=False)
    _apply(values, overrides or {}, "command line", strict=True)

    settings = replace(Settings(), **values)
    # build once so range errors surface at load time
    settings.alm()
    return settings
