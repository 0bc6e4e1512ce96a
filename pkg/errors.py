# errors.py
"""
Exception hierarchy shared by the solver modules and the CLI.

The CLI maps every QcpError subclass to an exit code with `exit_code_for`.
"""

from __future__ import annotations

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3


class QcpError(Exception):
    """Base class for every error raised by this project."""


class ConfigurationError(QcpError, ValueError):
    """Invalid parameters, config keys or CLI usage."""


class EvaluationError(QcpError, ArithmeticError):
    """A constraint evaluation produced a non-finite value."""

    def __init__(self, message: str, scenario_index: int | None = None):
        super().__init__(message)
        self.scenario_index = scenario_index


class DegenerateBandwidthError(QcpError, RuntimeError):
    """No scenario fell inside the smoothing window around the quantile."""


class OracleMismatchError(QcpError, RuntimeError):
    """An analytic quantile oracle disagrees with its Monte-Carlo estimate."""


class SubproblemContractError(QcpError, RuntimeError):
    """A trust-region step failed the fraction-of-Cauchy decrease check."""


class InnerSolveError(QcpError, RuntimeError):
    """The inner trust-region solve failed; `partial` holds the outer state so far."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigurationError):
        return EXIT_USAGE
    return EXIT_SOLVER
