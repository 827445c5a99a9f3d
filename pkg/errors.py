"""Exception hierarchy shared by the numerical modules and the CLI.

The CLI maps ``ParameterError`` to exit status 2 and every other
``MittagLabError`` to exit status 1.
"""

from typing import Any, Optional


class MittagLabError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, *, module: Optional[str] = None):
        self.module = module
        super().__init__(f"{module}: {message}" if module else message)


class ParameterError(MittagLabError, ValueError):
    """Inputs outside the supported parameter class."""


class PoleError(ParameterError):
    """Gamma function evaluated at a non-positive integer."""


class SingularityError(ParameterError):
    """Closed form evaluated at one of its singular points."""


class GridError(ParameterError):
    """Sampled grid unsuitable for the requested operator."""


class DomainError(ParameterError):
    """Argument outside the domain where a formula is holomorphic."""


class NumericalError(MittagLabError):
    """A computation ran but could not deliver the requested accuracy."""


class AccuracyLossError(NumericalError):
    """No evaluation regime met the tolerance.

    Carries the best value found and its error estimate so callers may
    decide to accept it anyway.
    """

    def __init__(self, message: str, *, value: Any = None, error_estimate: float = float("inf"),
                 module: Optional[str] = None):
        self.value = value
        self.error_estimate = error_estimate
        super().__init__(f"{message} (best value {value!r}, estimate {error_estimate:.3e})", module=module)


class DivergenceError(NumericalError):
    """Series terms did not decay within the term budget."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge."""


class CovarianceError(NumericalError):
    """Gram matrix not positive semidefinite even after jitter."""
