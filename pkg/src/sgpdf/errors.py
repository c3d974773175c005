"""Exception hierarchy.

Each class carries an ``exit_code`` used by the command-line front end.
"""


class SGPDFError(Exception):
    exit_code = 1


class ConfigurationError(SGPDFError, ValueError):
    exit_code = 2


class DimensionError(SGPDFError, ValueError):
    exit_code = 2


class NumericalError(SGPDFError, ArithmeticError):
    exit_code = 3


class CoercivityError(NumericalError):
    """Coefficient is not bounded away from zero at some quadrature point."""


class SolverError(NumericalError):
    """A linear or eigen solver failed; ``residual`` holds the last residual."""

    def __init__(self, message, residual=None, sample_index=None):
        super().__init__(message)
        self.residual = residual
        self.sample_index = sample_index


class DegenerateDistributionError(NumericalError):
    """Zero-variance input where a standardized quantity is required."""


class UnsupportedQoIError(SGPDFError, ValueError):
    exit_code = 2
