"""Exception hierarchy; each class carries the CLI exit code it maps to"""

from typing import Optional

import numpy as np


class QuadricError(Exception):
    """Base class for every error raised by quadricrl"""

    exit_code = 1


# Validation failures (exit 2)


class ConfigurationError(QuadricError):
    exit_code = 2


class DimensionMismatchError(QuadricError):
    exit_code = 2


class DomainError(QuadricError):
    exit_code = 2


class DisconnectedNetworkError(QuadricError):
    exit_code = 2


class DuplicateEdgeError(QuadricError):
    exit_code = 2


# Numerical failures (exit 3)


class NumericalError(QuadricError):
    exit_code = 3


class DegenerateSystemError(NumericalError):
    """The scaling objective is undefined: Σ e^{t_i} Q_i is not positive-definite"""


class ConvergenceError(NumericalError):
    """Quasi-Newton scaling stopped without meeting the gradient tolerance"""

    def __init__(
        self,
        message: str,
        best_t: Optional[np.ndarray] = None,
        gradient_norm: float = float("nan"),
        iterations: int = 0,
    ):
        super().__init__(message)
        self.best_t = best_t
        self.gradient_norm = gradient_norm
        self.iterations = iterations


class DefinitenessError(NumericalError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class RankError(NumericalError):
    pass


class SamplingAnomalyError(NumericalError):
    pass


class PivotDegeneracyError(NumericalError):
    pass


class EstimationFailedError(NumericalError):
    pass


# Refusals (exit 4)


class OracleRefusalError(QuadricError):
    exit_code = 4


__all__ = [
    "QuadricError",
    "ConfigurationError",
    "DimensionMismatchError",
    "DomainError",
    "DisconnectedNetworkError",
    "DuplicateEdgeError",
    "NumericalError",
    "DegenerateSystemError",
    "ConvergenceError",
    "DefinitenessError",
    "RankError",
    "SamplingAnomalyError",
    "PivotDegeneracyError",
    "EstimationFailedError",
    "OracleRefusalError",
]
