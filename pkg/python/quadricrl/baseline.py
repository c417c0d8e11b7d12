"""Gaussian average-case root counts

Closed forms for systems with i.i.d. Gaussian factors. Every Gamma and power
term is evaluated in log space; n^2 exponents overflow doubles near n = 20.
"""

import math

from scipy.special import gammaln

from .errors import DomainError
from .types import BaselineReport

# c_1 in E N ~ c_1 n^{-1/2} 2^{n/2}
ASYMPTOTIC_CONSTANT = math.sqrt(2.0) * math.exp(0.5) / math.sqrt(math.pi)

_LOG_PI = math.log(math.pi)
_LOG_2 = math.log(2.0)


def _require(n: int, minimum: int) -> None:
    if n < minimum:
        raise DomainError(f"n must be at least {minimum}, got {n}")


def expected_root_count(n: int) -> float:
    """n^{-1/2} 2^{(n+1)/2} e^{1/2} / sqrt(pi)"""
    _require(n, 2)
    log_value = -0.5 * math.log(n) + 0.5 * (n + 1) * _LOG_2 + 0.5 - 0.5 * _LOG_PI
    return math.exp(log_value)


def expected_absdet_projected(n: int) -> float:
    """2^{(n-2)/2} Gamma((n-1)/2) / sqrt(pi)

    Equal to E|det G| for an (n-2) x (n-2) standard Gaussian matrix G, the
    square block that survives projecting away the all-ones direction and the
    conditioned coordinate.
    """
    _require(n, 2)
    return math.exp(0.5 * (n - 2) * _LOG_2 + float(gammaln(0.5 * (n - 1))) - 0.5 * _LOG_PI)


def gaussian_tail_moment(n: int) -> float:
    """log of int_0^inf u^{n^2-n} e^{-n u^2 / 2} du"""
    _require(n, 2)
    m = n * n - n
    return 0.5 * (m - 1) * _LOG_2 - 0.5 * (m + 1) * math.log(n) + float(gammaln(0.5 * (m + 1)))


def log_sphere_area(n: int, shifted_exponent: bool = False) -> float:
    _require(n, 1)
    exponent = 0.5 * (n - 1) if shifted_exponent else 0.5 * n
    return _LOG_2 + exponent * _LOG_PI - float(gammaln(0.5 * n))


def sphere_area(n: int, shifted_exponent: bool = False) -> float:
    """Area of the unit sphere S^{n-1} in R^n, 2 pi^{n/2} / Gamma(n/2)

    ``shifted_exponent`` switches to the variant with pi^{(n-1)/2}.
    """
    return math.exp(log_sphere_area(n, shifted_exponent))


def proposition_constant(n: int) -> float:
    """pi^{(n-2)/2} 2^{(3n+1)/2}, the prefactor of the tail-moment form"""
    _require(n, 2)
    return math.exp(0.5 * (n - 2) * _LOG_PI + 0.5 * (3 * n + 1) * _LOG_2)


def log_expected_root_count_prestirling(n: int) -> float:
    _require(n, 2)
    m = n * n - n + 1
    return (
        0.5 * (n - 2) * _LOG_PI
        + n * _LOG_2
        - n * float(gammaln(0.5 * n))
        - 0.5 * m * math.log(n)
        + float(gammaln(0.5 * m))
    )


def expected_root_count_prestirling(n: int) -> float:
    """pi^{(n-2)/2} 2^n Gamma(n/2)^{-n} n^{-(n^2-n+1)/2} Gamma((n^2-n+1)/2)

    The count before Stirling's approximation is applied.
    """
    return math.exp(log_expected_root_count_prestirling(n))


def baseline_report(n: int, shifted_exponent: bool = False) -> BaselineReport:
    return BaselineReport(
        n=n,
        expected_count=expected_root_count(n),
        absdet_projected=expected_absdet_projected(n),
        sphere_area=sphere_area(n, shifted_exponent),
        gaussian_tail_moment=gaussian_tail_moment(n),
        expected_count_prestirling=expected_root_count_prestirling(n),
        proposition_constant=proposition_constant(n),
    )


__all__ = [
    "ASYMPTOTIC_CONSTANT",
    "expected_root_count",
    "expected_absdet_projected",
    "gaussian_tail_moment",
    "log_sphere_area",
    "sphere_area",
    "proposition_constant",
    "log_expected_root_count_prestirling",
    "expected_root_count_prestirling",
    "baseline_report",
]
