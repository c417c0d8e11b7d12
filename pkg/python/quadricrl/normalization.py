"""Log-det scaling of a quadric system to unit-trace, identity-sum form

Given grams Q_1..Q_n, minimize f(t) = ln det(sum_i e^{t_i} Q_i) on the plane
sum_i t_i = 0 (t_n is eliminated as -sum_{j<n} t_j). At the minimizer t*,
S* = sum_i e^{t_i*} Q_i and Z = S*^{-1/2} make the matrices
T_i = e^{t_i*} Z^T Q_i Z trace-one with sum_i T_i = I.

The original system ||A_i x||^2 = r_i is then rewritten as
||C_i u||^2 = c_i with C_i = A_i Z / ||A_i Z||_F and x = Z (g / sqrt(n)) u.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .config import ScalingOptions
from .errors import ConvergenceError, DegenerateSystemError, DimensionMismatchError, DomainError
from .quadric import GramSystem, QuadricSystem, gram

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 30


def _full_weights(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.exp(np.append(t, -t.sum()))


def _factor_weighted_sum(t: np.ndarray, grams: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, bool], np.ndarray]:
    weights = _full_weights(t)
    if not np.all(np.isfinite(weights)):
        raise DegenerateSystemError("scaling weights overflowed")
    s = np.einsum("i,iab->ab", weights, grams)
    try:
        factor = scipy.linalg.cho_factor(s, lower=True)
    except np.linalg.LinAlgError as e:
        raise DegenerateSystemError("weighted gram sum is not positive-definite") from e
    return s, factor, weights


def _check_t(t: np.ndarray, grams: GramSystem) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (grams.dim - 1,):
        raise DimensionMismatchError(f"t must have length {grams.dim - 1}, got shape {t.shape}")
    return t


def scaling_objective(t: np.ndarray, grams: GramSystem) -> Tuple[float, np.ndarray]:
    """ln det S and its gradient Trace(S^{-1}(e^{t_j} Q_j - E_n)) in t_1..t_{n-1}"""
    t = _check_t(t, grams)
    q = grams.grams
    _, factor, weights = _factor_weighted_sum(t, q)
    value = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))

    s_inv = scipy.linalg.cho_solve(factor, np.eye(grams.dim))
    traces = weights * np.einsum("ab,iba->i", s_inv, q)
    gradient = traces[:-1] - traces[-1]
    return value, gradient


def scaling_hessian(t: np.ndarray, grams: GramSystem) -> np.ndarray:
    """Exact Hessian of ``scaling_objective`` in t_1..t_{n-1}

    With D_j = e^{t_j} Q_j - E_n and E_n = e^{t_n} Q_n:
        H_ij = -Trace(S^{-1} D_i S^{-1} D_j) + Trace(S^{-1} E_n)
               + [i == j] Trace(S^{-1} e^{t_i} Q_i)
    """
    t = _check_t(t, grams)
    q = grams.grams
    _, factor, weights = _factor_weighted_sum(t, q)
    s_inv = scipy.linalg.cho_solve(factor, np.eye(grams.dim))

    scaled = weights[:, None, None] * q
    tail = scaled[-1]
    directions = scaled[:-1] - tail
    products = np.einsum("ab,jbc->jac", s_inv, directions)

    hessian = -np.einsum("iab,jba->ij", products, products)
    hessian += np.trace(s_inv @ tail)
    hessian += np.diag(np.einsum("ab,iba->i", s_inv, scaled[:-1]))
    return 0.5 * (hessian + hessian.T)


@dataclass(frozen=True)
class CorrectorOutcome:
    t: np.ndarray
    steps_taken: int
    failed: bool


def newton_corrector(t: np.ndarray, grams: GramSystem, steps: int) -> CorrectorOutcome:
    """Damped Newton polish of a quasi-Newton minimizer

    Returns the corrected t only if f decreased over the run; any step that
    fails to decrease f, leaves the PD cone or cannot factor the Hessian
    flags the run as failed and restores the input.
    """
    t0 = _check_t(t, grams).copy()
    if steps <= 0:
        return CorrectorOutcome(t0, 0, False)

    current = t0.copy()
    value, gradient = scaling_objective(current, grams)
    start_value = value

    for step in range(steps):
        try:
            hessian = scaling_hessian(current, grams)
            direction = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(hessian), gradient)
        except (np.linalg.LinAlgError, DegenerateSystemError) as e:
            logger.warning("Newton corrector stopped at step %d: %s", step + 1, e)
            return CorrectorOutcome(t0, step, True)

        slope = float(gradient @ direction)
        step_size = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = current + step_size * direction
            try:
                candidate_value, candidate_gradient = scaling_objective(candidate, grams)
            except DegenerateSystemError:
                step_size *= ARMIJO_SHRINK
                continue
            if candidate_value <= value + ARMIJO_C * step_size * slope and candidate_value < value:
                break
            step_size *= ARMIJO_SHRINK
        else:
            logger.debug("Newton corrector found no decrease at step %d", step + 1)
            return CorrectorOutcome(t0, step, True)

        current, value, gradient = candidate, candidate_value, candidate_gradient

    if not value < start_value:
        return CorrectorOutcome(t0, steps, True)
    return CorrectorOutcome(current, steps, False)


@dataclass(frozen=True, eq=False)
class NormalizedSystem:
    """Scaled system ||C_i u||^2 = c_i with basis Z and variable scale g"""

    unit_factors: np.ndarray
    weights: np.ndarray
    basis: np.ndarray
    scale: float
    t: np.ndarray
    trace_distance: float
    summation_distance: float
    iterations: int
    wall_time: float
    gradient_norm: float = 0.0
    corrector_steps: int = 0
    corrector_failed: bool = False

    @property
    def dim(self) -> int:
        return int(self.unit_factors.shape[1])

    def as_system(self) -> QuadricSystem:
        return QuadricSystem(self.unit_factors, self.weights)

    def to_original(self, u: np.ndarray) -> np.ndarray:
        """Map a solution u of the scaled system to x of the original system"""
        return self.basis @ (self.scale / np.sqrt(self.dim) * np.asarray(u, dtype=np.float64))

    def from_original(self, x: np.ndarray) -> np.ndarray:
        y = np.linalg.solve(self.basis, np.asarray(x, dtype=np.float64))
        return y * np.sqrt(self.dim) / self.scale

    def __repr__(self) -> str:
        return (
            f"NormalizedSystem(dim={self.dim}, trace_distance={self.trace_distance:.3g}, "
            f"summation_distance={self.summation_distance:.3g}, iterations={self.iterations})"
        )


def _basis_from_sum(s: np.ndarray, floor: float) -> np.ndarray:
    eigenvalues, vectors = scipy.linalg.eigh(s)
    top = eigenvalues[-1]
    if top <= 0 or eigenvalues[0] < floor * top:
        raise DegenerateSystemError(
            f"weighted gram sum is numerically singular (eigenvalue ratio {eigenvalues[0] / max(top, 1e-300):.3g})"
        )
    return (vectors / np.sqrt(eigenvalues)) @ vectors.T


def finalize(
    system: QuadricSystem,
    grams: GramSystem,
    t: np.ndarray,
    eigenvalue_floor: float = 1e-14,
) -> Dict[str, Any]:
    """Basis, unit factors, weights and accuracy diagnostics for a given t"""
    n = system.dim
    weights_t = _full_weights(t)
    s = np.einsum("i,iab->ab", weights_t, grams.grams)
    basis = _basis_from_sum(s, eigenvalue_floor)

    images = system.factors @ basis
    norms_sq = np.einsum("kab,kab->k", images, images)
    if np.any(norms_sq <= 0):
        raise DegenerateSystemError("a transformed factor vanished")
    ratios = system.rhs / norms_sq
    scale = float(np.sqrt(ratios.sum()))
    weights = n * ratios / ratios.sum()
    unit_factors = images / np.sqrt(norms_sq)[:, None, None]

    transformed = weights_t[:, None, None] * np.einsum("ab,kbc,cd->kad", basis.T, grams.grams, basis)
    traces = np.einsum("kaa->k", transformed)
    traces = traces * (n / traces.sum())
    trace_distance = float(np.linalg.norm(traces - 1.0))

    summed = np.einsum("kai,kaj->ij", unit_factors, unit_factors)
    summation_distance = float(np.linalg.norm(summed - np.eye(n)))

    return {
        "unit_factors": unit_factors,
        "weights": weights,
        "basis": basis,
        "scale": scale,
        "trace_distance": trace_distance,
        "summation_distance": summation_distance,
    }


def normalize(system: QuadricSystem, opts: Optional[ScalingOptions] = None) -> NormalizedSystem:
    """Minimize the scaling objective by BFGS and build the normalized system"""
    opts = opts or ScalingOptions()
    started = time.perf_counter()
    n = system.dim
    grams = gram(system)

    if opts.initial_t is not None:
        t0 = np.asarray(opts.initial_t, dtype=np.float64)
        if t0.shape != (n - 1,):
            raise DimensionMismatchError(f"initial_t must have length {n - 1}, got {t0.shape}")
    else:
        t0 = np.zeros(n - 1)

    iterations = 0
    gradient_norm = 0.0
    t_star = t0
    if n > 1:
        best: Dict[str, Any] = {"value": np.inf, "t": t0.copy()}

        def objective(t: np.ndarray) -> Tuple[float, np.ndarray]:
            value, gradient = scaling_objective(t, grams)
            if value < best["value"]:
                best["value"], best["t"] = value, np.array(t)
            return value, gradient

        result = minimize(
            objective,
            t0,
            jac=True,
            method="BFGS",
            options={"gtol": opts.gradient_tolerance, "maxiter": opts.max_iterations, "norm": np.inf},
        )
        iterations = int(result.nit)
        gradient_norm = float(np.max(np.abs(result.jac)))
        t_star = np.asarray(result.x, dtype=np.float64)

        if not result.success:
            if gradient_norm <= opts.accept_gradient:
                logger.warning(
                    "BFGS stopped early (%s); accepting iterate with gradient %.2e", result.message, gradient_norm
                )
            else:
                raise ConvergenceError(
                    f"scaling did not converge in {iterations} iterations: {result.message}",
                    best_t=best["t"],
                    gradient_norm=gradient_norm,
                    iterations=iterations,
                )

    corrector_failed = False
    if opts.corrector_steps > 0 and n > 1:
        outcome = newton_corrector(t_star, grams, opts.corrector_steps)
        corrector_failed = outcome.failed
        if outcome.failed:
            logger.info("Newton corrector did not improve the scaling")
        else:
            t_star = outcome.t
            gradient_norm = float(np.max(np.abs(scaling_objective(t_star, grams)[1])))

    parts = finalize(system, grams, t_star, opts.eigenvalue_floor)
    normalized = NormalizedSystem(
        t=t_star,
        iterations=iterations,
        wall_time=time.perf_counter() - started,
        gradient_norm=gradient_norm,
        corrector_steps=opts.corrector_steps,
        corrector_failed=corrector_failed,
        **parts,
    )
    logger.debug("normalized: %r", normalized)
    return normalized


def normalized_to_dict(normalized: NormalizedSystem) -> Dict[str, Any]:
    data = asdict(normalized)
    for key in ("unit_factors", "weights", "basis", "t"):
        data[key] = np.asarray(data[key]).tolist()
    data["dim"] = normalized.dim
    return data


def normalized_from_dict(data: Dict[str, Any]) -> NormalizedSystem:
    data = dict(data)
    data.pop("dim", None)
    try:
        arrays = {key: np.asarray(data.pop(key), dtype=np.float64) for key in ("unit_factors", "weights", "basis", "t")}
    except KeyError as e:
        raise DomainError(f"normalized JSON is missing field {e}") from e
    return NormalizedSystem(**arrays, **data)


def save_normalized(normalized: NormalizedSystem, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(normalized_to_dict(normalized), f)


def load_normalized(path: Union[str, Path]) -> NormalizedSystem:
    with open(path, "r") as f:
        return normalized_from_dict(json.load(f))


__all__ = [
    "scaling_objective",
    "scaling_hessian",
    "newton_corrector",
    "CorrectorOutcome",
    "NormalizedSystem",
    "finalize",
    "normalize",
    "normalized_to_dict",
    "normalized_from_dict",
    "save_normalized",
    "load_normalized",
]
