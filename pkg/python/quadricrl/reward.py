"""Monte-Carlo Kac-Rice reward for a normalized system

The normalized system ||C_i u||^2 = c_i is perturbed as A_i = C_i + delta X_i
with Gaussian X_i. For each of M perturbation tuples and N annulus points x,
one diagonal gram entry per equation (at the pivot coordinate i of x) is
replaced so that x solves the perturbed system exactly. The estimate averages
|det D_x G| times the Gaussian density ratio of that replacement.

The result is a score proportional to the expected real-solution count of the
perturbed system; it is not calibrated to an absolute count.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .config import RewardConfig, ScalingOptions
from .errors import (
    DegenerateSystemError,
    DimensionMismatchError,
    DomainError,
    EstimationFailedError,
    PivotDegeneracyError,
    SamplingAnomalyError,
)
from .normalization import NormalizedSystem, normalize
from .parallel import chunk_bounds, chunked_map, pairwise_sum
from .quadric import QuadricSystem
from .types import RewardEstimate

logger = logging.getLogger(__name__)

PIVOT_GUARD = 1e-6
MIN_ACCEPTANCE = 0.5
DRAW_BUDGET_FACTOR = 10

POINT_STREAM = 0
TUPLE_STREAM = 1


def annulus_bounds(radius: float, epsilon: float) -> Tuple[float, float]:
    """(1 - eps) R <= ||x|| <= R / (1 - eps); eps >= 1 leaves only ||x|| >= 0"""
    if epsilon >= 1.0:
        return 0.0, math.inf
    return (1.0 - epsilon) * radius, radius / (1.0 - epsilon)


def sample_annulus(
    n: int,
    count: int,
    epsilon: float,
    rng: np.random.Generator,
    radius: Optional[float] = None,
) -> Tuple[np.ndarray, int]:
    """``count`` standard Gaussian vectors with norm inside the annulus

    Returns the accepted points (count x n) and the number of rejected draws.
    Raises SamplingAnomalyError when fewer than MIN_ACCEPTANCE of the draws land
    in the annulus or the draw budget runs out first.
    """
    if epsilon < 4.0 / math.sqrt(n) - 1e-12:
        raise DomainError(f"epsilon {epsilon:.4g} is below 4/sqrt(n) = {4.0 / math.sqrt(n):.4g}")
    lower, upper = annulus_bounds(math.sqrt(n) if radius is None else radius, epsilon)

    budget = DRAW_BUDGET_FACTOR * count
    accepted = []
    n_accepted = 0
    rejected = 0
    draws = 0
    while n_accepted < count and draws < budget:
        batch = min(budget - draws, max(16, int(1.1 * (count - n_accepted)) + 16))
        points = rng.standard_normal((batch, n))
        norms = np.linalg.norm(points, axis=1)
        inside = np.flatnonzero((norms >= lower) & (norms <= upper))
        needed = count - n_accepted
        if inside.size >= needed:
            # draws after the count-th acceptance are not tallied
            used = int(inside[needed - 1]) + 1
            inside = inside[:needed]
        else:
            used = batch
        accepted.append(points[inside])
        n_accepted += inside.size
        rejected += used - inside.size
        draws += used

    rate = n_accepted / max(draws, 1)
    if n_accepted < count or rate < MIN_ACCEPTANCE:
        raise SamplingAnomalyError(
            f"annulus acceptance {rate:.3f} after {draws} draws "
            f"is below {MIN_ACCEPTANCE} (n={n}, epsilon={epsilon:.3g})"
        )
    return np.concatenate(accepted), rejected


def select_pivots(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pivot index per row and a mask of rows that fell back to argmax |x_j|

    The pivot is the coordinate whose magnitude is the median of
    {|x_j| : x_j^2 >= 1/2}; an even-sized set takes the lower middle element
    and ties go to the lowest index.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    magnitudes = np.abs(points)
    eligible = points**2 >= 0.5
    sizes = eligible.sum(axis=1)

    keyed = np.where(eligible, magnitudes, np.inf)
    ordered = np.sort(keyed, axis=1)
    middle = np.maximum((sizes - 1) // 2, 0)
    median = ordered[np.arange(points.shape[0]), middle]
    pivots = np.argmax(eligible & (magnitudes == median[:, None]), axis=1)

    fallback = sizes == 0
    pivots = np.where(fallback, np.argmax(magnitudes, axis=1), pivots)
    return pivots, fallback


def select_pivot(x: np.ndarray) -> int:
    pivots, _ = select_pivots(np.asarray(x, dtype=np.float64)[None, :])
    return int(pivots[0])


def _pivot_value(x: np.ndarray, i: int) -> float:
    xi = float(x[i])
    if abs(xi) < PIVOT_GUARD:
        raise PivotDegeneracyError(f"pivot coordinate {i} has magnitude {abs(xi):.3g} < {PIVOT_GUARD}")
    return xi


def condition_entry(factor: np.ndarray, target: float, x: np.ndarray, i: int) -> float:
    """Gram diagonal entry (i, i) that makes x^T Q x equal ``target``

    g = x_i^{-2} (c - x^T Q x + Q_ii x_i^2) with Q = A^T A.
    """
    x = np.asarray(x, dtype=np.float64)
    xi = _pivot_value(x, i)
    image = factor @ x
    q_ii = float(factor[:, i] @ factor[:, i])
    return (target - float(image @ image) + q_ii * xi**2) / xi**2


def reference_diagonal(unit_factors: np.ndarray) -> np.ndarray:
    """b[j, i] = (C_j^T C_j)_{ii}, the unperturbed gram diagonal

    This is the mean parameter the density ratio is measured against.
    """
    return np.einsum("jai,jai->ji", unit_factors, unit_factors)


def entry_variance(reference: np.ndarray, delta: float, n: int) -> np.ndarray:
    """Variance of (A^T A)_ii for A = C + delta X: 4 delta^2 b + 2 n delta^4"""
    return 4.0 * delta**2 * reference + 2.0 * n * delta**4


def importance_weight(
    factors: np.ndarray,
    unit_factors: np.ndarray,
    weights: np.ndarray,
    x: np.ndarray,
    i: int,
    variance: Optional[np.ndarray] = None,
) -> float:
    """log of prod_j exp(((a_j - b_j)^2 - (g_j - b_j)^2) / 2)

    a_j is the sampled diagonal entry, g_j the conditioned one and b_j the
    reference entry of the unperturbed system. ``variance`` (one value per
    equation) divides each term when given.
    """
    x = np.asarray(x, dtype=np.float64)
    sampled = np.einsum("ja,ja->j", factors[:, :, i], factors[:, :, i])
    conditioned = np.array([condition_entry(a, c, x, i) for a, c in zip(factors, weights)])
    reference = reference_diagonal(unit_factors)[:, i]
    terms = ((sampled - reference) ** 2 - (conditioned - reference) ** 2) / 2.0
    if variance is not None:
        terms = terms / np.asarray(variance, dtype=np.float64)
    return float(terms.sum())


def jacobian_dxG(factors: np.ndarray, weights: np.ndarray, x: np.ndarray, i: int) -> np.ndarray:
    """Jacobian of x -> (g_1(x), ..., g_n(x))

    Row j is -2 x_i^{-2} (Q_j x + (c_j - x^T Q_j x) e_i / x_i).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if factors.shape != (n, n, n) or np.shape(weights) != (n,):
        raise DimensionMismatchError(f"expected {n} factors of shape ({n}, {n}) and {n} weights")
    xi = _pivot_value(x, i)
    grams = np.einsum("jai,jak->jik", factors, factors)
    qx = grams @ x
    residual = np.asarray(weights, dtype=np.float64) - qx @ x
    rows = qx.copy()
    rows[:, i] += residual / xi
    return -2.0 / xi**2 * rows


def _point_block_logs(
    grams: np.ndarray,
    weights: np.ndarray,
    points: np.ndarray,
    pivots: np.ndarray,
    reference: np.ndarray,
    variance: Optional[np.ndarray],
) -> np.ndarray:
    """Log-contribution log|det D_x G| + log p(G(x)) for every point in a block"""
    rows = np.arange(points.shape[0])
    xi = points[rows, pivots]

    qx = np.einsum("jab,pb->pja", grams, points)
    quad = np.einsum("pja,pa->pj", qx, points)
    sampled = np.einsum("jaa->ja", grams)[:, pivots].T
    ref = reference[:, pivots].T

    residual = weights[None, :] - quad
    conditioned = residual / xi[:, None] ** 2 + sampled

    terms = ((sampled - ref) ** 2 - (conditioned - ref) ** 2) / 2.0
    if variance is not None:
        terms = terms / variance[:, pivots].T
    log_weight = terms.sum(axis=1)

    jac = qx
    jac[rows, :, pivots] += residual / xi[:, None]
    jac *= (-2.0 / xi**2)[:, None, None]
    sign, log_det = np.linalg.slogdet(jac)
    contributions = np.where(sign != 0, log_det, -np.inf) + log_weight
    return contributions


def _tuple_log_mean(
    normalized: NormalizedSystem,
    cfg: RewardConfig,
    tuple_index: int,
    points: np.ndarray,
    pivots: np.ndarray,
    reference: np.ndarray,
    variance: Optional[np.ndarray],
) -> Tuple[float, int]:
    """log of the mean contribution over points for one perturbation tuple"""
    n = normalized.dim
    rng = np.random.default_rng([cfg.seed, TUPLE_STREAM, tuple_index])
    factors = normalized.unit_factors + cfg.delta * rng.standard_normal((n, n, n))
    grams = np.einsum("jai,jak->jik", factors, factors)
    weights = np.asarray(normalized.weights)

    block_logs = []
    valid = 0
    for start, stop in chunk_bounds(points.shape[0], cfg.point_chunk):
        logs = _point_block_logs(grams, weights, points[start:stop], pivots[start:stop], reference, variance)
        finite = np.isfinite(logs)
        valid += int(finite.sum())
        block_logs.append(logsumexp(logs[finite]) if finite.any() else -np.inf)

    discarded = points.shape[0] - valid
    if valid == 0:
        return -np.inf, discarded
    total = float(pairwise_sum(block_logs, np.logaddexp))
    return total - math.log(valid), discarded


def _tuple_plain_mean(
    normalized: NormalizedSystem,
    cfg: RewardConfig,
    tuple_index: int,
    points: np.ndarray,
    pivots: np.ndarray,
    reference: np.ndarray,
    variance: Optional[np.ndarray],
) -> Tuple[float, int]:
    n = normalized.dim
    rng = np.random.default_rng([cfg.seed, TUPLE_STREAM, tuple_index])
    factors = normalized.unit_factors + cfg.delta * rng.standard_normal((n, n, n))
    grams = np.einsum("jai,jak->jik", factors, factors)
    weights = np.asarray(normalized.weights)

    sums = []
    valid = 0
    with np.errstate(over="ignore"):
        for start, stop in chunk_bounds(points.shape[0], cfg.point_chunk):
            values = np.exp(
                _point_block_logs(grams, weights, points[start:stop], pivots[start:stop], reference, variance)
            )
            finite = np.isfinite(values)
            if np.any(np.isposinf(values)):
                raise EstimationFailedError("contribution overflowed without log-space accumulation; enable log_space")
            valid += int(finite.sum())
            sums.append(values[finite].sum())
    discarded = points.shape[0] - valid
    if valid == 0:
        return 0.0, discarded
    return float(pairwise_sum(sums)) / valid, discarded


def _check_budget(n: int, cfg: RewardConfig) -> None:
    if cfg.delta > 1.0 / n:
        raise DomainError(f"delta {cfg.delta:.4g} exceeds 1/n = {1.0 / n:.4g}")
    if cfg.num_tuples <= n**2:
        logger.warning("num_tuples=%d is not above n^2=%d; the estimate may be noisy", cfg.num_tuples, n**2)
    if cfg.num_points <= n**4:
        logger.warning("num_points=%d is not above n^4=%d; the estimate may be noisy", cfg.num_points, n**4)


def estimate_reward(normalized: NormalizedSystem, cfg: RewardConfig) -> RewardEstimate:
    """Kac-Rice Monte-Carlo estimate for a normalized system

    Results depend only on (seed, N, M, point_chunk); the worker count changes
    scheduling, not arithmetic.
    """
    n = normalized.dim
    _check_budget(n, cfg)
    epsilon = cfg.resolve_epsilon(n)

    radius = math.sqrt(n)
    if cfg.annulus_center == "perturbed":
        radius = math.sqrt(n / (1.0 + cfg.delta**2 * n))

    point_rng = np.random.default_rng([cfg.seed, POINT_STREAM])
    points, rejected = sample_annulus(n, cfg.num_points, epsilon, point_rng, radius)
    pivots, fallback = select_pivots(points)

    usable = np.abs(points[np.arange(points.shape[0]), pivots]) >= PIVOT_GUARD
    degenerate_points = int((~usable).sum())
    points, pivots = points[usable], pivots[usable]

    reference = reference_diagonal(np.asarray(normalized.unit_factors))
    variance = entry_variance(reference, cfg.delta, n) if cfg.variance_rescale else None
    per_tuple = _tuple_log_mean if cfg.log_space else _tuple_plain_mean

    def run_block(bounds: Tuple[int, int]):
        start, stop = bounds
        return [per_tuple(normalized, cfg, t, points, pivots, reference, variance) for t in range(start, stop)]

    block_size = max(1, cfg.num_tuples // (4 * cfg.workers)) if cfg.workers > 1 else cfg.num_tuples
    blocks = chunked_map(run_block, chunk_bounds(cfg.num_tuples, block_size), workers=cfg.workers)
    outcomes = [outcome for block in blocks for outcome in block]

    discarded = degenerate_points * cfg.num_tuples + sum(d for _, d in outcomes)
    if cfg.log_space:
        finite_logs = [log for log, _ in outcomes if np.isfinite(log)]
        if not finite_logs:
            raise EstimationFailedError("every Monte-Carlo sample was discarded")
        try:
            values = np.array([math.exp(log) if np.isfinite(log) else 0.0 for log, _ in outcomes])
        except OverflowError as e:
            raise EstimationFailedError("tuple estimate overflowed; the system is badly scaled") from e
    else:
        if all(d == points.shape[0] for _, d in outcomes):
            raise EstimationFailedError("every Monte-Carlo sample was discarded")
        values = np.array([v for v, _ in outcomes])

    if not np.all(np.isfinite(values)):
        raise EstimationFailedError("tuple estimate overflowed; the system is badly scaled")

    mean = float(pairwise_sum(list(values))) / cfg.num_tuples
    std_error = float(np.std(values, ddof=1) / math.sqrt(cfg.num_tuples)) if cfg.num_tuples > 1 else 0.0

    if cfg.transform == "log":
        value, reported_error = math.log1p(mean), std_error / (1.0 + mean)
    else:
        value, reported_error = mean, std_error

    return RewardEstimate(
        value=value,
        std_error=reported_error,
        accepted_points=cfg.num_points,
        rejected_points=rejected,
        pivot_fallbacks=int(fallback.sum()),
        discarded_samples=discarded,
        raw_value=mean,
    )


def reward_pipeline(
    system: QuadricSystem,
    cfg: RewardConfig,
    scaling: Optional[ScalingOptions] = None,
) -> RewardEstimate:
    """Normalize then estimate; a degenerate system scores zero"""
    try:
        normalized = normalize(system, scaling)
    except DegenerateSystemError as e:
        logger.info("degenerate system scored zero: %s", e)
        return RewardEstimate.degenerate_zero()
    return estimate_reward(normalized, cfg)


__all__ = [
    "annulus_bounds",
    "sample_annulus",
    "select_pivots",
    "select_pivot",
    "condition_entry",
    "reference_diagonal",
    "entry_variance",
    "importance_weight",
    "jacobian_dxG",
    "estimate_reward",
    "reward_pipeline",
]
