"""Multi-start damped Newton root counting for small quadric systems

Starts are drawn on spheres around the solution shell, driven to convergence
in vectorized batches, filtered by residual and deduplicated in start order.
Counts are exact claims only for dim <= 3 after a confirming second pass;
larger systems are labeled heuristic.
"""

import logging
import math
from typing import List, Optional

import numpy as np

from .config import OracleOptions
from .errors import OracleRefusalError
from .parallel import chunk_bounds, chunked_map
from .quadric import QuadricSystem, evaluate, gram
from .types import RootCountResult

logger = logging.getLogger(__name__)

FIRST_PASS_STREAM = 0
CONFIRM_PASS_STREAM = 1
CONFIRM_FACTOR = 4


def verify_solution(system: QuadricSystem, x: np.ndarray, tol: float) -> bool:
    return bool(np.max(np.abs(evaluate(system, x))) <= tol)


def _residuals(factors: np.ndarray, rhs: np.ndarray, points: np.ndarray) -> np.ndarray:
    images = np.einsum("kab,pb->pka", factors, points)
    return np.einsum("pka,pka->pk", images, images) - rhs


def _jacobians(grams: np.ndarray, points: np.ndarray) -> np.ndarray:
    return 2.0 * np.einsum("kab,pb->pka", grams, points)


def _newton_steps(jac: np.ndarray, res: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(jac, res[..., None])[..., 0]
    except np.linalg.LinAlgError:
        steps = np.empty_like(res)
        for p in range(res.shape[0]):
            steps[p] = np.linalg.lstsq(jac[p], res[p], rcond=None)[0]
        return steps


def damped_newton(
    system: QuadricSystem,
    starts: np.ndarray,
    opts: OracleOptions,
    grams: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Run damped Newton from every start; returns the final iterates

    Each step is halved (up to ``max_halvings`` times) until the residual norm
    decreases. A row stops once its residual is far below the tolerance or no
    halving decreases it.
    """
    factors, rhs = system.factors, system.rhs
    grams = gram(system).grams if grams is None else grams
    points = np.array(starts, dtype=np.float64)
    res = _residuals(factors, rhs, points)
    norms = np.linalg.norm(res, axis=1)
    done = ~np.isfinite(norms) | (norms <= opts.residual_tol * 1e-3)

    for _ in range(opts.max_newton_iterations):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        x, current = points[idx], norms[idx]
        step = _newton_steps(_jacobians(grams, x), res[idx])
        step = np.where(np.isfinite(step), step, 0.0)

        scale = np.ones(idx.size)
        candidate = x - step
        cand_res = _residuals(factors, rhs, candidate)
        cand_norms = np.linalg.norm(cand_res, axis=1)
        for _ in range(opts.max_halvings):
            worse = ~(cand_norms < current)
            if not worse.any():
                break
            scale[worse] *= 0.5
            candidate[worse] = x[worse] - scale[worse, None] * step[worse]
            cand_res[worse] = _residuals(factors, rhs, candidate[worse])
            cand_norms[worse] = np.linalg.norm(cand_res[worse], axis=1)

        improved = cand_norms < current
        moved = idx[improved]
        points[moved] = candidate[improved]
        res[moved] = cand_res[improved]
        norms[moved] = cand_norms[improved]
        done[idx[~improved]] = True
        done[moved] = norms[moved] <= opts.residual_tol * 1e-3

    return points


def start_radius(system: QuadricSystem, directions: np.ndarray) -> np.ndarray:
    """rho(d) = sqrt(sum r / d^T (sum Q) d), equal to sqrt(n) for normalized systems"""
    total = gram(system).grams.sum(axis=0)
    curvature = np.einsum("pa,ab,pb->p", directions, total, directions)
    return np.sqrt(system.rhs.sum() / np.maximum(curvature, 1e-300))


def draw_starts(system: QuadricSystem, count: int, opts: OracleOptions, rng: np.random.Generator) -> np.ndarray:
    directions = rng.standard_normal((count, system.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = np.asarray(opts.radii)[rng.integers(0, len(opts.radii), size=count)]
    return directions * (start_radius(system, directions) * radii)[:, None]


def merge_solutions(
    known: List[np.ndarray],
    candidates: np.ndarray,
    dim: int,
    dedup_tol: float,
) -> List[np.ndarray]:
    """Append candidates (and their negations) that are new at ``dedup_tol``

    Distance is ||x - y|| sqrt(n) / max(||x||, ||y||), i.e. measured after
    scaling both points to the sqrt(n) shell. Candidates are merged greedily in
    order, so the result is closed under negation.
    """
    merged = list(known)
    stack = np.array(merged).reshape(len(merged), dim)
    stack_norms = np.linalg.norm(stack, axis=1)
    for x in candidates:
        for point in (x, -x):
            norm = np.linalg.norm(point)
            if stack.shape[0]:
                distances = np.linalg.norm(stack - point, axis=1) * math.sqrt(dim)
                distances /= np.maximum(np.maximum(stack_norms, norm), 1e-300)
                if np.any(distances < dedup_tol):
                    continue
            merged.append(np.array(point))
            stack = np.vstack([stack, point])
            stack_norms = np.append(stack_norms, norm)
    return merged


def _run_pass(
    system: QuadricSystem,
    count: int,
    opts: OracleOptions,
    stream: int,
) -> tuple:
    rng = np.random.default_rng([opts.seed, stream])
    starts = draw_starts(system, count, opts, rng)
    grams = gram(system).grams

    def solve_block(bounds):
        start, stop = bounds
        return damped_newton(system, starts[start:stop], opts, grams)

    blocks = chunked_map(solve_block, chunk_bounds(count, opts.chunk_size), workers=opts.workers)
    finals = np.concatenate(blocks) if blocks else np.empty((0, system.dim))
    residual = np.max(np.abs(_residuals(system.factors, system.rhs, finals)), axis=1)
    converged = finals[residual <= opts.residual_tol]
    return converged, count


def count_real_solutions(system: QuadricSystem, opts: Optional[OracleOptions] = None) -> RootCountResult:
    opts = opts or OracleOptions()
    n = system.dim
    if n > opts.max_dim:
        raise OracleRefusalError(
            f"dim {n} exceeds the oracle maximum {opts.max_dim}; raise max_dim to run heuristically"
        )

    budget = opts.resolve_starts(n)
    converged, used = _run_pass(system, budget, opts, FIRST_PASS_STREAM)
    solutions = merge_solutions([], converged, n, opts.dedup_tol)
    converged_total = converged.shape[0]

    exhaustive = False
    if n <= opts.exact_dim and opts.verify_pass:
        extra, extra_used = _run_pass(system, CONFIRM_FACTOR * budget, opts, CONFIRM_PASS_STREAM)
        confirmed = merge_solutions(solutions, extra, n, opts.dedup_tol)
        used += extra_used
        converged_total += extra.shape[0]
        exhaustive = len(confirmed) == len(solutions) and len(solutions) <= 2**n
        solutions = confirmed
    else:
        logger.warning("root count for dim %d is heuristic (not corroborated)", n)

    if len(solutions) > 2**n:
        logger.warning("found %d solutions above the Bezout bound 2^%d; dedup_tol may be too small", len(solutions), n)

    return RootCountResult(
        count=len(solutions),
        solutions=solutions,
        starts_used=used,
        converged=converged_total,
        dedup_tol=opts.dedup_tol,
        residual_tol=opts.residual_tol,
        exhaustive=exhaustive,
    )


__all__ = [
    "verify_solution",
    "damped_newton",
    "start_radius",
    "draw_starts",
    "merge_solutions",
    "count_real_solutions",
]
