"""Drivers reproducing the scaling table, the delta sweep and the RL tables"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from .artifacts import RunDirectory, write_csv, write_svg_chart
from .cache import ResultCache
from .config import ExperimentConfig, OracleOptions, RewardConfig, ScalingOptions
from .errors import ConfigurationError, NumericalError, OracleRefusalError
from .normalization import finalize, newton_corrector, normalize
from .oracle import count_real_solutions
from .parallel import chunked_map
from .quadric import QuadricSystem, gram, random_system
from .reward import reward_pipeline

logger = logging.getLogger(__name__)

SCALING_COLUMNS = [
    "n",
    "systems",
    "failures",
    "mean_time",
    "mean_trace_distance",
    "mean_summation_distance",
    "corrector_time",
    "corrector_trace_distance",
    "corrector_summation_distance",
    "corrector_success_rate",
]


def _scale_one(system: QuadricSystem, opts: ScalingOptions, corrector_steps: int) -> Optional[Dict[str, float]]:
    try:
        normalized = normalize(system, opts.model_copy(update={"corrector_steps": 0}))
    except NumericalError as e:
        logger.warning("scaling failed for a dim-%d system: %s", system.dim, e)
        return None

    record = {
        "time": normalized.wall_time,
        "trace_distance": normalized.trace_distance,
        "summation_distance": normalized.summation_distance,
        "corrector_time": math.nan,
        "corrector_trace_distance": math.nan,
        "corrector_summation_distance": math.nan,
        "corrector_success": math.nan,
    }
    if corrector_steps > 0:
        started = time.perf_counter()
        grams = gram(system)
        outcome = newton_corrector(normalized.t, grams, corrector_steps)
        corrected = finalize(system, grams, outcome.t, opts.eigenvalue_floor)
        record["corrector_time"] = normalized.wall_time + time.perf_counter() - started
        success = not outcome.failed and corrected["trace_distance"] < normalized.trace_distance
        record["corrector_success"] = float(success)
        # corrector distances are averaged over successfully corrected systems only
        if success:
            record["corrector_trace_distance"] = corrected["trace_distance"]
            record["corrector_summation_distance"] = corrected["summation_distance"]
    return record


def reproduce_scaling(
    sizes: Sequence[int],
    systems_per_size: int,
    opts: Optional[ScalingOptions] = None,
    corrector_steps: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> List[Dict[str, Any]]:
    """Accuracy and timing of the scaling solver on random Gaussian systems

    One row per size; failed systems are counted and left out of the means.
    """
    opts = opts or ScalingOptions()
    rows = []
    for n in sizes:
        systems = [random_system(n, "gaussian", np.random.default_rng([seed, n, k])) for k in range(systems_per_size)]
        records = chunked_map(lambda s: _scale_one(s, opts, corrector_steps), systems, workers=workers)
        ok = [r for r in records if r is not None]

        def mean(key: str) -> float:
            values = [r[key] for r in ok if not math.isnan(r[key])]
            return float(np.mean(values)) if values else math.nan

        rows.append(
            {
                "n": n,
                "systems": systems_per_size,
                "failures": systems_per_size - len(ok),
                "mean_time": mean("time"),
                "mean_trace_distance": mean("trace_distance"),
                "mean_summation_distance": mean("summation_distance"),
                "corrector_time": mean("corrector_time"),
                "corrector_trace_distance": mean("corrector_trace_distance"),
                "corrector_summation_distance": mean("corrector_summation_distance"),
                "corrector_success_rate": mean("corrector_success"),
            }
        )
        logger.info("n=%d: mean trace distance %.3g over %d systems", n, rows[-1]["mean_trace_distance"], len(ok))
    return rows


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    span = values.max() - values.min()
    if span == 0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def discrimination(true_counts: Sequence[int], estimates: Sequence[float]) -> Dict[str, Any]:
    """How well one delta separates low-count systems from high-count ones

    Systems are sorted by true count; reports how many of the lowest decile
    score above the smallest estimate of the top quartile, and Spearman's rho.
    """
    counts = np.asarray(true_counts)
    scores = min_max_normalize(np.asarray(estimates))
    order = np.argsort(counts, kind="stable")
    k = len(order)
    low = order[: max(1, k // 10)]
    high = order[k - max(1, k // 4) :]
    floor = scores[high].min()
    above = int(np.sum(scores[low] > floor))

    rho = math.nan
    if k > 1 and np.ptp(counts) > 0 and np.ptp(scores) > 0:
        rho = float(spearmanr(counts, scores)[0])
    return {
        "spearman": rho,
        "low_decile_size": int(low.size),
        "low_above_top_quartile_min": above,
        "distinguishable_low": int(low.size - above),
    }


@dataclass
class DeltaSweep:
    deltas: List[float]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: List[Dict[str, Any]] = field(default_factory=list)

    def columns(self) -> List[str]:
        return ["system", "true_count", "exhaustive"] + [f"estimate_{d:g}" for d in self.deltas]


def delta_sweep(
    systems: Sequence[QuadricSystem],
    deltas: Sequence[float],
    reward_cfg: RewardConfig,
    oracle_opts: Optional[OracleOptions] = None,
    scaling: Optional[ScalingOptions] = None,
    allow_heuristic: bool = False,
    cache: Optional[ResultCache] = None,
) -> DeltaSweep:
    """True counts from the oracle next to reward estimates for every delta"""
    oracle_opts = oracle_opts or OracleOptions()
    for system in systems:
        if system.dim > oracle_opts.exact_dim and not allow_heuristic:
            raise OracleRefusalError(
                f"dim {system.dim} has no exhaustive oracle; pass --heuristic to accept heuristic counts"
            )

    sweep = DeltaSweep(deltas=list(deltas))
    estimates: Dict[float, List[float]] = {d: [] for d in deltas}
    counts: List[int] = []
    for index, system in enumerate(systems):
        result = _cached_count(system, oracle_opts, cache)
        counts.append(result["count"])
        row: Dict[str, Any] = {"system": index, "true_count": result["count"], "exhaustive": result["exhaustive"]}
        for delta in deltas:
            cfg = reward_cfg.model_copy(update={"delta": delta})
            value = _cached_reward(system, cfg, scaling, cache)
            estimates[delta].append(value)
            row[f"estimate_{delta:g}"] = value
        sweep.rows.append(row)
        logger.info("system %d: %d real solutions", index, result["count"])

    for delta in deltas:
        stats = discrimination(counts, estimates[delta]) if systems else {}
        sweep.summary.append({"delta": delta, **stats})
    return sweep


def _cached_count(system: QuadricSystem, opts: OracleOptions, cache: Optional[ResultCache]) -> Dict[str, Any]:
    key = cache.key_for("count", system, opts.model_dump(mode="json")) if cache else None
    if cache and key:
        hit = cache.load(key)
        if hit is not None:
            return hit
    data = count_real_solutions(system, opts).to_dict(include_solutions=False)
    if cache and key:
        cache.save(key, data)
    return data


def _cached_reward(
    system: QuadricSystem,
    cfg: RewardConfig,
    scaling: Optional[ScalingOptions],
    cache: Optional[ResultCache],
) -> float:
    settings = {"reward": cfg.model_dump(mode="json"), "scaling": scaling.model_dump(mode="json") if scaling else None}
    key = cache.key_for("reward", system, settings) if cache else None
    if cache and key:
        hit = cache.load(key)
        if hit is not None:
            return float(hit["value"])
    estimate = reward_pipeline(system, cfg, scaling)
    if cache and key:
        cache.save(key, estimate.to_dict())
    return estimate.value


def evaluation_grid(
    episode_lengths: Sequence[int] = (10, 15, 20),
    action_cap: float = 0.01,
) -> List[Tuple[int, float]]:
    """(L, cap) pairs of the training grid"""
    return [(length, action_cap) for length in episode_lengths]


def write_sweep_chart(sweep: DeltaSweep, path: Path) -> Optional[Path]:
    ordered = sorted(sweep.rows, key=lambda r: r["true_count"])
    x = list(range(len(ordered)))
    series = {}
    for delta in sweep.deltas:
        values = min_max_normalize(np.array([r[f"estimate_{delta:g}"] for r in ordered]))
        series[f"delta={delta:g}"] = values.tolist()
    return write_svg_chart(path, x, series, "systems sorted by true count", "normalized estimate")


def _agent_name(length: int, cap: float) -> str:
    return f"agent_L{length}_cap{cap:g}"


def run_training(
    config: ExperimentConfig,
    run: RunDirectory,
    episode_lengths: Optional[Sequence[int]] = None,
    resume_from: Optional[Path] = None,
    progress: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> List[Path]:
    """Train one agent per episode length; returns the checkpoint paths

    Per agent: logs/<name>.csv (per-episode log), tables/<name>_training.csv
    with the artifact header, an optional SVG reward curve and <name>.pt.
    """
    from .agent import TRAIN_LOG_COLUMNS, train

    if config.env is None:
        raise ConfigurationError("training needs an 'env' section in the config")
    lengths = list(episode_lengths) if episode_lengths else [config.env.episode_length]

    checkpoints = []
    for length, cap in evaluation_grid(lengths, config.env.action_cap):
        env_cfg = config.env.model_copy(update={"episode_length": length})
        name = _agent_name(length, cap)
        checkpoint = run.root / f"{name}.pt"
        logger.info("training %s for %d steps", name, config.train.total_steps)
        _, log = train(
            env_cfg,
            config.train,
            scaling=config.scaling,
            log_path=run.path("logs", f"{name}.csv"),
            checkpoint_path=checkpoint,
            resume_from=resume_from,
            progress=progress,
        )
        header = dict(run.header, episode_length=length)
        write_csv(run.path("tables", f"{name}_training.csv"), log.rows, TRAIN_LOG_COLUMNS, header)
        if log.rows:
            write_svg_chart(
                run.path("tables", f"{name}_training.svg"),
                [r["episode"] for r in log.rows],
                {"mean episode reward": [r["mean_reward"] for r in log.rows]},
                "episode",
                "mean reward",
                title=name,
            )
        checkpoints.append(checkpoint)
    return checkpoints


def run_evaluation(
    config: ExperimentConfig,
    run: RunDirectory,
    checkpoints: Sequence[Path] = (),
    runs: int = 10,
    steps: int = 10,
    use_oracle: bool = False,
    hill_climb: bool = False,
) -> List[Dict[str, Any]]:
    """Score trained agents next to the random baseline (and hill climbing)

    Writes tables/evaluation.csv with one summary row per policy and
    tables/evaluation_traces.csv with the per-step values of every run.
    """
    from .agent import DEFAULT_THRESHOLDS, HillClimbPolicy, RandomPolicy, evaluate_policy, load_checkpoint

    if config.env is None:
        raise ConfigurationError("evaluation needs an 'env' section in the config")
    env_cfg = config.env
    oracle = config.oracle if use_oracle else None
    if oracle is not None and env_cfg.n > oracle.max_dim:
        raise OracleRefusalError(
            f"n={env_cfg.n} exceeds oracle max_dim={oracle.max_dim}; raise --max-dim or drop --oracle"
        )

    policies: List[Tuple[str, Any]] = []
    for path in checkpoints:
        agent, _ = load_checkpoint(path)
        if agent.dim != env_cfg.n**3:
            raise ConfigurationError(f"checkpoint {path} was trained for dim {agent.dim}, env has n={env_cfg.n}")
        policies.append((Path(path).stem, agent))
    policies.append(("random", RandomPolicy(env_cfg.action_cap, config.seed)))
    if hill_climb:
        policies.append(("hill_climb", HillClimbPolicy(env_cfg, config.scaling, config.seed)))

    summary, traces = [], []
    for name, policy in policies:
        table = evaluate_policy(policy, env_cfg, runs, steps, oracle=oracle, scaling=config.scaling)
        row = table.summary_row()
        row["policy"] = name
        summary.append(row)
        for index, rewards in enumerate(table.rewards):
            counts = table.counts[index] if table.counts is not None else [None] * len(rewards)
            for step_index, (reward, count) in enumerate(zip(rewards, counts), start=1):
                traces.append({"policy": name, "run": index, "step": step_index, "reward": reward, "count": count})
        logger.info("%s: average %s %.4g", name, table.metric, table.average())

    columns = ["policy", "metric", "runs", "average", "average_reward"]
    columns += [f"exceed_{t:g}" for t in DEFAULT_THRESHOLDS] + [f"median_steps_{t:g}" for t in DEFAULT_THRESHOLDS]
    write_csv(run.path("tables", "evaluation.csv"), summary, columns, run.header)
    trace_columns = ["policy", "run", "step", "reward", "count"]
    write_csv(run.path("tables", "evaluation_traces.csv"), traces, trace_columns, run.header)
    return summary


__all__ = [
    "SCALING_COLUMNS",
    "reproduce_scaling",
    "min_max_normalize",
    "discrimination",
    "DeltaSweep",
    "delta_sweep",
    "evaluation_grid",
    "write_sweep_chart",
    "run_training",
    "run_evaluation",
]
