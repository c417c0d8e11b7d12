"""Command-line interface for quadricrl"""

import functools
import json
import sys
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
from pydantic import ValidationError
from rich.markup import escape
from rich.progress import BarColumn, Progress, TextColumn
from rich.table import Table

from . import __version__
from .artifacts import RunDirectory, artifact_header, dumps_json, read_json, write_csv, write_json
from .baseline import baseline_report
from .cache import ResultCache
from .config import FULL_SCALE_REWARD, ExperimentConfig, load_experiment_config
from .errors import DomainError, QuadricError
from .experiments import (
    SCALING_COLUMNS,
    delta_sweep,
    reproduce_scaling,
    run_evaluation,
    run_training,
    write_sweep_chart,
)
from .log import configure_logging, console, error_console
from .normalization import normalize, normalized_to_dict
from .oracle import count_real_solutions
from .power_flow import (
    build_raw_forms,
    combine_to_definite,
    network_from_dict,
    network_to_dict,
    random_definite_system,
    random_network,
    sparsity_pattern,
)
from .quadric import QuadricSystem, random_system, system_from_dict, system_to_dict, save_system
from .reward import reward_pipeline

DEFAULT_EXPERIMENT_ID = "adhoc"
DEFAULT_DELTAS = "0.01,0.02,0.05,0.08"


def handle_errors(func: Callable) -> Callable:
    """Map package errors to exit codes: 2 validation, 3 numerical, 4 refusal"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        verbose = click.get_current_context().find_root().params.get("verbose", False)
        try:
            return func(*args, **kwargs)
        except QuadricError as e:
            _fail(type(e).__name__, e, e.exit_code, verbose)
        except ValidationError as e:
            _fail("Invalid configuration", e, 2, verbose)
        except (OSError, json.JSONDecodeError) as e:
            _fail("Cannot read input", e, 2, verbose)

    return wrapper


def _fail(label: str, error: Exception, code: int, verbose: bool) -> None:
    error_console.print(f"[bold red]{label}:[/bold red] {escape(str(error))}")
    if verbose:
        error_console.print(traceback.format_exc(), markup=False, highlight=False)
    sys.exit(code)


def _load_config(overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    root = click.get_current_context().find_root()
    return load_experiment_config(
        root.params.get("config_path"),
        overrides or {},
        defaults={"experiment_id": DEFAULT_EXPERIMENT_ID},
    )


def _command_header(seed: Optional[int], config: Optional[ExperimentConfig] = None) -> Dict[str, Any]:
    """Header for single-artifact commands: the command, its flags and the config"""
    ctx = click.get_current_context()
    params = {k: v for k, v in ctx.params.items() if k != "out"}
    payload: Dict[str, Any] = {"command": ctx.info_name, "options": params}
    if config is not None:
        payload["experiment"] = config.model_dump(mode="json")
    return artifact_header(payload, seed)


def _emit(payload: Any, header: Dict[str, Any], out: Optional[str]) -> None:
    if out:
        path = write_json(out, payload, header)
        console.print(f"[bold green]Wrote[/bold green] {path}")
    else:
        click.echo(dumps_json(payload, header))


def _parse_floats(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers, got '{raw}'") from e


def _parse_ints(raw: str) -> List[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got '{raw}'") from e


def _load_system(path: str) -> QuadricSystem:
    return system_from_dict(read_json(path))


def _open_run(config: ExperimentConfig, run_name: Optional[str]) -> RunDirectory:
    run = RunDirectory.create(config, run_name)
    console.print(f"Artifacts: [bold]{run.root}[/bold]")
    return run


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON experiment config")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging and tracebacks")
def main(config_path, verbose):
    """quadricrl - search for quadric systems with many real solutions"""
    configure_logging(verbose)


@main.command()
@click.option("--kind", type=click.Choice(["gaussian", "uniform"]), default="gaussian", show_default=True)
@click.option("--n", "n", required=True, type=click.IntRange(min=1), help="Dimension")
@click.option("--seed", default=0, type=click.IntRange(min=0), show_default=True)
@click.option("--out", "-o", type=click.Path(dir_okay=False), help="Output JSON (stdout when omitted)")
@handle_errors
def generate(kind, n, seed, out):
    """Generate a random unit-rhs system ||A_i x||^2 = 1"""
    system = random_system(n, kind, np.random.default_rng(seed))
    _emit(system_to_dict(system), _command_header(seed), out)


@main.command("generate-network")
@click.option("--n", "n", required=True, type=click.IntRange(min=2), help="Number of nodes")
@click.option("--extra-edges", default=0, type=click.IntRange(min=0), show_default=True)
@click.option("--seed", default=0, type=click.IntRange(min=0), show_default=True)
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@handle_errors
def generate_network(n, extra_edges, seed, out):
    """Generate a random connected lossless network"""
    network = random_network(n, extra_edges, np.random.default_rng(seed))
    _emit(network_to_dict(network), _command_header(seed), out)


@main.command("build-system")
@click.option("--network", "network_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--coefficients", type=click.Path(exists=True, dir_okay=False), help="JSON with alphas, betas, gammas")
@click.option("--unit-rhs", is_flag=True, help="Divide every form by its rhs")
@click.option("--seed", default=0, type=click.IntRange(min=0), show_default=True)
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@handle_errors
def build_system(network_path, coefficients, unit_rhs, seed, out):
    """Turn a network into 2n positive-definite quadrics"""
    network = network_from_dict(read_json(network_path))
    if coefficients:
        data = read_json(coefficients)
        missing = [key for key in ("alphas", "betas", "gammas") if key not in data]
        if missing:
            raise DomainError(f"coefficient file is missing {missing}")
        arrays = [np.asarray(data[key], dtype=np.float64) for key in ("alphas", "betas", "gammas")]
        system = combine_to_definite(build_raw_forms(network), *arrays, unit_rhs=unit_rhs)
    else:
        system = random_definite_system(network, np.random.default_rng(seed), unit_rhs=unit_rhs)

    payload = system_to_dict(system)
    payload["sparsity"] = sparsity_pattern(network).astype(int).tolist()
    _emit(payload, _command_header(seed), out)


@main.command("normalize")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@click.option("--tol", type=float, help="Gradient tolerance")
@click.option("--corrector-steps", type=click.IntRange(min=0), help="Newton corrector steps after BFGS")
@click.option("--max-iterations", type=click.IntRange(min=1))
@handle_errors
def normalize_cmd(in_path, out, tol, corrector_steps, max_iterations):
    """Scale a system so its forms have unit trace and sum to the identity"""
    config = _load_config(
        {
            "scaling.gradient_tolerance": tol,
            "scaling.corrector_steps": corrector_steps,
            "scaling.max_iterations": max_iterations,
        }
    )
    normalized = normalize(_load_system(in_path), config.scaling)

    table = Table(title="Normalization")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right")
    table.add_row("Dimension", str(normalized.dim))
    table.add_row("Iterations", str(normalized.iterations))
    table.add_row("Trace distance", f"{normalized.trace_distance:.3e}")
    table.add_row("Summation distance", f"{normalized.summation_distance:.3e}")
    table.add_row("Wall time (s)", f"{normalized.wall_time:.3f}")
    if out:
        console.print(table)
    _emit(normalized_to_dict(normalized), _command_header(None, config), out)


@main.command()
@click.option("--system", "system_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--delta", type=float, help="Perturbation size (at most 1/n)")
@click.option("--points", type=click.IntRange(min=1), help="Annulus points N")
@click.option("--tuples", type=click.IntRange(min=1), help="Perturbation tuples M")
@click.option("--eps", default="auto", show_default=True, help="Annulus half-width, or 'auto'")
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--workers", type=click.IntRange(min=1), help="Defaults to the thread budget")
@click.option("--transform", type=click.Choice(["raw", "log"]))
@click.option("--variance-rescale", is_flag=True, default=None)
@click.option("--annulus-center", type=click.Choice(["sqrt_n", "perturbed"]))
@click.option("--paper-scale", is_flag=True, help=f"Use {FULL_SCALE_REWARD} unless overridden")
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@handle_errors
def reward(
    system_path, delta, points, tuples, eps, seed, workers,
    transform, variance_rescale, annulus_center, paper_scale, out,
):
    """Monte-Carlo estimate of the expected number of real solutions"""
    overrides: Dict[str, Any] = {}
    if paper_scale:
        overrides.update({f"reward.{k}": v for k, v in FULL_SCALE_REWARD.items()})
    if eps != "auto":
        try:
            overrides["reward.epsilon"] = float(eps)
        except ValueError as e:
            raise click.BadParameter(f"--eps must be a number or 'auto', got '{eps}'") from e
    for key, value in {
        "delta": delta,
        "num_points": points,
        "num_tuples": tuples,
        "seed": seed,
        "workers": workers,
        "transform": transform,
        "variance_rescale": variance_rescale,
        "annulus_center": annulus_center,
    }.items():
        if value is not None:
            overrides[f"reward.{key}"] = value
    config = _load_config(overrides)
    reward_cfg = config.reward
    if workers is None and "workers" not in config.reward.model_fields_set:
        reward_cfg = reward_cfg.model_copy(update={"workers": config.threads})

    estimate = reward_pipeline(_load_system(system_path), reward_cfg, config.scaling)
    if out:
        console.print(estimate.summary())
    _emit(estimate.to_dict(), _command_header(reward_cfg.seed, config), out)


@main.command()
@click.option("--system", "system_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--starts", type=click.IntRange(min=1), help="Starts per pass (default min(200*2^n, cap))")
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--max-dim", type=click.IntRange(min=1), help="Refuse systems above this dimension")
@click.option("--exact-dim", type=click.IntRange(min=1), help="Largest dimension counted exhaustively")
@click.option("--workers", type=click.IntRange(min=1))
@click.option("--count-only", is_flag=True, help="Omit the solution list")
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@handle_errors
def count(system_path, starts, seed, max_dim, exact_dim, workers, count_only, out):
    """Count real solutions with multi-start damped Newton"""
    config = _load_config(
        {
            "oracle.starts": starts,
            "oracle.seed": seed,
            "oracle.max_dim": max_dim,
            "oracle.exact_dim": exact_dim,
            "oracle.workers": workers,
        }
    )
    result = count_real_solutions(_load_system(system_path), config.oracle)
    if out:
        console.print(result.summary())
    _emit(result.to_dict(include_solutions=not count_only), _command_header(config.oracle.seed, config), out)


@main.command()
@click.option("--n", "n", required=True, type=click.IntRange(min=2))
@click.option("--shifted-exponent", is_flag=True, help="Sphere area with the exponent (n-1)/2 instead of n/2")
@click.option("--out", "-o", type=click.Path(dir_okay=False))
@handle_errors
def baseline(n, shifted_exponent, out):
    """Gaussian average-case root count and its ingredients"""
    _emit(baseline_report(n, shifted_exponent).to_dict(), _command_header(None), out)


@main.command("delta-sweep")
@click.option("--n", "n", type=click.IntRange(min=2), help="Dimension of generated systems")
@click.option("--systems", "num_systems", default=20, type=click.IntRange(min=1), show_default=True)
@click.option("--deltas", default=DEFAULT_DELTAS, show_default=True, help="Comma-separated deltas")
@click.option("--kind", type=click.Choice(["gaussian", "uniform"]), default="gaussian", show_default=True)
@click.option("--points", type=click.IntRange(min=1))
@click.option("--tuples", type=click.IntRange(min=1))
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--heuristic", is_flag=True, help="Accept heuristic counts above the exhaustive dimension")
@click.option("--max-dim", type=click.IntRange(min=1))
@click.option("--paper-scale", is_flag=True)
@click.option("--cache-dir", type=click.Path(file_okay=False), help="Memoize counts and estimates here")
@click.option("--run-name", help="Run directory name (default: timestamp)")
@handle_errors
def delta_sweep_cmd(
    n, num_systems, deltas, kind, points, tuples, seed, heuristic, max_dim, paper_scale, cache_dir, run_name
):
    """Rank reward estimates against true counts for several deltas"""
    overrides: Dict[str, Any] = {}
    if paper_scale:
        overrides.update({f"reward.{k}": v for k, v in FULL_SCALE_REWARD.items()})
    overrides.update(
        {"reward.num_points": points, "reward.num_tuples": tuples, "seed": seed, "oracle.max_dim": max_dim}
    )
    config = _load_config(overrides)
    delta_values = _parse_floats(deltas)

    if config.systems:
        systems = [_load_system(p) for p in config.systems]
    elif n is None:
        raise click.UsageError("pass --n or list 'systems' in the config")
    else:
        systems = [random_system(n, kind, np.random.default_rng([config.seed, i])) for i in range(num_systems)]

    cache = ResultCache(cache_dir) if cache_dir else None
    with _open_run(config, run_name) as run:
        for i, system in enumerate(systems):
            save_system(system, run.path("systems", f"system_{i:03d}.json"))
        sweep = delta_sweep(systems, delta_values, config.reward, config.oracle, config.scaling, heuristic, cache)
        write_csv(run.path("tables", "delta_sweep.csv"), sweep.rows, sweep.columns(), run.header)
        summary_columns = ["delta", "spearman", "low_decile_size", "low_above_top_quartile_min", "distinguishable_low"]
        write_csv(run.path("tables", "delta_sweep_summary.csv"), sweep.summary, summary_columns, run.header)
        write_sweep_chart(sweep, run.path("tables", "delta_sweep.svg"))

    if cache is not None:
        stats = cache.get_stats()
        console.print(f"Cache: {stats['entries']} entries, {stats['cache_size_mb']:.2f} MB in {stats['cache_dir']}")

    table = Table(title="Delta sweep")
    for column in ("delta", "Spearman", "low decile", "low above top-quartile min"):
        table.add_column(column, justify="right")
    for row in sweep.summary:
        table.add_row(
            f"{row['delta']:g}",
            f"{row.get('spearman', float('nan')):.3f}",
            str(row.get("low_decile_size", "")),
            str(row.get("low_above_top_quartile_min", "")),
        )
    console.print(table)


@main.command("reproduce-scaling")
@click.option("--sizes", default="50", show_default=True, help="Comma-separated dimensions")
@click.option("--systems-per-size", default=50, type=click.IntRange(min=1), show_default=True)
@click.option("--corrector-steps", default=5, type=click.IntRange(min=0), show_default=True)
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--workers", type=click.IntRange(min=1), help="Defaults to the thread budget")
@click.option("--run-name", help="Run directory name (default: timestamp)")
@handle_errors
def reproduce_scaling_cmd(sizes, systems_per_size, corrector_steps, seed, workers, run_name):
    """Accuracy and timing of the scaling solver on random systems"""
    config = _load_config({"seed": seed})
    size_values = _parse_ints(sizes)
    if any(s < 1 or s > 250 for s in size_values):
        raise click.BadParameter("sizes must lie in [1, 250]", param_hint="--sizes")

    with _open_run(config, run_name) as run:
        rows = reproduce_scaling(
            size_values,
            systems_per_size,
            config.scaling,
            corrector_steps=corrector_steps,
            seed=config.seed,
            workers=workers or config.threads,
        )
        write_csv(run.path("tables", "scaling.csv"), rows, SCALING_COLUMNS, run.header)

    table = Table(title="Scaling accuracy")
    table.add_column("n", justify="right", style="cyan")
    table.add_column("time (s)", justify="right")
    table.add_column("trace dist", justify="right")
    table.add_column("sum dist", justify="right")
    table.add_column("corrected trace dist", justify="right")
    table.add_column("corrected sum dist", justify="right")
    table.add_column("corrector success", justify="right")
    table.add_column("failures", justify="right")
    for row in rows:
        table.add_row(
            str(row["n"]),
            f"{row['mean_time']:.3f}",
            f"{row['mean_trace_distance']:.2e}",
            f"{row['mean_summation_distance']:.2e}",
            f"{row['corrector_trace_distance']:.2e}",
            f"{row['corrector_summation_distance']:.2e}",
            f"{row['corrector_success_rate']:.2f}",
            str(row["failures"]),
        )
    console.print(table)


def _env_overrides(n, episode_length, action_cap, seed, paper_scale: bool = False) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if paper_scale:
        overrides.update({f"env.reward.{k}": v for k, v in FULL_SCALE_REWARD.items()})
    overrides.update(
        {
            "env.n": n,
            "env.episode_length": episode_length,
            "env.action_cap": action_cap,
            "seed": seed,
            "env.seed": seed,
        }
    )
    return overrides


@main.command()
@click.option("--n", "n", type=click.IntRange(min=2))
@click.option(
    "--episode-length", "episode_lengths", multiple=True, type=click.IntRange(min=1), help="Repeat for a grid"
)
@click.option("--action-cap", type=float)
@click.option("--steps", type=click.IntRange(min=0), help="Total environment steps per agent")
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--paper-scale", is_flag=True, help=f"Score states with {FULL_SCALE_REWARD}")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), help="Checkpoint to resume from")
@click.option("--run-name", help="Run directory name (default: timestamp)")
@handle_errors
def train(n, episode_lengths, action_cap, steps, seed, paper_scale, resume, run_name):
    """Train TD3 agents on the matrix-tuple search"""
    overrides = _env_overrides(n, None, action_cap, seed, paper_scale)
    overrides.update({"train.total_steps": steps, "train.seed": seed})
    config = _load_config(overrides)

    with _open_run(config, run_name) as run:
        columns = (TextColumn("{task.description}"), BarColumn(), TextColumn("{task.fields[reward]}"))
        with Progress(*columns, console=error_console) as progress:
            task = progress.add_task("training", total=config.train.total_steps, reward="")

            def on_episode(row: Dict[str, Any]) -> None:
                progress.update(task, completed=row["step"], reward=f"mean reward {row['mean_reward']:.4g}")

            checkpoints = run_training(
                config,
                run,
                episode_lengths=episode_lengths or None,
                resume_from=Path(resume) if resume else None,
                progress=on_episode,
            )

    for path in checkpoints:
        console.print(f"[bold green]Checkpoint[/bold green] {path}")


@main.command()
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", "n", type=click.IntRange(min=2))
@click.option("--action-cap", type=float)
@click.option("--runs", default=10, type=click.IntRange(min=1), show_default=True)
@click.option("--steps", default=10, type=click.IntRange(min=1), show_default=True)
@click.option("--oracle/--no-oracle", default=False, help="Record real-solution counts every step")
@click.option("--max-dim", type=click.IntRange(min=1))
@click.option("--hill-climb", is_flag=True, help="Add the hill-climbing baseline")
@click.option("--seed", type=click.IntRange(min=0))
@click.option("--paper-scale", is_flag=True, help=f"Score states with {FULL_SCALE_REWARD}")
@click.option("--run-name", help="Run directory name (default: timestamp)")
@handle_errors
def evaluate(checkpoints, n, action_cap, runs, steps, oracle, max_dim, hill_climb, seed, paper_scale, run_name):
    """Evaluate agents against the random (and hill-climbing) baselines"""
    overrides = _env_overrides(n, None, action_cap, seed, paper_scale)
    overrides["oracle.max_dim"] = max_dim
    config = _load_config(overrides)

    with _open_run(config, run_name) as run:
        summary = run_evaluation(
            config,
            run,
            checkpoints=[Path(c) for c in checkpoints],
            runs=runs,
            steps=steps,
            use_oracle=oracle,
            hill_climb=hill_climb,
        )

    table = Table(title="Evaluation")
    table.add_column("Policy", style="cyan")
    table.add_column("Metric")
    table.add_column("Average", justify="right")
    table.add_column("Average reward", justify="right")
    for row in summary:
        table.add_row(row["policy"], row["metric"], f"{row['average']:.4g}", f"{row['average_reward']:.4g}")
    console.print(table)


if __name__ == "__main__":
    main()
