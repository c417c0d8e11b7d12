"""Configuration models

Every tunable of the pipeline lives in one of these pydantic models. Field
constraints carry the domain invariants so that a bad config file fails at load
time with the offending field named.
"""

import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

THREADS_ENV_VAR = "QUADRICRL_THREADS"


def default_threads() -> int:
    """Thread budget from the environment, 1 when unset or malformed"""
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScalingOptions(_Frozen):
    """Options for the log-det scaling (normalization) solver"""

    gradient_tolerance: float = Field(1e-10, gt=0)
    max_iterations: int = Field(500, ge=1)
    corrector_steps: int = Field(0, ge=0)
    initial_t: Optional[Tuple[float, ...]] = None
    eigenvalue_floor: float = Field(1e-14, gt=0)
    # BFGS may stop on line-search precision loss before the strict tolerance;
    # such iterates are accepted when the gradient is below this bound.
    accept_gradient: float = Field(1e-5, gt=0)


class RewardConfig(_Frozen):
    """Monte-Carlo Kac-Rice reward parameters

    ``epsilon=None`` means "auto": max(4/sqrt(n), 0.1).
    """

    delta: float = Field(0.05, gt=0)
    num_points: int = Field(2000, ge=1)
    num_tuples: int = Field(100, ge=1)
    epsilon: Optional[float] = Field(None, gt=0)
    seed: int = Field(42, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    log_space: bool = True
    variance_rescale: bool = False
    annulus_center: Literal["sqrt_n", "perturbed"] = "sqrt_n"
    transform: Literal["raw", "log"] = "raw"
    point_chunk: int = Field(8192, ge=1)

    def resolve_epsilon(self, n: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return max(4.0 / math.sqrt(n), 0.1)


class OracleOptions(_Frozen):
    """Multi-start Newton root-count oracle options"""

    max_dim: int = Field(10, ge=1)
    exact_dim: int = Field(3, ge=1)
    starts: Optional[int] = Field(None, ge=1)
    start_cap: int = Field(200_000, ge=1)
    radii: Tuple[float, ...] = (0.5, 0.75, 1.0, 1.25)
    dedup_tol: float = Field(1e-6, gt=0)
    residual_tol: float = Field(1e-9, gt=0)
    max_newton_iterations: int = Field(100, ge=1)
    max_halvings: int = Field(30, ge=0)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    chunk_size: int = Field(2048, ge=1)
    verify_pass: bool = True

    def resolve_starts(self, n: int) -> int:
        if self.starts is not None:
            return self.starts
        return min(200 * 2**n, self.start_cap)


class EnvConfig(_Frozen):
    """Environment of the matrix-tuple search"""

    n: int = Field(..., ge=2)
    episode_length: int = Field(10, ge=1)
    action_cap: float = Field(0.01, gt=0)
    reward: RewardConfig = RewardConfig()
    init: Literal["uniform"] = "uniform"
    seed: int = Field(0, ge=0)
    sparsity_mask: Optional[List[List[bool]]] = None
    checkpoint_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _mask_shape(self) -> "EnvConfig":
        if self.sparsity_mask is not None:
            rows = len(self.sparsity_mask)
            if rows != self.n or any(len(r) != self.n for r in self.sparsity_mask):
                raise ValueError(f"sparsity_mask must be {self.n}x{self.n}")
        return self


class TrainConfig(_Frozen):
    """TD3 hyperparameters; noise terms are fractions of the action cap"""

    total_steps: int = Field(20_000, ge=0)
    batch_size: int = Field(100, ge=1)
    discount: float = Field(0.99, gt=0, le=1)
    tau: float = Field(0.005, gt=0, le=1)
    policy_delay: int = Field(2, ge=1)
    target_policy_noise: float = Field(0.2, ge=0)
    target_noise_clip: float = Field(0.5, ge=0)
    exploration_noise: float = Field(0.1, ge=0)
    actor_lr: float = Field(1e-3, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    buffer_capacity: int = Field(1_000_000, ge=1)
    warmup_steps: int = Field(1000, ge=0)
    seed: int = Field(0, ge=0)
    hidden_sizes: Tuple[int, int, int] = (500, 400, 300)
    checkpoint_every: int = Field(0, ge=0)
    dtype: Literal["float32", "float64"] = "float32"


class ExperimentConfig(_Frozen):
    """Top-level configuration of one harness run"""

    experiment_id: str = Field(..., min_length=1)
    seed: int = Field(0, ge=0)
    output_dir: str = "runs"
    threads: int = Field(default_factory=default_threads, ge=1)
    scaling: ScalingOptions = ScalingOptions()
    reward: RewardConfig = RewardConfig()
    oracle: OracleOptions = OracleOptions()
    env: Optional[EnvConfig] = None
    train: TrainConfig = TrainConfig()
    systems: List[str] = []

    @field_validator("systems")
    @classmethod
    def _systems_exist(cls, paths: List[str]) -> List[str]:
        missing = [p for p in paths if not Path(p).exists()]
        if missing:
            raise ValueError(f"referenced files do not exist: {missing}")
        return paths


FULL_SCALE_REWARD = {"num_points": 100_000, "num_tuples": 2500, "delta": 0.05}


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Set dotted keys (``reward.delta``) in a nested dict; None values are skipped"""
    merged = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = merged
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return merged


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    defaults: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Read a JSON config file, apply flag overrides and validate"""
    data: Dict[str, Any] = dict(defaults or {})
    if path is not None:
        with open(path, "r") as f:
            data.update(json.load(f))
    data = apply_overrides(data, overrides or {})
    return ExperimentConfig.model_validate(data)


__all__ = [
    "THREADS_ENV_VAR",
    "default_threads",
    "ScalingOptions",
    "RewardConfig",
    "OracleOptions",
    "EnvConfig",
    "TrainConfig",
    "ExperimentConfig",
    "FULL_SCALE_REWARD",
    "apply_overrides",
    "load_experiment_config",
]
