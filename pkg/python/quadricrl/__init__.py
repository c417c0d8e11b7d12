"""
quadricrl - searching quadric systems with many real solutions
"""

__version__ = "0.1.0"

from .errors import QuadricError
from .quadric import QuadricSystem, GramSystem, evaluate, gram, random_system
from .power_flow import PowerNetwork, build_raw_forms, combine_to_definite, sparsity_pattern
from .normalization import NormalizedSystem, normalize, scaling_objective, scaling_hessian, newton_corrector
from .baseline import baseline_report, expected_root_count
from .reward import estimate_reward, reward_pipeline
from .oracle import count_real_solutions, verify_solution
from .types import RewardEstimate, RootCountResult, BaselineReport
from .config import (
    EnvConfig,
    ExperimentConfig,
    OracleOptions,
    RewardConfig,
    ScalingOptions,
    TrainConfig,
)

__all__ = [
    "__version__",
    "QuadricError",
    "QuadricSystem",
    "GramSystem",
    "evaluate",
    "gram",
    "random_system",
    "PowerNetwork",
    "build_raw_forms",
    "combine_to_definite",
    "sparsity_pattern",
    "NormalizedSystem",
    "normalize",
    "scaling_objective",
    "scaling_hessian",
    "newton_corrector",
    "baseline_report",
    "expected_root_count",
    "estimate_reward",
    "reward_pipeline",
    "count_real_solutions",
    "verify_solution",
    "RewardEstimate",
    "RootCountResult",
    "BaselineReport",
    "EnvConfig",
    "ExperimentConfig",
    "OracleOptions",
    "RewardConfig",
    "ScalingOptions",
    "TrainConfig",
]
