"""Search environment over tuples of n x n matrices

A state is a tensor of n matrices with entries in [-1, 1]; an action nudges
every entry by at most the action cap; the reward is the Kac-Rice estimate of
the system ||A_i x||^2 = 1 defined by the new state.
"""

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .config import EnvConfig, ScalingOptions
from .errors import DimensionMismatchError
from .quadric import QuadricSystem, save_system
from .reward import reward_pipeline
from .types import RewardEstimate

logger = logging.getLogger(__name__)

TRANSITION_COLUMNS = ["episode", "step", "reward", "state_hash"]


@dataclass(frozen=True, eq=False)
class EnvState:
    tensor: np.ndarray
    step_index: int = 0
    episode: int = 0

    def __post_init__(self):
        tensor = np.array(self.tensor, dtype=np.float64)
        if tensor.ndim != 3 or len(set(tensor.shape)) != 1:
            raise DimensionMismatchError(f"state tensor must have shape (n, n, n), got {tensor.shape}")
        tensor.setflags(write=False)
        object.__setattr__(self, "tensor", tensor)

    @property
    def n(self) -> int:
        return int(self.tensor.shape[0])

    def system(self) -> QuadricSystem:
        return QuadricSystem.with_unit_rhs(self.tensor)

    def flat(self) -> np.ndarray:
        return self.tensor.reshape(-1)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.tensor).tobytes()).hexdigest()


def reset(cfg: EnvConfig, episode_seed: int) -> EnvState:
    """Fresh uniform [-1, 1] state; identical for identical (cfg.seed, episode_seed)"""
    rng = np.random.default_rng([cfg.seed, episode_seed])
    tensor = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.n, cfg.n))
    return EnvState(tensor, 0, episode_seed)


def reward_seed(base_seed: int, episode: int, step_index: int) -> int:
    """Per-step Monte-Carlo seed derived from (seed, episode, step)"""
    state = np.random.SeedSequence([base_seed, episode, step_index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def apply_action(state: EnvState, action: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.size != state.tensor.size:
        raise DimensionMismatchError(f"action must have {state.tensor.size} entries, got {action.size}")
    action = np.clip(action.reshape(state.tensor.shape), -cfg.action_cap, cfg.action_cap)
    if cfg.sparsity_mask is not None:
        action = action * np.asarray(cfg.sparsity_mask, dtype=np.float64)[None, :, :]
    return np.clip(state.tensor + action, -1.0, 1.0)


def score_state(
    state: EnvState,
    cfg: EnvConfig,
    scaling: Optional[ScalingOptions] = None,
) -> RewardEstimate:
    """Reward of a state under its (episode, step) seed stream"""
    seed = reward_seed(cfg.seed, state.episode, state.step_index)
    reward_cfg = cfg.reward.model_copy(update={"seed": seed})
    return reward_pipeline(state.system(), reward_cfg, scaling)


def step(
    state: EnvState,
    action: np.ndarray,
    cfg: EnvConfig,
    scaling: Optional[ScalingOptions] = None,
) -> Tuple[EnvState, float, bool]:
    """Apply a capped perturbation and score the new system"""
    next_state, estimate, done = step_with_estimate(state, action, cfg, scaling)
    return next_state, estimate.value, done


def step_with_estimate(
    state: EnvState,
    action: np.ndarray,
    cfg: EnvConfig,
    scaling: Optional[ScalingOptions] = None,
) -> Tuple[EnvState, RewardEstimate, bool]:
    tensor = apply_action(state, action, cfg)
    next_state = EnvState(tensor, state.step_index + 1, state.episode)
    estimate = score_state(next_state, cfg, scaling)
    if estimate.degenerate:
        logger.debug("episode %d step %d: degenerate system, reward 0", state.episode, next_state.step_index)
    return next_state, estimate, next_state.step_index >= cfg.episode_length


class TransitionLog:
    """Appends (episode, step, reward, state_hash) rows to a CSV file"""

    def __init__(
        self,
        path: Union[str, Path],
        checkpoint_dir: Optional[Union[str, Path]] = None,
        checkpoint_every: int = 0,
    ):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoint_every = checkpoint_every
        self.rows_written = 0
        if not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(TRANSITION_COLUMNS)

    def record(self, state: EnvState, reward: float) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([state.episode, state.step_index, repr(float(reward)), state.digest()])
        self.rows_written += 1

        if self.checkpoint_dir and self.checkpoint_every and self.rows_written % self.checkpoint_every == 0:
            self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
            target = self.checkpoint_dir / f"state_e{state.episode}_s{state.step_index}.json"
            save_system(state.system(), target)


@dataclass
class QuadricEnv:
    """Stateful wrapper with a reset/step interface over flat observations"""

    cfg: EnvConfig
    scaling: Optional[ScalingOptions] = None
    log: Optional[TransitionLog] = None
    state: Optional[EnvState] = field(default=None, init=False)
    episodes_started: int = field(default=0, init=False)

    @property
    def observation_dim(self) -> int:
        return self.cfg.n**3

    @property
    def action_cap(self) -> float:
        return self.cfg.action_cap

    def reset(self, episode_seed: Optional[int] = None) -> np.ndarray:
        episode = self.episodes_started if episode_seed is None else episode_seed
        self.episodes_started += 1
        self.state = reset(self.cfg, episode)
        return self.state.flat().copy()

    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool, Dict[str, Any]]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, estimate, done = step_with_estimate(self.state, action, self.cfg, self.scaling)
        if self.log is not None:
            self.log.record(self.state, estimate.value)
        return self.state.flat().copy(), estimate.value, done, {"estimate": estimate}


__all__ = [
    "EnvState",
    "reset",
    "reward_seed",
    "apply_action",
    "score_state",
    "step",
    "step_with_estimate",
    "TransitionLog",
    "QuadricEnv",
    "TRANSITION_COLUMNS",
]
