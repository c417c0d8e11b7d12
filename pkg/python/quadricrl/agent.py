"""Twin-delayed deterministic actor-critic (TD3) over the matrix-tuple search

Actor: D -> h1 -> h2 -> h3 -> D with ReLU and a tanh output scaled to the
action cap. Critics: two independent (D + D) -> h1 -> h2 -> h3 -> 1 stacks.
D = n^3, the flattened state.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import __version__
from .config import EnvConfig, OracleOptions, ScalingOptions, TrainConfig
from .env import EnvState, QuadricEnv, apply_action, reset, score_state, step_with_estimate
from .errors import NumericalError
from .oracle import count_real_solutions

logger = logging.getLogger(__name__)

FINAL_LAYER_SCALE = 1e-3
EVAL_EPISODE_OFFSET = 1_000_000
DEFAULT_THRESHOLDS = (80, 90, 100)
TRAIN_LOG_COLUMNS = ["step", "episode", "mean_reward", "actor_loss", "critic_loss"]


def _mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(fan_in, fan_out))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Actor(nn.Module):
    def __init__(self, dim: int, hidden_sizes: Sequence[int], action_cap: float):
        super().__init__()
        self.action_cap = action_cap
        self.net = _mlp([dim, *hidden_sizes, dim])
        final = self.net[-1]
        with torch.no_grad():
            final.weight.mul_(FINAL_LAYER_SCALE)
            final.bias.mul_(FINAL_LAYER_SCALE)

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        return self.action_cap * torch.tanh(self.net(state))


class Critic(nn.Module):
    """Twin Q-networks sharing nothing but their input"""

    def __init__(self, dim: int, hidden_sizes: Sequence[int]):
        super().__init__()
        self.q1_net = _mlp([2 * dim, *hidden_sizes, 1])
        self.q2_net = _mlp([2 * dim, *hidden_sizes, 1])

    def forward(self, state: torch.Tensor, action: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        joint = torch.cat([state, action], dim=-1)
        return self.q1_net(joint), self.q2_net(joint)

    def q1(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.q1_net(torch.cat([state, action], dim=-1))


class ReplayBuffer:
    """Fixed-capacity ring of (state, action, reward, next_state, done)"""

    def __init__(self, dim: int, capacity: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, dim), dtype=np.float64)
        self.actions = np.zeros((capacity, dim), dtype=np.float64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros((capacity, dim), dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.position = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state: np.ndarray, action: np.ndarray, reward: float, next_state: np.ndarray, done: bool) -> None:
        i = self.position
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Uniform batch without replacement"""
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} transitions from a buffer of {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return {
            "state": self.states[idx],
            "action": self.actions[idx],
            "reward": self.rewards[idx],
            "next_state": self.next_states[idx],
            "done": self.dones[idx],
        }


@dataclass
class AgentBundle:
    """Online and target networks, optimizers and training counters"""

    actor: Actor
    critic: Critic
    actor_target: Actor
    critic_target: Critic
    actor_optimizer: torch.optim.Optimizer
    critic_optimizer: torch.optim.Optimizer
    cfg: TrainConfig
    action_cap: float
    dim: int
    rng: np.random.Generator
    generator: torch.Generator
    critic_updates: int = 0
    steps_done: int = 0
    episodes_done: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.cfg.dtype == "float64" else torch.float32

    def tensor(self, array: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.asarray(array), dtype=self.dtype)


def build_agent(dim: int, action_cap: float, cfg: TrainConfig) -> AgentBundle:
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        actor = Actor(dim, cfg.hidden_sizes, action_cap).to(dtype)
        critic = Critic(dim, cfg.hidden_sizes).to(dtype)
        actor_target = Actor(dim, cfg.hidden_sizes, action_cap).to(dtype)
        critic_target = Critic(dim, cfg.hidden_sizes).to(dtype)
    actor_target.load_state_dict(actor.state_dict())
    critic_target.load_state_dict(critic.state_dict())

    generator = torch.Generator()
    generator.manual_seed(cfg.seed)
    return AgentBundle(
        actor=actor,
        critic=critic,
        actor_target=actor_target,
        critic_target=critic_target,
        actor_optimizer=torch.optim.Adam(actor.parameters(), lr=cfg.actor_lr),
        critic_optimizer=torch.optim.Adam(critic.parameters(), lr=cfg.critic_lr),
        cfg=cfg,
        action_cap=action_cap,
        dim=dim,
        rng=np.random.default_rng([cfg.seed, 1]),
        generator=generator,
    )


def _parameter_dump(module: nn.Module) -> str:
    return ", ".join(f"{name}: |w|={p.detach().norm().item():.3g}" for name, p in module.named_parameters())


def select_action(
    actor: Actor,
    state: Union[EnvState, np.ndarray],
    noise_sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """pi(state) plus N(0, (noise_sigma * cap)^2) noise, clamped to the cap"""
    flat = state.flat() if isinstance(state, EnvState) else np.asarray(state, dtype=np.float64).reshape(-1)
    dtype = next(actor.parameters()).dtype
    with torch.no_grad():
        action = actor(torch.as_tensor(flat, dtype=dtype)).cpu().numpy().astype(np.float64)
    if not np.all(np.isfinite(action)):
        raise NumericalError(f"actor produced non-finite actions; parameters: {_parameter_dump(actor)}")
    cap = actor.action_cap
    if noise_sigma > 0:
        action = action + rng.normal(0.0, noise_sigma * cap, size=action.shape)
    return np.clip(action, -cap, cap)


def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    with torch.no_grad():
        for target_param, param in zip(target.parameters(), online.parameters()):
            target_param.mul_(1.0 - tau).add_(param, alpha=tau)


@dataclass
class TrainReport:
    critic_loss: float
    actor_loss: Optional[float] = None
    actor_updated: bool = False
    targets_updated: bool = False
    target: Optional[torch.Tensor] = None
    target_q1: Optional[torch.Tensor] = None
    target_q2: Optional[torch.Tensor] = None


def critic_loss(agent: AgentBundle, batch: Dict[str, torch.Tensor]) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Twin-critic regression loss against the clipped double-Q target"""
    cfg, cap = agent.cfg, agent.action_cap
    with torch.no_grad():
        noise = torch.randn(batch["action"].shape, generator=agent.generator, dtype=agent.dtype)
        noise = (noise * cfg.target_policy_noise * cap).clamp(-cfg.target_noise_clip * cap, cfg.target_noise_clip * cap)
        next_action = (agent.actor_target(batch["next_state"]) + noise).clamp(-cap, cap)
        target_q1, target_q2 = agent.critic_target(batch["next_state"], next_action)
        target = batch["reward"][:, None] + cfg.discount * (1.0 - batch["done"][:, None]) * torch.min(
            target_q1, target_q2
        )
    q1, q2 = agent.critic(batch["state"], batch["action"])
    loss = F.mse_loss(q1, target) + F.mse_loss(q2, target)
    return loss, {"target": target, "target_q1": target_q1, "target_q2": target_q2}


def actor_loss(agent: AgentBundle, states: torch.Tensor) -> torch.Tensor:
    return -agent.critic.q1(states, agent.actor(states)).mean()


def train_step(agent: AgentBundle, buffer: ReplayBuffer, cfg: Optional[TrainConfig] = None) -> TrainReport:
    """One critic update; actor and targets every ``policy_delay`` critic updates"""
    cfg = cfg or agent.cfg
    raw = buffer.sample(cfg.batch_size, agent.rng)
    batch = {key: agent.tensor(value) for key, value in raw.items()}

    loss, extras = critic_loss(agent, batch)
    if not torch.isfinite(loss):
        raise NumericalError(f"critic loss is {loss.item()}; critic parameters: {_parameter_dump(agent.critic)}")
    agent.critic_optimizer.zero_grad()
    loss.backward()
    agent.critic_optimizer.step()
    agent.critic_updates += 1

    report = TrainReport(critic_loss=float(loss.item()), **extras)
    if agent.critic_updates % cfg.policy_delay == 0:
        a_loss = actor_loss(agent, batch["state"])
        if not torch.isfinite(a_loss):
            raise NumericalError(f"actor loss is {a_loss.item()}; actor parameters: {_parameter_dump(agent.actor)}")
        agent.actor_optimizer.zero_grad()
        a_loss.backward()
        agent.actor_optimizer.step()

        soft_update(agent.critic_target, agent.critic, cfg.tau)
        soft_update(agent.actor_target, agent.actor, cfg.tau)
        report.actor_loss = float(a_loss.item())
        report.actor_updated = True
        report.targets_updated = True
    return report


def save_checkpoint(agent: AgentBundle, path: Union[str, Path], env_cfg: Optional[EnvConfig] = None) -> None:
    torch.save(
        {
            "version": __version__,
            "train_config": agent.cfg.model_dump(mode="json"),
            "env_config": env_cfg.model_dump(mode="json") if env_cfg else None,
            "action_cap": agent.action_cap,
            "dim": agent.dim,
            "steps_done": agent.steps_done,
            "episodes_done": agent.episodes_done,
            "critic_updates": agent.critic_updates,
            "actor": agent.actor.state_dict(),
            "critic": agent.critic.state_dict(),
            "actor_target": agent.actor_target.state_dict(),
            "critic_target": agent.critic_target.state_dict(),
            "actor_optimizer": agent.actor_optimizer.state_dict(),
            "critic_optimizer": agent.critic_optimizer.state_dict(),
        },
        path,
    )


def load_checkpoint(path: Union[str, Path]) -> Tuple[AgentBundle, Dict[str, Any]]:
    payload = torch.load(path, map_location="cpu")
    cfg = TrainConfig.model_validate(payload["train_config"])
    agent = build_agent(payload["dim"], payload["action_cap"], cfg)
    for name in ("actor", "critic", "actor_target", "critic_target", "actor_optimizer", "critic_optimizer"):
        getattr(agent, name).load_state_dict(payload[name])
    agent.steps_done = payload["steps_done"]
    agent.episodes_done = payload["episodes_done"]
    agent.critic_updates = payload["critic_updates"]
    # resumed runs draw fresh noise streams keyed by progress
    agent.rng = np.random.default_rng([cfg.seed, 1, agent.steps_done])
    agent.generator.manual_seed(cfg.seed + agent.steps_done)
    return agent, payload


@dataclass
class TrainingLog:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    path: Optional[Path] = None

    def append(self, row: Dict[str, Any]) -> None:
        self.rows.append(row)
        if self.path is not None:
            new_file = not self.path.exists()
            with open(self.path, "a", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=TRAIN_LOG_COLUMNS)
                if new_file:
                    writer.writeheader()
                writer.writerow(row)


def train(
    env_cfg: EnvConfig,
    train_cfg: TrainConfig,
    scaling: Optional[ScalingOptions] = None,
    log_path: Optional[Union[str, Path]] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    resume_from: Optional[Union[str, Path]] = None,
    progress: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> Tuple[AgentBundle, TrainingLog]:
    """Off-policy loop: random warmup, then act, store and train every step"""
    dim = env_cfg.n**3
    if resume_from is not None:
        agent, _ = load_checkpoint(resume_from)
        logger.info("resuming from step %d (episode %d)", agent.steps_done, agent.episodes_done)
    else:
        agent = build_agent(dim, env_cfg.action_cap, train_cfg)

    log = TrainingLog(path=Path(log_path) if log_path else None)
    if train_cfg.total_steps <= agent.steps_done:
        return agent, log

    env = QuadricEnv(env_cfg, scaling)
    buffer = ReplayBuffer(dim, min(train_cfg.buffer_capacity, train_cfg.total_steps))
    cap = env_cfg.action_cap

    state = env.reset(agent.episodes_done)
    episode_rewards: List[float] = []
    last_report: Optional[TrainReport] = None
    last_actor_loss = float("nan")

    while agent.steps_done < train_cfg.total_steps:
        if agent.steps_done < train_cfg.warmup_steps:
            action = agent.rng.uniform(-cap, cap, size=dim)
        else:
            action = select_action(agent.actor, state, train_cfg.exploration_noise, agent.rng)

        next_state, reward, done, _ = env.step(action)
        buffer.add(state, action, reward, next_state, done)
        state = next_state
        episode_rewards.append(reward)
        agent.steps_done += 1

        if agent.steps_done > train_cfg.warmup_steps and len(buffer) >= train_cfg.batch_size:
            last_report = train_step(agent, buffer, train_cfg)
            if last_report.actor_loss is not None:
                last_actor_loss = last_report.actor_loss

        if done:
            row = {
                "step": agent.steps_done,
                "episode": agent.episodes_done,
                "mean_reward": float(np.mean(episode_rewards)),
                "actor_loss": last_actor_loss,
                "critic_loss": last_report.critic_loss if last_report else float("nan"),
            }
            log.append(row)
            if progress:
                progress(row)
            agent.episodes_done += 1
            episode_rewards = []
            state = env.reset(agent.episodes_done)

        if checkpoint_path and train_cfg.checkpoint_every and agent.steps_done % train_cfg.checkpoint_every == 0:
            save_checkpoint(agent, checkpoint_path, env_cfg)

    if checkpoint_path:
        save_checkpoint(agent, checkpoint_path, env_cfg)
    return agent, log


# Policies used by evaluation: callables (state, current_reward) -> action


class ActorPolicy:
    name = "agent"

    def __init__(self, agent: AgentBundle):
        self.agent = agent

    def __call__(self, state: EnvState, current_reward: float) -> np.ndarray:
        return select_action(self.agent.actor, state, 0.0, self.agent.rng)


class RandomPolicy:
    name = "random"

    def __init__(self, action_cap: float, seed: int = 0):
        self.action_cap = action_cap
        self.rng = np.random.default_rng([seed, 2])

    def __call__(self, state: EnvState, current_reward: float) -> np.ndarray:
        return self.rng.uniform(-self.action_cap, self.action_cap, size=state.tensor.size)


class HillClimbPolicy:
    """Greedy local search: keep a random perturbation only if it scores higher"""

    name = "hill_climb"

    def __init__(self, env_cfg: EnvConfig, scaling: Optional[ScalingOptions] = None, seed: int = 0):
        self.env_cfg = env_cfg
        self.scaling = scaling
        self.rng = np.random.default_rng([seed, 3])

    def __call__(self, state: EnvState, current_reward: float) -> np.ndarray:
        cap = self.env_cfg.action_cap
        proposal = self.rng.uniform(-cap, cap, size=state.tensor.size)
        trial = EnvState(apply_action(state, proposal, self.env_cfg), state.step_index + 1, state.episode)
        if score_state(trial, self.env_cfg, self.scaling).value > current_reward:
            return proposal
        return np.zeros(state.tensor.size)


Policy = Callable[[EnvState, float], np.ndarray]


@dataclass
class EvaluationTable:
    """Per-run traces and summary statistics for one policy"""

    policy: str
    rewards: List[List[float]]
    counts: Optional[List[List[int]]]
    thresholds: Tuple[float, ...]

    @property
    def metric(self) -> str:
        return "count" if self.counts is not None else "reward"

    def _traces(self) -> List[List[float]]:
        """Non-empty traces of the reported metric"""
        traces = self.counts if self.counts is not None else self.rewards
        return [list(map(float, t)) for t in traces if len(t)]

    def average(self) -> float:
        """Mean over runs of the final-step value; NaN without any steps"""
        finals = [trace[-1] for trace in self._traces()]
        return float(np.mean(finals)) if finals else math.nan

    def average_reward(self) -> float:
        means = [np.mean(trace) for trace in self.rewards if len(trace)]
        return float(np.mean(means)) if means else math.nan

    def exceedances(self) -> Dict[float, int]:
        return {t: sum(1 for trace in self._traces() if max(trace) > t) for t in self.thresholds}

    def median_steps_to_exceed(self) -> Dict[float, Union[float, str]]:
        medians: Dict[float, Union[float, str]] = {}
        for t in self.thresholds:
            firsts = [next(i + 1 for i, v in enumerate(trace) if v > t) for trace in self._traces() if max(trace) > t]
            medians[t] = float(np.median(firsts)) if firsts else "N/A"
        return medians

    def summary_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "policy": self.policy,
            "metric": self.metric,
            "runs": len(self.rewards),
            "average": self.average(),
            "average_reward": self.average_reward(),
        }
        for t, hits in self.exceedances().items():
            row[f"exceed_{t:g}"] = hits
        for t, median in self.median_steps_to_exceed().items():
            row[f"median_steps_{t:g}"] = median
        return row


def evaluate_policy(
    policy: Union[AgentBundle, Policy],
    env_cfg: EnvConfig,
    runs: int,
    steps: int,
    oracle: Optional[OracleOptions] = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    scaling: Optional[ScalingOptions] = None,
) -> EvaluationTable:
    """Roll ``policy`` for ``steps`` steps in each of ``runs`` fresh episodes"""
    if isinstance(policy, AgentBundle):
        policy = ActorPolicy(policy)
    name = getattr(policy, "name", type(policy).__name__)
    use_oracle = oracle is not None and env_cfg.n <= oracle.max_dim

    all_rewards: List[List[float]] = []
    all_counts: List[List[int]] = []
    for run in range(runs):
        state = reset(env_cfg, EVAL_EPISODE_OFFSET + run)
        current = score_state(state, env_cfg, scaling).value
        rewards, counts = [], []
        for _ in range(steps):
            action = policy(state, current)
            state, estimate, _ = step_with_estimate(state, action, env_cfg, scaling)
            current = estimate.value
            rewards.append(current)
            if use_oracle:
                counts.append(count_real_solutions(state.system(), oracle).count)
        all_rewards.append(rewards)
        all_counts.append(counts)
        logger.debug("%s run %d: final reward %.4g", name, run, rewards[-1] if rewards else math.nan)

    return EvaluationTable(
        policy=name,
        rewards=all_rewards,
        counts=all_counts if use_oracle else None,
        thresholds=tuple(thresholds),
    )


__all__ = [
    "Actor",
    "Critic",
    "ReplayBuffer",
    "AgentBundle",
    "build_agent",
    "select_action",
    "soft_update",
    "TrainReport",
    "critic_loss",
    "actor_loss",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
    "TrainingLog",
    "train",
    "ActorPolicy",
    "RandomPolicy",
    "HillClimbPolicy",
    "EvaluationTable",
    "evaluate_policy",
    "TRAIN_LOG_COLUMNS",
    "DEFAULT_THRESHOLDS",
]
