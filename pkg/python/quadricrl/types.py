"""Result records returned by the reward, oracle and baseline modules"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List

import numpy as np


@dataclass(frozen=True)
class RewardEstimate:
    """Monte-Carlo Kac-Rice estimate of the expected real-solution count

    ``value`` is the transformed signal handed to agents; ``raw_value`` is the
    plain Monte-Carlo mean before any log transform.
    """

    value: float
    std_error: float
    accepted_points: int
    rejected_points: int
    pivot_fallbacks: int
    discarded_samples: int = 0
    raw_value: float = float("nan")
    degenerate: bool = False

    @property
    def total_draws(self) -> int:
        return self.accepted_points + self.rejected_points

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def degenerate_zero(cls) -> "RewardEstimate":
        """Signal returned when the system cannot be normalized"""
        return cls(
            value=0.0,
            std_error=0.0,
            accepted_points=0,
            rejected_points=0,
            pivot_fallbacks=0,
            raw_value=0.0,
            degenerate=True,
        )

    def summary(self) -> str:
        return (
            f"Reward Estimate:\n"
            f"  Value: {self.value:.6g} (+/- {self.std_error:.3g})\n"
            f"  Points: {self.accepted_points} accepted, {self.rejected_points} rejected\n"
            f"  Pivot fallbacks: {self.pivot_fallbacks}\n"
            f"  Discarded samples: {self.discarded_samples}"
        )

    def __repr__(self) -> str:
        return (
            f"RewardEstimate(value={self.value:.6g}, std_error={self.std_error:.3g}, "
            f"degenerate={self.degenerate})"
        )


@dataclass
class RootCountResult:
    """Real solutions found by the multi-start Newton oracle"""

    count: int
    solutions: List[np.ndarray] = field(default_factory=list)
    starts_used: int = 0
    converged: int = 0
    dedup_tol: float = 1e-6
    residual_tol: float = 1e-9
    exhaustive: bool = False

    def __post_init__(self):
        if self.count % 2 != 0:
            raise ValueError(f"real solution count must be even, got {self.count}")

    @property
    def diverged(self) -> int:
        return self.starts_used - self.converged

    def to_dict(self, include_solutions: bool = True) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "count": self.count,
            "starts_used": self.starts_used,
            "converged": self.converged,
            "dedup_tol": self.dedup_tol,
            "residual_tol": self.residual_tol,
            "exhaustive": self.exhaustive,
        }
        if include_solutions:
            data["solutions"] = [np.asarray(s).tolist() for s in self.solutions]
        return data

    def summary(self) -> str:
        label = "exhaustive" if self.exhaustive else "heuristic"
        return (
            f"Root Count ({label}):\n"
            f"  Real solutions: {self.count}\n"
            f"  Starts: {self.starts_used} ({self.converged} converged)"
        )

    def __repr__(self) -> str:
        return f"RootCountResult(count={self.count}, exhaustive={self.exhaustive})"


@dataclass(frozen=True)
class BaselineReport:
    """Gaussian average-case quantities for dimension n

    ``gaussian_tail_moment`` is stored as a natural log (the raw value overflows).
    """

    n: int
    expected_count: float
    absdet_projected: float
    sphere_area: float
    gaussian_tail_moment: float
    expected_count_prestirling: float = float("nan")
    proposition_constant: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


__all__ = ["RewardEstimate", "RootCountResult", "BaselineReport"]
