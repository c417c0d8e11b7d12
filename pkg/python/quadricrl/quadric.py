"""Systems of quadratic equations ||A_i x||^2 = r_i

Systems are stored by their factors A_i; Gram matrices Q_i = A_i^T A_i are
derived on demand. All values are immutable (arrays are flagged read-only).
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatchError, DomainError


SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class QuadricSystem:
    """n factor matrices A_i (n x n) and a positive right-hand side r"""

    factors: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        factors = np.asarray(self.factors, dtype=np.float64)
        rhs = np.asarray(self.rhs, dtype=np.float64)

        if factors.ndim != 3 or factors.shape[1] != factors.shape[2]:
            raise DimensionMismatchError(
                f"factors must be a stack of square matrices, got shape {factors.shape}"
            )
        n = factors.shape[1]
        if factors.shape[0] != n:
            raise DimensionMismatchError(f"expected {n} factor matrices of side {n}, got {factors.shape[0]}")
        if rhs.shape != (n,):
            raise DimensionMismatchError(f"rhs must have length {n}, got shape {rhs.shape}")
        if not np.all(np.isfinite(factors)):
            raise DomainError("factor entries must be finite")
        if not np.all(np.isfinite(rhs)) or np.any(rhs <= 0):
            raise DomainError("rhs entries must be finite and strictly positive")

        object.__setattr__(self, "factors", _frozen(factors))
        object.__setattr__(self, "rhs", _frozen(rhs))

    @property
    def dim(self) -> int:
        return int(self.factors.shape[1])

    @classmethod
    def with_unit_rhs(cls, factors: Union[np.ndarray, Sequence[np.ndarray]]) -> "QuadricSystem":
        factors = np.asarray(factors, dtype=np.float64)
        return cls(factors=factors, rhs=np.ones(factors.shape[0]))

    def scaled(self, factor_scale: float) -> "QuadricSystem":
        """Joint gauge: A_i -> lambda A_i, r_i -> lambda^2 r_i (same solutions)"""
        return QuadricSystem(self.factors * factor_scale, self.rhs * factor_scale**2)

    def change_basis(self, basis: np.ndarray) -> "QuadricSystem":
        """Factors A_i Z; solutions map back through x = Z y"""
        return QuadricSystem(self.factors @ basis, self.rhs)

    def __repr__(self) -> str:
        return f"QuadricSystem(dim={self.dim}, rhs_range=[{self.rhs.min():.3g}, {self.rhs.max():.3g}])"


@dataclass(frozen=True, eq=False)
class GramSystem:
    """Symmetric PSD matrices Q_i = A_i^T A_i"""

    grams: np.ndarray

    def __post_init__(self):
        grams = np.asarray(self.grams, dtype=np.float64)
        if grams.ndim != 3 or grams.shape[1] != grams.shape[2] or grams.shape[0] != grams.shape[1]:
            raise DimensionMismatchError(f"grams must have shape (n, n, n), got {grams.shape}")
        object.__setattr__(self, "grams", _frozen(grams))

    @property
    def dim(self) -> int:
        return int(self.grams.shape[1])

    def validate(self, symmetry_tol: float = SYMMETRY_TOL, psd_tol: float = PSD_TOL) -> None:
        """Raise DomainError unless every Q_i is symmetric and PSD within tolerance"""
        for i, q in enumerate(self.grams):
            norm = np.linalg.norm(q)
            if norm == 0.0:
                continue
            if np.linalg.norm(q - q.T) > symmetry_tol * norm:
                raise DomainError(f"gram {i} is not symmetric")
            eigenvalues = np.linalg.eigvalsh(q)
            if eigenvalues[0] < -psd_tol * max(eigenvalues[-1], 0.0):
                raise DomainError(f"gram {i} is not positive semidefinite")


def _check_point(system: QuadricSystem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (system.dim,):
        raise DimensionMismatchError(f"x must have length {system.dim}, got shape {x.shape}")
    return x


def evaluate(system: QuadricSystem, x: np.ndarray) -> np.ndarray:
    """Residuals (||A_1 x||^2 - r_1, ..., ||A_n x||^2 - r_n)"""
    x = _check_point(system, x)
    images = system.factors @ x
    return np.einsum("ij,ij->i", images, images) - system.rhs


def gram(system: QuadricSystem) -> GramSystem:
    products = np.einsum("kai,kaj->kij", system.factors, system.factors)
    return GramSystem(0.5 * (products + np.swapaxes(products, 1, 2)))


def quadric_gradients(system: QuadricSystem, x: np.ndarray) -> np.ndarray:
    """Row k is the gradient 2 A_k^T A_k x of x -> ||A_k x||^2"""
    x = _check_point(system, x)
    images = system.factors @ x
    return 2.0 * np.einsum("kai,ka->ki", system.factors, images)


SystemKind = Literal["gaussian", "uniform"]


def random_system(n: int, kind: SystemKind = "gaussian", rng: Optional[np.random.Generator] = None) -> QuadricSystem:
    """Unit-rhs system with i.i.d. N(0,1) or U[-1,1] factor entries"""
    if n < 1:
        raise DomainError(f"dimension must be positive, got {n}")
    rng = rng if rng is not None else np.random.default_rng()
    if kind == "gaussian":
        factors = rng.standard_normal((n, n, n))
    elif kind == "uniform":
        factors = rng.uniform(-1.0, 1.0, size=(n, n, n))
    else:
        raise DomainError(f"unknown system kind '{kind}'")
    return QuadricSystem.with_unit_rhs(factors)


def system_to_dict(system: QuadricSystem) -> Dict[str, Any]:
    return {
        "dim": system.dim,
        "factors": [f.tolist() for f in system.factors],
        "rhs": system.rhs.tolist(),
    }


def system_from_dict(data: Dict[str, Any]) -> QuadricSystem:
    try:
        system = QuadricSystem(np.array(data["factors"], dtype=np.float64), np.array(data["rhs"], dtype=np.float64))
    except KeyError as e:
        raise DomainError(f"system JSON is missing field {e}") from e
    if "dim" in data and int(data["dim"]) != system.dim:
        raise DimensionMismatchError(f"declared dim {data['dim']} does not match factors ({system.dim})")
    return system


def save_system(system: QuadricSystem, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(system_to_dict(system), f)


def load_system(path: Union[str, Path]) -> QuadricSystem:
    with open(path, "r") as f:
        return system_from_dict(json.load(f))


__all__ = [
    "QuadricSystem",
    "GramSystem",
    "evaluate",
    "gram",
    "quadric_gradients",
    "random_system",
    "system_to_dict",
    "system_from_dict",
    "save_system",
    "load_system",
]
