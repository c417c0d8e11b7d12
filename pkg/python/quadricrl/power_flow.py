"""Quadric form of the lossless all-PV power-flow equations

Variables are ordered z = (x_0, ..., x_{n-1}, y_0, ..., y_{n-1}) with
x_k = |V_k| cos(theta_k), y_k = |V_k| sin(theta_k) and |V_k| = 1. Node 0 is the
slack bus.

The 2n equations are
    z^T Q_k z = P_k                     k = 1..n-1   (active power balance)
    z^T Q_0 z = 1                       (x_0^2 = 1)
    z^T S_k z = 1                       k = 0..n-1   (x_k^2 + y_k^2 = 1)
and are recombined into positive-definite quadrics A_k, B_k.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import networkx as nx
import numpy as np
import scipy.linalg

from .errors import (
    DefinitenessError,
    DimensionMismatchError,
    DisconnectedNetworkError,
    DomainError,
    DuplicateEdgeError,
    RankError,
)
from .quadric import QuadricSystem

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 32

Edge = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class PowerNetwork:
    """Connected lossless network; edges are stored with k < m"""

    node_count: int
    susceptances: Dict[Edge, float] = field(default_factory=dict)
    injections: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        n = self.node_count
        if n < 2:
            raise DomainError(f"a network needs at least 2 nodes, got {n}")
        injections = np.asarray(self.injections, dtype=np.float64)
        if injections.shape != (n - 1,):
            raise DimensionMismatchError(f"expected {n - 1} injections P_1..P_{n - 1}, got {injections.shape}")
        injections = injections.copy()
        injections.setflags(write=False)
        object.__setattr__(self, "injections", injections)

        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        graph.add_edges_from(self.susceptances)
        if not nx.is_connected(graph):
            raise DisconnectedNetworkError(
                f"network with {n} nodes has {nx.number_connected_components(graph)} components"
            )

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        edges: Iterable[Tuple[int, int, float]],
        injections: Iterable[float],
    ) -> "PowerNetwork":
        """Build a network from (k, m, b_km) triples, rejecting self-loops and repeats"""
        susceptances: Dict[Edge, float] = {}
        for k, m, b in edges:
            k, m = int(k), int(m)
            if k == m:
                raise DomainError(f"self-loop at node {k}")
            if not (0 <= k < node_count and 0 <= m < node_count):
                raise DomainError(f"edge ({k}, {m}) references a node outside 0..{node_count - 1}")
            key = (min(k, m), max(k, m))
            if key in susceptances:
                raise DuplicateEdgeError(f"edge {key} listed more than once")
            susceptances[key] = float(b)
        return cls(node_count, susceptances, np.asarray(list(injections), dtype=np.float64))

    def neighbors(self, k: int):
        for (a, b), weight in self.susceptances.items():
            if a == k:
                yield b, weight
            elif b == k:
                yield a, weight


@dataclass(frozen=True, eq=False)
class RawQuadricForms:
    """power_forms[0] encodes x_0^2, power_forms[k] (k >= 1) encodes P_k"""

    power_forms: np.ndarray
    selector_forms: np.ndarray
    injections: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.selector_forms.shape[0])

    def power_rhs(self) -> np.ndarray:
        """Right-hand sides of the power forms: (1, P_1, ..., P_{n-1})"""
        return np.concatenate([[1.0], self.injections])


def build_raw_forms(network: PowerNetwork) -> RawQuadricForms:
    n = network.node_count
    size = 2 * n
    power = np.zeros((n, size, size))
    selectors = np.zeros((n, size, size))

    power[0, 0, 0] = 1.0
    for k in range(1, n):
        for m, b in network.neighbors(k):
            # b_km x_m y_k
            power[k, m, n + k] += b / 2
            power[k, n + k, m] += b / 2
            # -b_km x_k y_m
            power[k, k, n + m] -= b / 2
            power[k, n + m, k] -= b / 2

    for k in range(n):
        selectors[k, k, k] = 1.0
        selectors[k, n + k, n + k] = 1.0

    return RawQuadricForms(power, selectors, np.array(network.injections))


def sparsity_pattern(network: PowerNetwork) -> np.ndarray:
    """Positions that any admissible combination of the raw forms can fill"""
    n = network.node_count
    mask = np.eye(2 * n, dtype=bool)
    for k, m in network.susceptances:
        for a, b in ((k, m), (m, k)):
            mask[a, n + b] = True
            mask[n + b, a] = True
    return mask


def trigonometric_injections(network: PowerNetwork, theta: np.ndarray) -> np.ndarray:
    """Lossless active power P_k = sum_m b_km sin(theta_k - theta_m) for every node"""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (network.node_count,):
        raise DimensionMismatchError(f"theta must have length {network.node_count}")
    power = np.zeros(network.node_count)
    for (k, m), b in network.susceptances.items():
        power[k] += b * np.sin(theta[k] - theta[m])
        power[m] += b * np.sin(theta[m] - theta[k])
    return power


def combined_matrices(
    raw: RawQuadricForms,
    alphas: np.ndarray,
    betas: np.ndarray,
    gammas: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stack of the 2n combined matrices and their right-hand sides

    A_k = sum_j alpha[j, k] S_j                          rhs = sum_j alpha[j, k]
    B_k = sum_j beta[j, k] S_j + sum_j gamma[j, k] Q_j   rhs = sum_j beta[j, k]
                                                              + gamma[0, k]
                                                              + sum_{j>=1} gamma[j, k] P_j
    since z^T S_j z = 1, z^T Q_0 z = 1 and z^T Q_j z = P_j on every solution.
    """
    n = raw.node_count
    alphas, betas, gammas = (np.asarray(c, dtype=np.float64) for c in (alphas, betas, gammas))
    for name, coeffs in (("alphas", alphas), ("betas", betas), ("gammas", gammas)):
        if coeffs.shape != (n, n):
            raise DimensionMismatchError(f"{name} must have shape ({n}, {n}), got {coeffs.shape}")
    if np.any(alphas <= 0) or np.any(gammas <= 0):
        raise DomainError("alphas and gammas must be strictly positive")

    selector_part = np.einsum("jk,jab->kab", alphas, raw.selector_forms)
    b_part = np.einsum("jk,jab->kab", betas, raw.selector_forms) + np.einsum(
        "jk,jab->kab", gammas, raw.power_forms
    )
    matrices = np.concatenate([selector_part, b_part])
    matrices = 0.5 * (matrices + np.swapaxes(matrices, 1, 2))

    rhs = np.concatenate([alphas.sum(axis=0), betas.sum(axis=0) + gammas.T @ raw.power_rhs()])
    return matrices, rhs


def combine_to_definite(
    raw: RawQuadricForms,
    alphas: np.ndarray,
    betas: np.ndarray,
    gammas: np.ndarray,
    unit_rhs: bool = False,
) -> QuadricSystem:
    """Combine raw forms into 2n positive-definite quadrics and factor them

    Each combined matrix M_k is factored as M_k = U_k^T U_k (Cholesky), so the
    returned system reads ||U_k z||^2 = rhs_k. With ``unit_rhs`` every M_k is
    divided by its rhs first.
    """
    matrices, rhs = combined_matrices(raw, alphas, betas, gammas)
    size = matrices.shape[0]

    flat = np.stack([m[np.triu_indices(size)] for m in matrices])
    rank = np.linalg.matrix_rank(flat)
    if rank < size:
        raise RankError(f"combined forms span rank {rank} < {size} on symmetric matrices")

    bad_rhs = np.flatnonzero(rhs <= 0)
    if bad_rhs.size:
        raise DomainError(f"combined equation {bad_rhs[0]} has non-positive rhs {rhs[bad_rhs[0]]:.3g}")

    factors = np.empty_like(matrices)
    for k, m in enumerate(matrices):
        target = m / rhs[k] if unit_rhs else m
        try:
            factors[k] = scipy.linalg.cholesky(target, lower=False)
        except np.linalg.LinAlgError as e:
            raise DefinitenessError(f"combined matrix {k} is not positive-definite", index=k) from e

    return QuadricSystem(factors, np.ones(size) if unit_rhs else rhs)


def random_coefficients(
    raw: RawQuadricForms, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """alpha, beta = 1 + U(0,1); gamma ~ U(0, gamma_max) with Gershgorin headroom

    gamma_max keeps the off-diagonal row sums of every B_k below 1/2 while each
    diagonal entry is at least 1, so every B_k is diagonally dominant.
    """
    n = raw.node_count
    alphas = 1.0 + rng.uniform(0.0, 1.0, size=(n, n))
    betas = 1.0 + rng.uniform(0.0, 1.0, size=(n, n))

    off_diagonal = np.abs(raw.power_forms).sum(axis=0)
    np.fill_diagonal(off_diagonal, 0.0)
    spread = off_diagonal.sum(axis=1).max()
    gamma_max = 0.5 / spread if spread > 0 else 1.0
    gammas = rng.uniform(1e-3, 1.0, size=(n, n)) * gamma_max
    return alphas, betas, gammas


def random_definite_system(
    network: PowerNetwork,
    rng: Optional[np.random.Generator] = None,
    unit_rhs: bool = False,
    retries: int = DEFAULT_RETRIES,
) -> QuadricSystem:
    """Structured system from a network with randomized combination weights"""
    rng = rng if rng is not None else np.random.default_rng()
    raw = build_raw_forms(network)
    last_error: Optional[Exception] = None
    for attempt in range(retries):
        alphas, betas, gammas = random_coefficients(raw, rng)
        try:
            return combine_to_definite(raw, alphas, betas, gammas, unit_rhs=unit_rhs)
        except (DefinitenessError, RankError, DomainError) as e:
            logger.debug("combination attempt %d failed: %s", attempt + 1, e)
            last_error = e
    assert last_error is not None
    raise last_error


def random_network(
    node_count: int,
    extra_edges: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> PowerNetwork:
    """Random spanning tree plus extra edges; b ~ U(0.5, 2), P ~ U(-0.5, 0.5)"""
    rng = rng if rng is not None else np.random.default_rng()
    edges: Dict[Edge, float] = {}
    for k in range(1, node_count):
        parent = int(rng.integers(0, k))
        edges[(parent, k)] = float(rng.uniform(0.5, 2.0))

    candidates = [
        (k, m) for k in range(node_count) for m in range(k + 1, node_count) if (k, m) not in edges
    ]
    picks = rng.permutation(len(candidates))[: max(0, min(extra_edges, len(candidates)))]
    for idx in sorted(picks):
        edges[candidates[idx]] = float(rng.uniform(0.5, 2.0))

    injections = rng.uniform(-0.5, 0.5, size=node_count - 1)
    return PowerNetwork(node_count, edges, injections)


def network_to_dict(network: PowerNetwork) -> Dict[str, Any]:
    return {
        "n": network.node_count,
        "edges": [[k, m, b] for (k, m), b in sorted(network.susceptances.items())],
        "P": network.injections.tolist(),
    }


def network_from_dict(data: Dict[str, Any]) -> PowerNetwork:
    try:
        return PowerNetwork.from_edges(int(data["n"]), data["edges"], data["P"])
    except KeyError as e:
        raise DomainError(f"network JSON is missing field {e}") from e


def save_network(network: PowerNetwork, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(network_to_dict(network), f)


def load_network(path: Union[str, Path]) -> PowerNetwork:
    with open(path, "r") as f:
        return network_from_dict(json.load(f))


__all__ = [
    "PowerNetwork",
    "RawQuadricForms",
    "build_raw_forms",
    "sparsity_pattern",
    "trigonometric_injections",
    "combined_matrices",
    "combine_to_definite",
    "random_coefficients",
    "random_definite_system",
    "random_network",
    "network_to_dict",
    "network_from_dict",
    "save_network",
    "load_network",
]
