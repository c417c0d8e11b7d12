"""pytest configuration"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add python package to path
python_path = Path(__file__).parent.parent / "python"
sys.path.insert(0, str(python_path))

from quadricrl.power_flow import PowerNetwork  # noqa: E402
from quadricrl.quadric import QuadricSystem  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def diagonal_system():
    """A_1 = diag(1, 2), A_2 = diag(2, 1), r = (1, 1); solutions x^2 = y^2 = 1/5"""
    return QuadricSystem.with_unit_rhs([np.diag([1.0, 2.0]), np.diag([2.0, 1.0])])


@pytest.fixture
def path_network():
    """3-node path 0 - 1 - 2 with b_01 = 1.5, b_12 = 0.8"""
    return PowerNetwork.from_edges(3, [(0, 1, 1.5), (1, 2, 0.8)], [0.2, -0.1])
