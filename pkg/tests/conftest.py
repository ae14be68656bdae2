"""
Pytest Configuration
Shared fixtures and configuration for all tests
"""

import os
import sys

import pytest

# Add parent directory to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config import reset_global_config  # noqa: E402
from networks.generators import build_network  # noqa: E402
from networks.spec import parse_spec  # noqa: E402


# Configure pytest
def pytest_configure(config):
    """Configure pytest with custom markers"""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )
    config.addinivalue_line(
        "markers", "statistical: seeded Monte Carlo tests with fixed acceptance bounds"
    )


def make_network(spec):
    """Build a network straight from a spec dict"""
    return build_network(parse_spec(spec))


def explicit(edges, root=0):
    return make_network({
        'generator': 'explicit-edge-list',
        'params': {'edges': [list(e) for e in edges]},
        'conductance': 'per-edge',
        'root': root,
    })


# ============================================================================
# Network Fixtures
# ============================================================================

@pytest.fixture
def z():
    """The integer line Z rooted at 0"""
    return make_network({'generator': 'integer-line'})


@pytest.fixture
def z2():
    """The square lattice Z^2 rooted at the origin"""
    return make_network({'generator': 'lattice', 'params': {'d': 2}})


@pytest.fixture
def half_line():
    """The half-line N rooted at 0"""
    return make_network({'generator': 'half-line'})


@pytest.fixture
def tree():
    """Binary tree with level-decay conductances (transient)"""
    return make_network({
        'generator': 'regular-tree',
        'params': {'branching': 2},
        'conductance': {'rule': 'level-decay'},
    })


@pytest.fixture
def triangle():
    """Weighted triangle; spanning tree weights 6, 3 and 2"""
    return explicit([[0, 1, 3.0], [1, 2, 2.0], [0, 2, 1.0]])


@pytest.fixture
def grid2x2():
    """The 4-cycle 0-1-3-2 with unit conductances"""
    return explicit([[0, 1], [0, 2], [1, 3], [2, 3]])


@pytest.fixture
def path_graph():
    """Path 0-1-2-3-4 rooted at its end"""
    return explicit([[0, 1], [1, 2], [2, 3], [3, 4]])


@pytest.fixture(autouse=True)
def fresh_config(monkeypatch):
    """Every test sees the default configuration"""
    for name in list(os.environ):
        if name.startswith('RECURNET_'):
            monkeypatch.delenv(name, raising=False)
    reset_global_config()
    yield
    reset_global_config()
