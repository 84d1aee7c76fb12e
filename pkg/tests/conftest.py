import os
import sys

import numpy as np
import pytest

# Minimal, safe environment so config loads before src is imported
os.environ.setdefault("LOG_LEVEL", "INFO")
os.environ["LOG_TO_FILE"] = "false"


def pytest_sessionstart(session):
    # Ensure the repository root is importable for tests
    repo_root = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
    if repo_root not in sys.path:
        sys.path.insert(0, repo_root)


@pytest.fixture
def rng():
    """Seeded generator so random instances are reproducible."""
    return np.random.default_rng(12345)


@pytest.fixture
def fast_cfg():
    """Solver settings accurate enough for unit tests."""
    from src.solver import SolverConfig

    return SolverConfig(epsilon_final=1e-4, epsilon_decay=0.5, max_iters_per_eps=5000, tol_marginal=1e-9, log_domain=True)


def random_measure(rng, n, spread=1.0, dim=2, mass_range=(0.2, 1.0)):
    """Random point cloud with positive masses."""
    from src.measure import DiscreteMeasure

    points = rng.uniform(0.0, spread, size=(n, dim))
    masses = rng.uniform(*mass_range, size=n)
    return DiscreteMeasure(points, masses)


def grid_pair(rng, side=8, spacing=0.1, shift=0.02):
    """
    Wide-support reference on a square grid and a perturbed copy.

    The target moves every point by about ``shift`` and varies its mass, so
    no target mass is singular with respect to the reference.
    """
    from src.measure import DiscreteMeasure

    xs = spacing * np.arange(side)
    gx, gy = np.meshgrid(xs, xs)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    mu0 = DiscreteMeasure(points, np.full(len(points), 1.0 / len(points)))
    angles = rng.uniform(0, 2 * np.pi, len(points))
    moved = points + shift * np.column_stack([np.cos(angles), np.sin(angles)])
    mu1 = DiscreteMeasure(moved, mu0.masses * rng.uniform(0.5, 1.5, len(points)))
    return mu0, mu1


def map_regime_pair(rng, side=5, spacing=0.6, shift=0.05, growth=0.15):
    """
    Wide-support grid measure and a smoothly moved, smoothly grown copy.

    Grid points are far apart relative to the displacement and the mass
    ratio varies slowly across the grid, so the optimal HK plan is the
    diagonal one and every point keeps its own partner.
    """
    from src.measure import DiscreteMeasure

    xs = spacing * np.arange(side)
    gx, gy = np.meshgrid(xs, xs)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    masses = rng.uniform(0.5, 1.5, len(points)) / len(points)
    mu0 = DiscreteMeasure(points, masses)

    phase = rng.uniform(0, 2 * np.pi) + 0.5 * (points[:, 0] + points[:, 1])
    moved = points + shift * np.column_stack([np.cos(phase), np.sin(phase)])
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    mu1 = DiscreteMeasure(moved, masses * np.exp(2 * growth * (points @ direction)))
    return mu0, mu1


def separated_pair(seed=5, n=10, min_gap=0.02):
    """
    Two normalized random n-point measures on the unit square.

    Draws are repeated until every source point is at least ``min_gap``
    from every target point.
    """
    from scipy.spatial.distance import cdist

    from src.measure import normalize

    rng = np.random.default_rng(seed)
    while True:
        mu0, mu1 = random_measure(rng, n), random_measure(rng, n)
        if cdist(mu0.points, mu1.points).min() >= min_gap:
            return normalize(mu0), normalize(mu1)
