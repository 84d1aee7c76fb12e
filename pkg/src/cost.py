"""
Transport Costs and Divergences

The cosine-truncated cost behind the Hellinger-Kantorovich distance, the
squared Euclidean cost for W2, the Kullback-Leibler marginal penalty and the
soft-marginal objective that the solver minimizes.
"""

import logging
import math
from typing import Union

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.distance import cdist

from .measure import DiscreteMeasure

# Reserved sentinel for transport that is forbidden (distance >= pi/2).
HK_INFINITY = np.inf
# Pairs at or beyond this distance get the sentinel instead of a huge finite cost.
HK_TRUNCATION = math.pi / 2 - 1e-9

logger = logging.getLogger('hk_tangent.cost')


class CostError(Exception):
    """Base exception for invalid cost or divergence inputs."""
    pass


class SupportMismatchError(CostError):
    """Raised when two measures were expected to share the same support."""
    pass


def hk_cost(x0, x1) -> float:
    """-2 log cos|x0 - x1| below the truncation distance, +inf beyond."""
    d = float(np.linalg.norm(np.asarray(x0, dtype=float) - np.asarray(x1, dtype=float)))
    if d >= HK_TRUNCATION:
        return HK_INFINITY
    return max(0.0, -2.0 * math.log(math.cos(d)))


def hk_cost_matrix(points0: NDArray[np.float64], points1: NDArray[np.float64]) -> NDArray[np.float64]:
    """Pairwise HK cost between two point sets, shape (n0, n1)."""
    d = cdist(np.atleast_2d(points0), np.atleast_2d(points1))
    cost = np.full(d.shape, HK_INFINITY)
    finite = d < HK_TRUNCATION
    cost[finite] = np.maximum(-2.0 * np.log(np.cos(d[finite])), 0.0)
    return cost


def w2_cost_matrix(points0: NDArray[np.float64], points1: NDArray[np.float64]) -> NDArray[np.float64]:
    """Pairwise squared Euclidean distance, shape (n0, n1)."""
    return cdist(np.atleast_2d(points0), np.atleast_2d(points1), 'sqeuclidean')


def hk_dirac_sq(x0, m0: float, x1, m1: float) -> float:
    """
    Closed-form squared HK distance between m0*delta(x0) and m1*delta(x1).

    Equals m0 + m1 - 2 sqrt(m0 m1) cos(min(d, pi/2)).
    """
    if m0 < 0 or m1 < 0:
        raise CostError(f"Dirac masses must be non-negative (got {m0}, {m1})")
    d = float(np.linalg.norm(np.asarray(x0, dtype=float) - np.asarray(x1, dtype=float)))
    cos_d = 0.0 if d >= math.pi / 2 else math.cos(d)
    value = m0 + m1 - 2.0 * math.sqrt(m0 * m1) * cos_d
    lower = (math.sqrt(m0) - math.sqrt(m1)) ** 2
    return min(max(value, lower), m0 + m1)


def hk_optimal_dirac_mass(x0, u0: float, x1, u1: float) -> float:
    """Mass sent between two Diracs by an optimal HK plan: cos(d) sqrt(u0 u1), 0 beyond pi/2."""
    d = float(np.linalg.norm(np.asarray(x0, dtype=float) - np.asarray(x1, dtype=float)))
    if d >= math.pi / 2:
        return 0.0
    return math.cos(d) * math.sqrt(u0 * u1)


def kl_masses(m: NDArray[np.float64], n: NDArray[np.float64]) -> float:
    """
    sum n * phi(m / n) with phi(s) = s log s - s + 1 and 0 log 0 = 0.

    Mass of m where n vanishes makes the divergence +inf.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    if m.shape != n.shape:
        raise SupportMismatchError(f"Mass vectors differ in length: {m.shape} vs {n.shape}")
    if np.any((m > 0) & (n <= 0)):
        return HK_INFINITY
    positive = m > 0
    total = float(n[~positive].sum())
    mp, np_ = m[positive], n[positive]
    total += float(np.sum(mp * np.log(mp / np_) - mp + np_))
    return max(total, 0.0)


def _check_shared_support(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if not mu.same_support(nu):
        raise SupportMismatchError(f"Measures must share the same support ({len(mu)} vs {len(nu)} points)")


def kl_divergence(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """KL(mu | nu) for two measures on the same support."""
    _check_shared_support(mu, nu)
    return kl_masses(mu.masses, nu.masses)


def hellinger_sq(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Squared Hellinger distance sum (sqrt m - sqrt n)^2 on a shared support."""
    _check_shared_support(mu, nu)
    return hellinger_sq_masses(mu.masses, nu.masses)


def hellinger_sq_masses(m: NDArray[np.float64], n: NDArray[np.float64]) -> float:
    return float(np.sum((np.sqrt(m) - np.sqrt(n)) ** 2))


def transport_cost(weights: NDArray[np.float64], cost: NDArray[np.float64]) -> float:
    """<C, pi> where zero-weight entries contribute nothing even at infinite cost."""
    used = weights > 0
    if np.any(np.isinf(cost[used])):
        return HK_INFINITY
    return float(np.sum(cost[used] * weights[used]))


def soft_marginal_objective(pi: Union[NDArray[np.float64], object], mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> float:
    """
    Unregularized soft-marginal objective of a plan.

    <C, pi> + KL(pi 1 | mu0) + KL(pi^T 1 | mu1) with C the HK cost.

    Args:
        pi: Plan weights (n0, n1) or any object with a ``weights`` attribute
        mu0: Source measure
        mu1: Target measure
    """
    weights = np.asarray(getattr(pi, 'weights', pi), dtype=float)
    if weights.shape != (len(mu0), len(mu1)):
        raise SupportMismatchError(f"Plan shape {weights.shape} does not match measures ({len(mu0)}, {len(mu1)})")
    if np.any(weights < 0):
        raise CostError("Plan weights must be non-negative")
    cost = hk_cost_matrix(mu0.points, mu1.points)
    value = transport_cost(weights, cost)
    if math.isinf(value):
        return value
    return value + kl_masses(weights.sum(axis=1), mu0.masses) + kl_masses(weights.sum(axis=0), mu1.masses)
