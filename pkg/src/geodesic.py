"""
Geodesics

Closed-form HK geodesics between two Diracs, geodesic interpolation of
general measures from a decomposed coupling, and W2 displacement
interpolation as the baseline.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .measure import DiscreteMeasure, point_cloud, rescale_domain
from .solver import Coupling, SolverConfig, solve_hk, solve_w2
from .tangent import LebesgueDecomposition, barycentric_project

logger = logging.getLogger('hk_tangent.geodesic')

# Interpolated atoms lighter than this fraction of the total are dropped.
_DUST = 1e-14


class GeodesicError(Exception):
    """Raised for invalid geodesic inputs."""
    pass


@dataclass(frozen=True, eq=False)
class DiracGeodesicEval:
    """Position X, mass M and travelled angle phi of a Dirac geodesic at one time."""

    position: NDArray[np.float64]
    mass: float
    angle: float


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise GeodesicError(f"Time must lie in [0, 1] (got {t})")
    return t


def _dirac_arrays(x0, u0, x1, u1, t: float) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Vectorized (X, M, phi) for rows of Dirac pairs closer than pi/2."""
    diff = x1 - x0
    d = np.linalg.norm(diff, axis=1)
    cos_d = np.cos(d)
    root0, root1 = np.sqrt(u0), np.sqrt(u1)
    mass = (1 - t) ** 2 * u0 + t ** 2 * u1 + 2 * t * (1 - t) * root0 * root1 * cos_d
    mass = np.maximum(mass, 0.0)

    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = ((1 - t) * root0 + t * root1 * cos_d) / np.sqrt(mass)
        angle = np.arccos(np.clip(ratio, -1.0, 1.0))
    if t == 0:
        angle = np.zeros_like(d)
    elif t == 1:
        angle = np.where(u1 == 0, 0.0, d)
    else:
        angle = np.where(u1 == 0, 0.0, np.where(u0 == 0, d, angle))
    angle = np.nan_to_num(angle, nan=0.0)

    unit = np.zeros_like(diff)
    moving = d > 0
    unit[moving] = diff[moving] / d[moving, None]
    return x0 + angle[:, None] * unit, mass, angle


def dirac_geodesic(x0, m0: float, x1, m1: float, t: float) -> DiracGeodesicEval:
    """
    HK geodesic between m0 delta(x0) and m1 delta(x1) at time t.

    M = (1-t)^2 m0 + t^2 m1 + 2t(1-t) sqrt(m0 m1) cos d, the Dirac moving
    an angle phi along the segment from x0 towards x1.

    Raises:
        GeodesicError: If |x0 - x1| >= pi/2 (use teleport_geodesic)
    """
    t = _check_time(t)
    if m0 < 0 or m1 < 0:
        raise GeodesicError(f"Masses must be non-negative (got {m0}, {m1})")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    if np.linalg.norm(x1 - x0) >= math.pi / 2:
        raise GeodesicError("Diracs at distance >= pi/2 do not exchange mass; use the teleport geodesic")

    position, mass, angle = _dirac_arrays(x0[None, :], np.array([float(m0)]), x1[None, :], np.array([float(m1)]), t)
    return DiracGeodesicEval(position[0], float(mass[0]), float(angle[0]))


def teleport_geodesic(x0, m0: float, x1, m1: float, t: float) -> DiscreteMeasure:
    """Pure destruction at x0 and creation at x1: (1-t)^2 m0 delta(x0) + t^2 m1 delta(x1)."""
    t = _check_time(t)
    points = np.vstack([np.atleast_1d(np.asarray(x0, dtype=float)), np.atleast_1d(np.asarray(x1, dtype=float))])
    return point_cloud(points, np.array([(1 - t) ** 2 * m0, t ** 2 * m1]), fallback=points)


def dirac_geodesic_measure(x0, m0: float, x1, m1: float, t: float) -> DiscreteMeasure:
    """Dirac geodesic as a measure, routing distances >= pi/2 to the teleport curve."""
    if np.linalg.norm(np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)) >= math.pi / 2:
        return teleport_geodesic(x0, m0, x1, m1, t)
    point = dirac_geodesic(x0, m0, x1, m1, t)
    return DiscreteMeasure(point.position[None, :], np.array([point.mass]))


def interpolate_hk(coupling: Coupling, decomp: LebesgueDecomposition, t: float) -> DiscreteMeasure:
    """
    HK geodesic at time t from a coupling and its decomposition.

    Every plan atom (i, j) travels as a Dirac geodesic between densities
    u0[i] and u1[j], carrying weight pi_ij; the singular parts fade out as
    (1-t)^2 mu0_perp and fade in as t^2 mu1_perp in place.
    """
    t = _check_time(t)
    weights = np.asarray(coupling.weights)
    x0 = coupling.row_marginal.points
    x1 = coupling.col_marginal.points
    if len(decomp.u0) != weights.shape[0] or len(decomp.u1) != weights.shape[1]:
        raise GeodesicError("Decomposition is inconsistent with the coupling")

    rows, cols = np.nonzero(weights > 0)
    if np.any(np.linalg.norm(x1[cols] - x0[rows], axis=1) >= math.pi / 2):
        raise GeodesicError("Coupling moves mass over a distance >= pi/2")
    position, mass, _ = _dirac_arrays(x0[rows], decomp.u0[rows], x1[cols], decomp.u1[cols], t)
    atom_mass = mass * weights[rows, cols]

    perp0, perp1 = decomp.mu0_perp, decomp.mu1_perp
    points = np.vstack([position, perp0.points, perp1.points])
    masses = np.concatenate([atom_mass, (1 - t) ** 2 * perp0.masses, t ** 2 * perp1.masses])

    total = masses.sum()
    if total > 0:
        masses = np.where(masses > _DUST * total, masses, 0.0)
    return point_cloud(points, masses, fallback=x0)


def interpolate_w2(coupling: Coupling, t: float) -> DiscreteMeasure:
    """Displacement interpolation: each plan atom at (1-t) x0 + t x1."""
    t = _check_time(t)
    weights = np.asarray(coupling.weights)
    x0 = coupling.row_marginal.points
    x1 = coupling.col_marginal.points
    if x0.shape[1] != x1.shape[1]:
        raise GeodesicError("Coupling endpoints live in different dimensions")
    rows, cols = np.nonzero(weights > 0)
    points = (1 - t) * x0[rows] + t * x1[cols]
    return point_cloud(points, weights[rows, cols], fallback=x0)


def hk_geodesic(mu0: DiscreteMeasure, mu1: DiscreteMeasure, times: Sequence[float], kappa: float = 1.0, cfg: Optional[SolverConfig] = None,
                singular_threshold: Optional[float] = None) -> Tuple[List[DiscreteMeasure], Coupling]:
    """
    Solve, decompose and interpolate the HK geodesic at length scale kappa.

    Returns:
        (measures at each time in original coordinates, coupling at unit scale)
    """
    scaled0 = rescale_domain(mu0, kappa)
    scaled1 = rescale_domain(mu1, kappa)
    coupling = solve_hk(scaled0, scaled1, (cfg or SolverConfig()).at_length_scale(kappa))
    decomp = barycentric_project(coupling, scaled0, scaled1, singular_threshold)
    frames = [rescale_domain(interpolate_hk(coupling, decomp, t), 1.0 / kappa) for t in times]
    logger.debug(f"HK geodesic with {len(frames)} frames, plan mass {coupling.total_mass:.6g}")
    return frames, coupling


def w2_geodesic(mu0: DiscreteMeasure, mu1: DiscreteMeasure, times: Sequence[float], cfg: Optional[SolverConfig] = None) -> Tuple[List[DiscreteMeasure], Coupling]:
    coupling = solve_w2(mu0, mu1, cfg)
    return [interpolate_w2(coupling, t) for t in times], coupling
