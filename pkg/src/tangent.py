"""
Tangent Space of the Hellinger-Kantorovich Metric

Barycentric projection of a coupling into a map-induced plan, the HK
logarithmic and exponential maps at a reference measure, the tangent inner
product and the linearized HK / W2 distances. Tangent fields also flatten
into weighted vectors whose Euclidean geometry equals the tangent metric.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray

from .config import config
from .cost import hellinger_sq_masses
from .measure import DiscreteMeasure, _fmt, point_cloud, save_measure, union_support

logger = logging.getLogger('hk_tangent.tangent')

# Densities u0 are clamped below at this value on transported points.
DENSITY_FLOOR = 1e-15
# A transported row whose reference mass is below this is inconsistent.
MIN_TRANSPORTED_MASS = 1e-12
# An HK plan moves at most sqrt(mu0(x_i) * |mu1|) out of row i. Plans get this
# relative slack plus sqrt(epsilon) for the entropic blur.
ROW_MASS_SLACK = 0.05
ALPHA_SLACK = 1e-12


class TangentError(Exception):
    """Base exception for tangent-space operations."""
    pass


class DecompositionError(TangentError):
    """Raised when a coupling cannot be decomposed against its measures."""
    pass


class ExpDomainError(TangentError):
    """Raised for tangent data outside the domain of the exponential map."""
    pass


@dataclass(frozen=True, eq=False)
class LebesgueDecomposition:
    """
    Map-based summary of a coupling pi between mu0 and mu1.

    mu0 = u0 * sigma + mu0_perp and mu1 = u1 * (pi^T 1) + mu1_perp, where
    sigma = pi 1. ``mu0_perp`` and ``mu1_perp`` live on the full supports of
    mu0 and mu1 (zero where nothing is singular), so all per-point arrays
    share the indexing of the measures.
    """

    sigma: DiscreteMeasure
    transport_map: NDArray[np.float64]
    u0: NDArray[np.float64]
    u1_of_T: NDArray[np.float64]
    u1: NDArray[np.float64]
    mu0_perp: DiscreteMeasure
    mu1_perp: DiscreteMeasure

    @property
    def transported(self) -> NDArray[np.bool_]:
        return self.sigma.masses > 0


@dataclass(frozen=True, eq=False)
class TangentField:
    """
    HK tangent data (v0, alpha0, mu1_perp) at a reference measure.

    ``mu1_perp_sqrt`` holds the singular target part as a plain measure and
    is paired through square roots of masses; None means it is zero.
    """

    points: NDArray[np.float64]
    v0: NDArray[np.float64]
    alpha0: NDArray[np.float64]
    mu1_perp_sqrt: Optional[DiscreteMeasure] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        v0 = np.array(self.v0, dtype=float).reshape(points.shape)
        alpha0 = np.array(self.alpha0, dtype=float).reshape(points.shape[0])
        for array in (points, v0, alpha0):
            array.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'v0', v0)
        object.__setattr__(self, 'alpha0', alpha0)

    @classmethod
    def zero(cls, mu0: DiscreteMeasure) -> 'TangentField':
        return cls(mu0.points, np.zeros_like(mu0.points), np.zeros(len(mu0)))

    @property
    def singular_mass(self) -> float:
        return 0.0 if self.mu1_perp_sqrt is None else self.mu1_perp_sqrt.total_mass

    def scaled(self, tau: float) -> 'TangentField':
        """(tau v0, tau alpha0, tau^2 mu1_perp): the tangent at time tau along the geodesic."""
        perp = None if self.mu1_perp_sqrt is None else self.mu1_perp_sqrt.scaled(tau ** 2)
        return TangentField(self.points, tau * self.v0, tau * self.alpha0, perp)


@dataclass(frozen=True, eq=False)
class W2TangentField:
    """Displacement field T(x) - x at a reference measure."""

    points: NDArray[np.float64]
    v0: NDArray[np.float64]

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        v0 = np.array(self.v0, dtype=float).reshape(points.shape)
        if not np.all(np.isfinite(v0)):
            raise TangentError("W2 displacement must be finite")
        for array in (points, v0):
            array.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'v0', v0)


def _check_coupling_shape(weights: NDArray[np.float64], mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> None:
    if weights.shape != (len(mu0), len(mu1)):
        raise DecompositionError(f"Coupling shape {weights.shape} does not match measures ({len(mu0)}, {len(mu1)})")


def _barycentric_map(weights: NDArray[np.float64], x0: NDArray[np.float64], x1: NDArray[np.float64]):
    """Row sums and row-conditional mean targets (identity on empty rows)."""
    sigma = weights.sum(axis=1)
    transported = sigma > 0
    target = x0.copy()
    target[transported] = (weights[transported] @ x1) / sigma[transported, None]
    return sigma, target


def barycentric_project(coupling, mu0: DiscreteMeasure, mu1: DiscreteMeasure, singular_threshold: Optional[float] = None) -> LebesgueDecomposition:
    """
    Replace a coupling by the plan induced by its barycentric map.

    Args:
        coupling: Coupling between mu0 and mu1
        mu0: Reference measure
        mu1: Target measure
        singular_threshold: Coverage below which target mass counts as
            singular (0 keeps only uncovered points); config default if None

    Raises:
        DecompositionError: If the coupling puts mass where mu0 has none or
            moves more out of a point than an HK plan can
    """
    theta = config.singular_threshold if singular_threshold is None else float(singular_threshold)
    if not 0 <= theta <= 1:
        raise DecompositionError(f"Singular threshold must lie in [0, 1] (got {theta})")
    weights = np.asarray(coupling.weights, dtype=float)
    _check_coupling_shape(weights, mu0, mu1)

    sigma, target = _barycentric_map(weights, mu0.points, mu1.points)
    transported = sigma > 0
    if np.any(transported & (mu0.masses <= 0)):
        raise DecompositionError("Coupling carries row mass outside the support of mu0")
    if np.any(transported & (mu0.masses < MIN_TRANSPORTED_MASS)):
        raise DecompositionError(f"Transported reference point with mass below {MIN_TRANSPORTED_MASS:g}")
    row_bound = (1.0 + ROW_MASS_SLACK + math.sqrt(max(coupling.epsilon, 0.0))) * np.sqrt(mu0.masses * mu1.total_mass)
    excess = sigma > row_bound + MIN_TRANSPORTED_MASS
    if np.any(excess):
        worst = int(np.argmax(sigma - row_bound))
        raise DecompositionError(f"Coupling moves {sigma[worst]:.6g} out of reference point {worst}, more than an HK plan can (bound {row_bound[worst]:.6g}); {int(excess.sum())} rows affected")

    u0 = np.zeros(len(mu0))
    u0[transported] = np.maximum(mu0.masses[transported] / sigma[transported], DENSITY_FLOOR)

    nu1 = weights.sum(axis=0)
    m1 = mu1.masses
    coverage = np.zeros(len(mu1))
    positive = m1 > 0
    coverage[positive] = nu1[positive] / m1[positive]
    if theta > 0:
        singular_fraction = np.clip(1.0 - coverage / theta, 0.0, 1.0)
    else:
        singular_fraction = (nu1 <= 0).astype(float)
    singular_fraction[~positive] = 0.0
    perp1 = singular_fraction * m1

    u1 = np.zeros(len(mu1))
    covered = nu1 > 0
    u1[covered] = (m1[covered] - perp1[covered]) / nu1[covered]
    u1_of_T = np.zeros(len(mu0))
    u1_of_T[transported] = (weights[transported] @ u1) / sigma[transported]

    perp0 = np.where(transported, 0.0, mu0.masses)
    if perp1.sum() > 0:
        logger.debug(f"Singular target mass {perp1.sum():.3g} detected on {int((perp1 > 0).sum())} points")

    return LebesgueDecomposition(
        sigma=DiscreteMeasure(mu0.points, sigma, mu0.domain_box),
        transport_map=target,
        u0=u0,
        u1_of_T=u1_of_T,
        u1=u1,
        mu0_perp=mu0.with_masses(perp0),
        mu1_perp=mu1.with_masses(perp1),
    )


def hk_log(mu0: DiscreteMeasure, mu1: DiscreteMeasure, decomp: LebesgueDecomposition) -> TangentField:
    """
    HK logarithmic map of mu1 at mu0 from a decomposed coupling.

    v0 = sqrt(u1(T)/u0) sin|T - x| (T - x)/|T - x| and
    alpha0 = 2 (sqrt(u1(T)/u0) cos|T - x| - 1) on transported points;
    v0 = 0, alpha0 = -2 on the singular part of mu0.
    """
    if np.any(mu0.masses <= 0):
        raise TangentError("The reference measure must be strictly positive on its support")
    if len(decomp.u0) != len(mu0) or len(decomp.u1) != len(mu1):
        raise DecompositionError("Decomposition does not match the measures")

    transported = decomp.transported
    if np.any(decomp.u0[transported] <= 0):
        raise DecompositionError("Zero reference density on a transported point")

    displacement = decomp.transport_map - mu0.points
    dist = np.linalg.norm(displacement, axis=1)
    if np.any(dist[transported] >= math.pi / 2):
        raise DecompositionError("Barycentric target at or beyond the transport range pi/2")

    ratio = np.sqrt(decomp.u1_of_T[transported] / decomp.u0[transported])
    d = dist[transported]
    unit = np.zeros_like(displacement[transported])
    moving = d > 0
    unit[moving] = displacement[transported][moving] / d[moving, None]

    v0 = np.zeros_like(mu0.points)
    alpha0 = np.full(len(mu0), -2.0)
    v0[transported] = (ratio * np.sin(d))[:, None] * unit
    alpha0[transported] = 2.0 * (ratio * np.cos(d) - 1.0)

    perp = decomp.mu1_perp
    return TangentField(mu0.points, v0, alpha0, perp.compact() if perp.total_mass > 0 else None)


def _check_field(mu0: DiscreteMeasure, tf) -> None:
    if tf.points.shape != mu0.points.shape or not np.allclose(tf.points, mu0.points, rtol=0.0, atol=1e-12):
        raise TangentError("Tangent field is not defined on the support of the reference measure")


def hk_exp(mu0: DiscreteMeasure, tf: TangentField) -> DiscreteMeasure:
    """
    HK exponential map: push q^2 mu0 (off S) along x + phi v0/|v0|, add mu1_perp.

    With a = |v0|, b = alpha0/2 + 1: q^2 = a^2 + b^2, phi = atan2(a, b) and
    S = {a = 0, b = 0}.

    Raises:
        ExpDomainError: If alpha0 < -2 anywhere
    """
    _check_field(mu0, tf)
    if np.any(tf.alpha0 < -2.0 - ALPHA_SLACK):
        raise ExpDomainError(f"Growth rate below -2 (minimum {tf.alpha0.min():.6g}) lies outside the exponential map's domain")

    a = np.linalg.norm(tf.v0, axis=1)
    b = np.maximum(tf.alpha0 / 2.0 + 1.0, 0.0)
    q2 = a ** 2 + b ** 2
    phi = np.arctan2(a, b)
    unit = np.zeros_like(tf.v0)
    moving = a > 0
    unit[moving] = tf.v0[moving] / a[moving, None]

    points = mu0.points + phi[:, None] * unit
    masses = q2 * mu0.masses
    if tf.mu1_perp_sqrt is not None:
        points = np.vstack([points, tf.mu1_perp_sqrt.points])
        masses = np.concatenate([masses, tf.mu1_perp_sqrt.masses])
    return point_cloud(points, masses, fallback=mu0.points)


def _singular_pairing(perp1: Optional[DiscreteMeasure], perp2: Optional[DiscreteMeasure]) -> float:
    if perp1 is None or perp2 is None:
        return 0.0
    _, m1, m2 = union_support(perp1, perp2)
    return float(np.sum(np.sqrt(m1 * m2)))


def hk_inner(mu0: DiscreteMeasure, tf1: TangentField, tf2: TangentField) -> float:
    """Tangent inner product: sum mu0 (v.v' + alpha alpha'/4) plus sum sqrt(m m') over shared singular points."""
    _check_field(mu0, tf1)
    _check_field(mu0, tf2)
    w = mu0.masses
    value = float(np.sum(w * (np.sum(tf1.v0 * tf2.v0, axis=1) + 0.25 * tf1.alpha0 * tf2.alpha0)))
    return value + _singular_pairing(tf1.mu1_perp_sqrt, tf2.mu1_perp_sqrt)


def hk_lin_dist(mu0: DiscreteMeasure, tf1: TangentField, tf2: TangentField) -> float:
    """Linearized HK distance between two tangent fields at mu0."""
    _check_field(mu0, tf1)
    _check_field(mu0, tf2)
    w = mu0.masses
    value = float(np.sum(w * np.sum((tf1.v0 - tf2.v0) ** 2, axis=1)))
    value += 0.25 * float(np.sum(w * (tf1.alpha0 - tf2.alpha0) ** 2))

    perp1, perp2 = tf1.mu1_perp_sqrt, tf2.mu1_perp_sqrt
    if perp1 is not None or perp2 is not None:
        empty = DiscreteMeasure(mu0.points[:1], np.zeros(1))
        _, m1, m2 = union_support(perp1 or empty, perp2 or empty)
        value += hellinger_sq_masses(m1, m2)
    return math.sqrt(max(value, 0.0))


def w2_log(mu0: DiscreteMeasure, mu1: DiscreteMeasure, coupling) -> W2TangentField:
    """Displacement of the barycentric map of a balanced coupling."""
    weights = np.asarray(coupling.weights, dtype=float)
    if weights.shape != (len(mu0), len(mu1)):
        raise TangentError(f"Coupling shape {weights.shape} does not match measures ({len(mu0)}, {len(mu1)})")
    _, target = _barycentric_map(weights, mu0.points, mu1.points)
    return W2TangentField(mu0.points, target - mu0.points)


def w2_exp(mu0: DiscreteMeasure, tf: W2TangentField) -> DiscreteMeasure:
    """(id + v0) pushforward of mu0."""
    _check_field(mu0, tf)
    return DiscreteMeasure(mu0.points + tf.v0, mu0.masses)


def w2_inner(mu0: DiscreteMeasure, tf1: W2TangentField, tf2: W2TangentField) -> float:
    _check_field(mu0, tf1)
    _check_field(mu0, tf2)
    return float(np.sum(mu0.masses * np.sum(tf1.v0 * tf2.v0, axis=1)))


def w2_lin_dist(mu0: DiscreteMeasure, tf1: W2TangentField, tf2: W2TangentField) -> float:
    _check_field(mu0, tf1)
    _check_field(mu0, tf2)
    diff = W2TangentField(mu0.points, tf1.v0 - tf2.v0)
    return math.sqrt(max(w2_inner(mu0, diff, diff), 0.0))


def hk_embedding_vector(mu0: DiscreteMeasure, tf: TangentField) -> NDArray[np.float64]:
    """
    Flatten (v0, alpha0) into (vx sqrt(w), vy sqrt(w), ..., alpha0 sqrt(w)/2).

    Channels are stored one after another. The singular part is not
    represented; callers must check it is empty.
    """
    _check_field(mu0, tf)
    root = np.sqrt(mu0.masses)
    return np.concatenate([(tf.v0 * root[:, None]).T.ravel(), 0.5 * tf.alpha0 * root])


def w2_embedding_vector(mu0: DiscreteMeasure, tf: W2TangentField) -> NDArray[np.float64]:
    _check_field(mu0, tf)
    return (tf.v0 * np.sqrt(mu0.masses)[:, None]).T.ravel()


def tangent_from_vector(mu0: DiscreteMeasure, vector: NDArray[np.float64], metric: str = 'hk') -> Union[TangentField, W2TangentField]:
    """Undo the embedding weighting; the reference must be strictly positive."""
    n, d = mu0.points.shape
    vector = np.asarray(vector, dtype=float).reshape(-1)
    expected = n * d + (1 if metric == 'hk' else 0) * n
    if metric not in ('hk', 'w2'):
        raise TangentError(f"Unknown metric {metric!r}")
    if vector.size != expected:
        raise TangentError(f"Vector of length {vector.size} does not fit {n} points in {metric} ({expected} expected)")
    if np.any(mu0.masses <= 0):
        raise TangentError("The reference measure must be strictly positive on its support")

    root = np.sqrt(mu0.masses)
    v0 = vector[:n * d].reshape(d, n).T / root[:, None]
    if metric == 'w2':
        return W2TangentField(mu0.points, v0)
    alpha0 = 2.0 * vector[n * d:] / root
    return TangentField(mu0.points, v0, alpha0)


def save_tangent_field(tf: TangentField, mu0: DiscreteMeasure, path: str, perp_path: Optional[str] = None) -> str:
    """Write x, y, mass, vx, vy, alpha rows; the singular part goes to ``perp_path`` as csv_points."""
    _check_field(mu0, tf)
    if mu0.dim != 2:
        raise TangentError("Tangent field files store planar fields only")
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['x', 'y', 'mass', 'vx', 'vy', 'alpha'])
        for (x, y), m, (vx, vy), alpha in zip(mu0.points, mu0.masses, tf.v0, tf.alpha0):
            writer.writerow([_fmt(x), _fmt(y), _fmt(m), _fmt(vx), _fmt(vy), _fmt(alpha)])

    if perp_path is not None:
        perp = tf.mu1_perp_sqrt if tf.mu1_perp_sqrt is not None else DiscreteMeasure(mu0.points[:1], np.zeros(1))
        save_measure(perp, perp_path)
    return str(file_path)
