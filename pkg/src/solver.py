"""
Entropic Transport Solvers

Sinkhorn iterations for the soft-marginal Hellinger-Kantorovich problem and
for balanced W2 transport, with epsilon annealing and a Newton polish of the
dual at the final level, plus a tiny exact oracle used to certify the
entropic solutions in tests.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from dotenv import dotenv_values
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import logsumexp

from .config import config
from .cost import hk_cost_matrix, kl_masses, soft_marginal_objective, transport_cost, w2_cost_matrix
from .measure import DiscreteMeasure, rescale_domain

logger = logging.getLogger('hk_tangent.solver')

ORACLE_MAX_ENTRIES = 9
ORACLE_GAP_TOLERANCE = 1e-6
# Scaling-domain iterations absorb u, v into the kernel once they leave this range.
_SCALING_BOUND = 1e3
# Residual at which intermediate epsilon levels hand over to the next one.
_WARM_START_TOLERANCE = 1e-3
# Newton polishing at the final level: residual and iteration cap of the
# Sinkhorn warmup, largest active system solved densely, and its step budget.
_NEWTON_HANDOFF = 1e-3
_NEWTON_WARMUP = 500
_NEWTON_MAX_SIZE = 3000
_NEWTON_MAX_STEPS = 50
_NEWTON_DIAG_FLOOR = 1e-12
_NEWTON_RIDGE = 1e-10
_LINE_SEARCH_STEPS = tuple(0.5 ** k for k in range(16))
_TRUE_VALUES = ('true', '1', 'yes', 'on')
_FALSE_VALUES = ('false', '0', 'no', 'off')


class SolverError(Exception):
    """Base exception for solver failures."""
    pass


class SolverConfigError(SolverError):
    """Raised for invalid solver settings."""
    pass


class UnbalancedMassError(SolverError):
    """Raised when balanced transport is asked for measures of different mass."""
    pass


class OracleSizeError(SolverError):
    """Raised when the brute-force oracle is given too many plan entries."""
    pass


@dataclass(frozen=True)
class SolverConfig:
    """
    Entropic solver settings.

    Epsilons are in squared units of the point coordinates. ``epsilon_start=None``
    picks the first annealing level from the squared diameter of the two
    supports. ``tol_marginal`` bounds the optimality residual of the final
    plan relative to the larger input mass.
    """

    epsilon_start: Optional[float] = None
    epsilon_final: float = field(default_factory=lambda: config.epsilon_final)
    epsilon_decay: float = field(default_factory=lambda: config.epsilon_decay)
    max_iters_per_eps: int = field(default_factory=lambda: config.max_iters_per_eps)
    tol_marginal: float = field(default_factory=lambda: config.tol_marginal)
    log_domain: bool = field(default_factory=lambda: config.log_domain)

    def __post_init__(self):
        if not self.epsilon_final > 0:
            raise SolverConfigError(f"epsilon_final must be positive (got {self.epsilon_final})")
        if self.epsilon_start is not None and not self.epsilon_start >= self.epsilon_final:
            raise SolverConfigError(f"epsilon_start ({self.epsilon_start}) must be at least epsilon_final ({self.epsilon_final})")
        if not 0 < self.epsilon_decay < 1:
            raise SolverConfigError(f"epsilon_decay must lie in (0, 1) (got {self.epsilon_decay})")
        if int(self.max_iters_per_eps) < 1:
            raise SolverConfigError(f"max_iters_per_eps must be at least 1 (got {self.max_iters_per_eps})")
        if not self.tol_marginal > 0:
            raise SolverConfigError(f"tol_marginal must be positive (got {self.tol_marginal})")
        object.__setattr__(self, 'max_iters_per_eps', int(self.max_iters_per_eps))

    @classmethod
    def from_file(cls, path: str) -> 'SolverConfig':
        """
        Load settings from a flat ``key=value`` file.

        Accepted keys: epsilon_start (a number or ``auto``), epsilon_final,
        epsilon_decay, max_iters_per_eps, tol_marginal, log_domain. Missing
        keys keep their environment defaults.
        """
        if not Path(path).exists():
            raise FileNotFoundError(f"Solver config file not found: {path}")
        values = dotenv_values(path)

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise SolverConfigError(f"Unknown solver config keys in {path}: {', '.join(unknown)}")

        kwargs = {}
        for key, raw in values.items():
            if raw is None or raw.strip() == '':
                raise SolverConfigError(f"Solver config key {key} in {path} has no value")
            raw = raw.strip()
            try:
                if key == 'epsilon_start':
                    kwargs[key] = None if raw.lower() == 'auto' else float(raw)
                elif key == 'max_iters_per_eps':
                    kwargs[key] = int(raw)
                elif key == 'log_domain':
                    if raw.lower() not in _TRUE_VALUES + _FALSE_VALUES:
                        raise ValueError(raw)
                    kwargs[key] = raw.lower() in _TRUE_VALUES
                else:
                    kwargs[key] = float(raw)
            except ValueError:
                raise SolverConfigError(f"Solver config key {key} in {path} has an invalid value {raw!r}")
        return cls(**kwargs)

    def replace(self, **changes) -> 'SolverConfig':
        return dataclasses.replace(self, **changes)

    def at_length_scale(self, kappa: float) -> 'SolverConfig':
        """The same blur for coordinates divided by kappa."""
        if not kappa > 0:
            raise SolverConfigError(f"kappa must be positive (got {kappa})")
        start = None if self.epsilon_start is None else self.epsilon_start / kappa ** 2
        return self.replace(epsilon_start=start, epsilon_final=self.epsilon_final / kappa ** 2)


@dataclass(frozen=True, eq=False)
class Coupling:
    """
    Transport plan between two discrete measures.

    ``weights[i, j]`` is the mass moved from ``row_marginal.points[i]`` to
    ``col_marginal.points[j]``; the marginals are its exact row and column
    sums.
    """

    weights: NDArray[np.float64]
    row_marginal: DiscreteMeasure
    col_marginal: DiscreteMeasure
    objective_value: float
    converged: bool = True
    iterations: int = 0
    epsilon: float = 0.0
    potentials: Optional[Tuple[NDArray[np.float64], NDArray[np.float64]]] = None
    duality_gap: Optional[float] = None
    residual: Optional[float] = None

    @classmethod
    def from_weights(cls, weights: NDArray[np.float64], mu0: DiscreteMeasure, mu1: DiscreteMeasure, objective_value: float, **info) -> 'Coupling':
        weights = np.array(weights, dtype=float)
        weights[weights < 0] = 0.0
        weights.setflags(write=False)
        row = DiscreteMeasure(mu0.points, weights.sum(axis=1), mu0.domain_box)
        col = DiscreteMeasure(mu1.points, weights.sum(axis=0), mu1.domain_box)
        return cls(weights, row, col, float(objective_value), **info)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


def _epsilon_schedule(cfg: SolverConfig, mu0: DiscreteMeasure, mu1: DiscreteMeasure, unbalanced: bool) -> list:
    """Geometric epsilon levels from the start value down to epsilon_final."""
    start = cfg.epsilon_start
    if start is None:
        both = np.vstack([mu0.points, mu1.points])
        start = float(np.sum((both.max(axis=0) - both.min(axis=0)) ** 2))
        if unbalanced:
            # Transport beyond pi/2 is forbidden, so larger blurs carry no information.
            start = min(start, (math.pi / 2) ** 2)
    start = max(start, cfg.epsilon_final)

    levels = []
    eps = start
    while eps > cfg.epsilon_final * (1 + 1e-12):
        levels.append(eps)
        eps *= cfg.epsilon_decay
    levels.append(cfg.epsilon_final)
    return levels


class _SinkhornRun:
    """
    Dual potentials of one entropic solve.

    The plan is pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps). Rows and
    columns without any finite cost are inactive: their potentials stay 0 and
    their plan entries are exactly 0. Instances are single-threaded state.

    Convergence is measured by the optimality residual: the L1 gap between
    the plan marginals and a exp(-f), b exp(-g) (a and b when balanced),
    relative to the larger input mass.
    """

    def __init__(self, cost: NDArray[np.float64], a: NDArray[np.float64], b: NDArray[np.float64], cfg: SolverConfig, unbalanced: bool):
        self.cost = cost
        self.a = a
        self.b = b
        self.cfg = cfg
        self.unbalanced = unbalanced
        with np.errstate(divide='ignore'):
            self.log_a = np.log(a)
            self.log_b = np.log(b)
        # Zero-mass points carry no plan mass; treat them like unreachable ones.
        finite = np.isfinite(cost) & (a[:, None] > 0) & (b[None, :] > 0)
        self.finite = finite
        self.active_rows = finite.any(axis=1)
        self.active_cols = finite.any(axis=0)
        self.mass_scale = max(float(a.sum()), float(b.sum()), np.finfo(float).tiny)
        self.f = np.zeros(a.size)
        self.g = np.zeros(b.size)
        self.iterations = 0
        self.newton_steps = 0
        self.residual = math.inf

    def damping(self, eps: float) -> float:
        return 1.0 / (1.0 + eps) if self.unbalanced else 1.0

    def _neg_cost(self, eps: float) -> NDArray[np.float64]:
        neg = np.full(self.cost.shape, -np.inf)
        neg[self.finite] = -self.cost[self.finite] / eps
        return neg

    def plan_for(self, f: NDArray[np.float64], g: NDArray[np.float64], eps: float) -> NDArray[np.float64]:
        with np.errstate(invalid='ignore', over='ignore'):
            weights = np.exp(self._neg_cost(eps) + (f / eps + self.log_a)[:, None] + (g / eps + self.log_b)[None, :])
        weights[~self.finite] = 0.0
        return weights

    def plan(self, eps: float) -> NDArray[np.float64]:
        return self.plan_for(self.f, self.g, eps)

    def row_target(self, f: NDArray[np.float64]) -> NDArray[np.float64]:
        if not self.unbalanced:
            return self.a
        with np.errstate(over='ignore'):
            return self.a * np.exp(-f)

    def col_target(self, g: NDArray[np.float64]) -> NDArray[np.float64]:
        if not self.unbalanced:
            return self.b
        with np.errstate(over='ignore'):
            return self.b * np.exp(-g)

    def _shift_mass_mode(self, f: NDArray[np.float64], g: NDArray[np.float64]) -> Tuple[NDArray[np.float64], NDArray[np.float64], float]:
        """Maximize the dual exactly along (f + t, g - t)."""
        rows, cols = self.active_rows, self.active_cols
        if not rows.any() or not cols.any():
            return f, g, 0.0
        t = 0.5 * (logsumexp(self.log_a[rows] - f[rows]) - logsumexp(self.log_b[cols] - g[cols]))
        f = f.copy()
        g = g.copy()
        f[rows] += t
        g[cols] -= t
        return f, g, t

    def optimality_residual(self, eps: float) -> float:
        weights = self.plan(eps)
        gap = _l1(weights.sum(axis=1) - self.row_target(self.f), self.active_rows)
        gap += _l1(weights.sum(axis=0) - self.col_target(self.g), self.active_cols)
        return gap / self.mass_scale

    def sweep_log(self, eps: float, tol: float, budget: int) -> bool:
        """
        Log-domain alternating updates at one epsilon level.

        The row sums of the current plan fall out of the next f-update and
        the column sums out of the g-update, so the residual costs nothing
        extra.
        """
        neg_c = self._neg_cost(eps)
        lam = self.damping(eps)
        rows, cols = self.active_rows, self.active_cols
        f, g = self.f, self.g
        col_gap = None
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            for _ in range(budget):
                log_s = logsumexp(neg_c + (g / eps + self.log_b)[None, :], axis=1)
                if col_gap is not None:
                    row_mass = np.exp(self.log_a + f / eps + log_s)
                    self.residual = (_l1(row_mass - self.row_target(f), rows) + col_gap) / self.mass_scale
                    if self.residual <= tol:
                        return True

                self.iterations += 1
                f = -eps * lam * log_s
                f[~rows] = 0.0
                log_t = logsumexp(neg_c + (f / eps + self.log_a)[:, None], axis=0)
                g = -eps * lam * log_t
                g[~cols] = 0.0
                col_mass = np.exp(self.log_b + g / eps + log_t)
                if self.unbalanced:
                    f, g, _ = self._shift_mass_mode(f, g)
                col_gap = _l1(col_mass - self.col_target(g), cols)
                self.f, self.g = f, g

        self.residual = self.optimality_residual(eps)
        return self.residual <= tol

    def sweep_scaling(self, eps: float, tol: float, budget: int) -> bool:
        """
        Scaling-domain updates at one epsilon level.

        u, v multiply a kernel that already contains the absorbed potentials;
        they are folded back into f, g whenever one leaves the stable range.
        """
        lam = self.damping(eps)
        rows, cols = self.active_rows, self.active_cols
        bound = math.log(_SCALING_BOUND)

        f, g = self.f.copy(), self.g.copy()
        K = self.plan_for(f, g, eps)
        F, G = f.copy(), g.copy()
        col_gap = None
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            for _ in range(budget):
                Kv = K @ np.exp((G - g) / eps)
                if col_gap is not None:
                    row_mass = np.exp((F - f) / eps) * Kv
                    self.residual = (_l1(row_mass - self.row_target(F), rows) + col_gap) / self.mass_scale
                    if self.residual <= tol:
                        return True

                self.iterations += 1
                F_new = -eps * lam * (np.log(Kv) - self.log_a - f / eps)
                F_new = np.where(rows & (Kv > 0), F_new, F)
                F_new[~rows] = 0.0
                Ktu = K.T @ np.exp((F_new - f) / eps)
                G_new = -eps * lam * (np.log(Ktu) - self.log_b - g / eps)
                G_new = np.where(cols & (Ktu > 0), G_new, G)
                G_new[~cols] = 0.0
                col_mass = np.exp((G_new - g) / eps) * Ktu
                if self.unbalanced:
                    F_new, G_new, _ = self._shift_mass_mode(F_new, G_new)
                col_gap = _l1(col_mass - self.col_target(G_new), cols)
                F, G = F_new, G_new
                self.f, self.g = F, G

                if max(_sup(F - f, rows), _sup(G - g, cols)) > eps * bound:
                    f, g = F.copy(), G.copy()
                    K = self.plan_for(f, g, eps)

        self.residual = self.optimality_residual(eps)
        return self.residual <= tol

    def sweep(self, eps: float, tol: float, budget: int) -> bool:
        if budget <= 0:
            return False
        if self.cfg.log_domain:
            return self.sweep_log(eps, tol, budget)
        return self.sweep_scaling(eps, tol, budget)

    def _dual_gap(self, f: NDArray[np.float64], g: NDArray[np.float64], eps: float):
        """Dual gradient on the active block: (target - row sums, target - column sums, plan block)."""
        rows, cols = self.active_rows, self.active_cols
        block = self.plan_for(f, g, eps)[np.ix_(rows, cols)]
        gap_f = self.row_target(f)[rows] - block.sum(axis=1)
        gap_g = self.col_target(g)[cols] - block.sum(axis=0)
        return gap_f, gap_g, block

    def _newton_direction(self, f, g, gap_f, gap_g, block, eps: float):
        """
        Solve the Newton system of the entropic dual.

        The negative Hessian times eps is [[diag(r + eps a e^-f), P], [P^T, diag(c + eps b e^-g)]]
        (no eps terms when balanced). It is Jacobi-scaled and given a tiny
        ridge, which fixes the free constant of the balanced dual.
        """
        rows, cols = self.active_rows, self.active_cols
        n_rows = block.shape[0]
        diag = np.concatenate([block.sum(axis=1), block.sum(axis=0)])
        if self.unbalanced:
            diag = diag + eps * np.concatenate([self.row_target(f)[rows], self.col_target(g)[cols]])
        top = diag.max() if diag.size else 0.0
        if not np.isfinite(top) or top <= 0:
            return None
        diag = np.maximum(diag, _NEWTON_DIAG_FLOOR * top)
        scale = 1.0 / np.sqrt(diag)

        size = diag.size
        system = np.zeros((size, size))
        system[:n_rows, n_rows:] = block
        system[n_rows:, :n_rows] = block.T
        system *= scale[:, None] * scale[None, :]
        system[np.diag_indices(size)] = 1.0 + _NEWTON_RIDGE
        rhs = eps * scale * np.concatenate([gap_f, gap_g])
        try:
            step = cho_solve(cho_factor(system), rhs) * scale
        except (LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(step)):
            return None
        return step[:n_rows], step[n_rows:]

    def polish_newton(self, eps: float, tol: float, budget: int) -> bool:
        """
        Damped Newton steps on the dual at a fixed epsilon.

        Steps are backtracked until the squared dual gradient decreases.
        Returns False when the budget runs out or no step makes progress.
        """
        rows, cols = self.active_rows, self.active_cols
        f, g = self.f.copy(), self.g.copy()
        gap_f, gap_g, block = self._dual_gap(f, g, eps)
        merit = float(gap_f @ gap_f + gap_g @ gap_g)
        for _ in range(budget):
            self.residual = (float(np.abs(gap_f).sum() + np.abs(gap_g).sum())) / self.mass_scale
            if self.residual <= tol:
                return True
            direction = self._newton_direction(f, g, gap_f, gap_g, block, eps)
            if direction is None:
                return False
            self.iterations += 1
            self.newton_steps += 1

            for step in _LINE_SEARCH_STEPS:
                f_try, g_try = f.copy(), g.copy()
                f_try[rows] += step * direction[0]
                g_try[cols] += step * direction[1]
                trial = self._dual_gap(f_try, g_try, eps)
                trial_merit = float(trial[0] @ trial[0] + trial[1] @ trial[1])
                if np.isfinite(trial_merit) and trial_merit <= (1.0 - 1e-4 * step) * merit:
                    break
            else:
                logger.debug(f"Newton line search stalled at residual {self.residual:.3g}")
                return False

            f, g = f_try, g_try
            gap_f, gap_g, block = trial
            merit = trial_merit
            self.f, self.g = f, g

        self.residual = (float(np.abs(gap_f).sum() + np.abs(gap_g).sum())) / self.mass_scale
        return self.residual <= tol

    def _newton_fits(self) -> bool:
        size = int(self.active_rows.sum() + self.active_cols.sum())
        return 0 < size <= _NEWTON_MAX_SIZE and self.active_rows.any() and self.active_cols.any()

    def solve_final_level(self, eps: float) -> bool:
        """
        Sinkhorn until the residual is small enough for Newton, then Newton,
        then Sinkhorn again with whatever budget remains.
        """
        tol = self.cfg.tol_marginal
        budget = self.cfg.max_iters_per_eps
        if not self._newton_fits():
            return self.sweep(eps, tol, budget)

        start = self.iterations
        warmup = max(1, min(_NEWTON_WARMUP, budget - _NEWTON_MAX_STEPS))
        if self.sweep(eps, max(tol, _NEWTON_HANDOFF), warmup) and self.residual <= tol:
            return True
        remaining = budget - (self.iterations - start)
        if remaining > 0 and self.polish_newton(eps, tol, min(remaining, _NEWTON_MAX_STEPS)):
            return True
        return self.sweep(eps, tol, budget - (self.iterations - start))

    def run(self, levels: list) -> Tuple[NDArray[np.float64], bool, float]:
        """Anneal through the epsilon levels; returns (plan, converged, final epsilon)."""
        warm_tol = max(self.cfg.tol_marginal, _WARM_START_TOLERANCE)
        for eps in levels[:-1]:
            done = self.sweep(eps, warm_tol, self.cfg.max_iters_per_eps)
            logger.debug(f"eps={eps:.3g}: residual {self.residual:.3g}{'' if done else ' (budget exhausted)'} after {self.iterations} total iterations")
        eps = levels[-1]
        converged = self.solve_final_level(eps)
        logger.debug(f"final eps={eps:.3g}: residual {self.residual:.3g} after {self.iterations} iterations ({self.newton_steps} Newton)")
        return self.plan(eps), converged, eps


def _sup(values: NDArray[np.float64], mask: NDArray[np.bool_]) -> float:
    return float(np.abs(values[mask]).max()) if mask.any() else 0.0


def _l1(values: NDArray[np.float64], mask: NDArray[np.bool_]) -> float:
    return float(np.abs(values[mask]).sum()) if mask.any() else 0.0


def _check_dimensions(mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> None:
    if mu0.dim != mu1.dim:
        raise SolverError(f"Measures live in different dimensions ({mu0.dim} vs {mu1.dim})")


def solve_hk(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cfg: Optional[SolverConfig] = None) -> Coupling:
    """
    Entropic soft-marginal HK transport between two measures.

    Args:
        mu0: Source measure (already divided by kappa if kappa != 1)
        mu1: Target measure
        cfg: Solver settings, environment defaults when None

    Returns:
        Coupling whose objective_value is the unregularized soft-marginal
        objective of the returned plan
    """
    cfg = cfg or SolverConfig()
    _check_dimensions(mu0, mu1)
    cost = hk_cost_matrix(mu0.points, mu1.points)
    run = _SinkhornRun(cost, mu0.masses, mu1.masses, cfg, unbalanced=True)
    weights, converged, eps = run.run(_epsilon_schedule(cfg, mu0, mu1, unbalanced=True))

    value = soft_marginal_objective(weights, mu0, mu1)
    if not converged:
        logger.warning(f"HK solver stopped at residual {run.residual:.3g} (tolerance {cfg.tol_marginal:g}) at eps={eps:.3g}; returning last iterate")
    logger.debug(f"HK solve {len(mu0)}x{len(mu1)}: objective {value:.10g}, {run.iterations} iterations")
    return Coupling.from_weights(weights, mu0, mu1, value, converged=converged, iterations=run.iterations, epsilon=eps, potentials=(run.f.copy(), run.g.copy()),
                                 residual=run.residual)


def solve_w2(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cfg: Optional[SolverConfig] = None) -> Coupling:
    """Balanced entropic W2 transport; both measures must carry the same mass."""
    cfg = cfg or SolverConfig()
    _check_dimensions(mu0, mu1)
    m0, m1 = mu0.total_mass, mu1.total_mass
    if abs(m0 - m1) > 1e-9 * max(1.0, m0, m1):
        raise UnbalancedMassError(f"W2 transport needs equal total masses (got {m0:.12g} and {m1:.12g}); normalize first")
    if m0 <= 0:
        raise UnbalancedMassError("W2 transport needs positive total mass")

    cost = w2_cost_matrix(mu0.points, mu1.points)
    run = _SinkhornRun(cost, mu0.masses, mu1.masses, cfg, unbalanced=False)
    weights, converged, eps = run.run(_epsilon_schedule(cfg, mu0, mu1, unbalanced=False))

    value = transport_cost(weights, cost)
    if not converged:
        logger.warning(f"W2 solver stopped at marginal violation {run.residual:.3g} (tolerance {cfg.tol_marginal:g}) at eps={eps:.3g}; returning last iterate")
    return Coupling.from_weights(weights, mu0, mu1, value, converged=converged, iterations=run.iterations, epsilon=eps, potentials=(run.f.copy(), run.g.copy()),
                                 residual=run.residual)


def hk_distance_sq(mu0: DiscreteMeasure, mu1: DiscreteMeasure, kappa: float = 1.0, cfg: Optional[SolverConfig] = None) -> Tuple[float, Coupling]:
    """
    Squared HK distance at length scale kappa.

    The domain is divided by kappa, solved at unit scale, and the value is
    multiplied by kappa squared. Epsilons in cfg stay in original units and
    are divided by kappa squared for the rescaled solve. The coupling refers
    to the rescaled measures.
    """
    cfg = (cfg or SolverConfig()).at_length_scale(kappa)
    scaled0 = rescale_domain(mu0, kappa)
    scaled1 = rescale_domain(mu1, kappa)
    coupling = solve_hk(scaled0, scaled1, cfg)
    return kappa ** 2 * coupling.objective_value, coupling


def w2_distance_sq(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cfg: Optional[SolverConfig] = None) -> Tuple[float, Coupling]:
    """Squared W2 distance with its coupling."""
    coupling = solve_w2(mu0, mu1, cfg)
    return coupling.objective_value, coupling


def brute_force_hk(mu0: DiscreteMeasure, mu1: DiscreteMeasure, starts: int = 6, seed: int = 0) -> Tuple[Coupling, float]:
    """
    Exact soft-marginal optimum for tiny instances.

    Runs projected gradient descent with diminishing normalized steps from
    several starts, polishes the best candidate with bounded L-BFGS-B and
    certifies it with a duality gap stored on the coupling.

    Raises:
        OracleSizeError: If the plan has more than nine entries
    """
    n0, n1 = len(mu0), len(mu1)
    if n0 * n1 > ORACLE_MAX_ENTRIES:
        raise OracleSizeError(f"Oracle handles at most {ORACLE_MAX_ENTRIES} plan entries (got {n0}x{n1})")

    a, b = mu0.masses, mu1.masses
    cost = hk_cost_matrix(mu0.points, mu1.points)
    free = np.isfinite(cost) & (a[:, None] > 0) & (b[None, :] > 0)
    index = np.flatnonzero(free)

    def expand(x):
        weights = np.zeros((n0, n1))
        weights.flat[index] = np.maximum(x, 0.0)
        return weights

    def objective(x):
        weights = expand(x)
        return float(np.sum(cost.flat[index] * weights.flat[index])) + kl_masses(weights.sum(axis=1), a) + kl_masses(weights.sum(axis=0), b)

    def gradient(x):
        weights = expand(x)
        tiny = 1e-300
        with np.errstate(divide='ignore'):
            grad_rows = np.log(np.maximum(weights.sum(axis=1), tiny) / np.maximum(a, tiny))
            grad_cols = np.log(np.maximum(weights.sum(axis=0), tiny) / np.maximum(b, tiny))
        full = cost + grad_rows[:, None] + grad_cols[None, :]
        return full.flat[index]

    if index.size == 0:
        best_x = np.zeros(0)
    else:
        rng = np.random.default_rng(seed)
        scale = float(max(a.max(), b.max()))
        candidates = [np.sqrt(np.outer(a, b)).flat[index], np.full(index.size, 1e-3 * scale)]
        candidates += [rng.uniform(0.0, scale, index.size) for _ in range(max(starts - 2, 0))]

        best_x, best_value = None, np.inf
        for x in candidates:
            x = _projected_descent(x, objective, gradient, scale)
            result = minimize(objective, x, jac=gradient, method='L-BFGS-B', bounds=[(0.0, None)] * index.size,
                              options={'ftol': 1e-15, 'gtol': 1e-12, 'maxiter': 10000})
            x = np.maximum(result.x, 0.0)
            value = objective(x)
            if value < best_value:
                best_x, best_value = x, value

    weights = expand(best_x)
    value = soft_marginal_objective(weights, mu0, mu1)
    gap = _duality_gap(weights, cost, a, b, value)
    if gap > ORACLE_GAP_TOLERANCE:
        logger.warning(f"Oracle duality gap {gap:.3g} exceeds {ORACLE_GAP_TOLERANCE:g}")
    coupling = Coupling.from_weights(weights, mu0, mu1, value, converged=gap <= ORACLE_GAP_TOLERANCE, duality_gap=gap)
    return coupling, value


def _projected_descent(x, objective, gradient, scale, steps: int = 300):
    """Projected gradient with steps scale/sqrt(k+1) along the normalized gradient."""
    best_x, best_value = x, objective(x)
    for k in range(steps):
        grad = gradient(x)
        norm = float(np.abs(grad).max())
        if norm == 0:
            break
        x = np.maximum(x - 0.1 * scale / math.sqrt(k + 1) * grad / max(norm, 1.0), 0.0)
        value = objective(x)
        if value < best_value:
            best_x, best_value = x, value
    return best_x


def _duality_gap(weights, cost, a, b, primal: float) -> float:
    """
    Primal value minus a feasible dual value built from the plan marginals.

    The dual is sum a (1 - e^-f) + sum b (1 - e^-g) subject to f_i + g_j <= C_ij.
    """
    rows = weights.sum(axis=1)
    cols = weights.sum(axis=0)
    finite = np.isfinite(cost) & (a[:, None] > 0) & (b[None, :] > 0)
    active_rows = finite.any(axis=1)
    active_cols = finite.any(axis=0)

    tiny = 1e-300
    f = np.log(np.maximum(a, tiny) / np.maximum(rows, tiny))
    g = np.log(np.maximum(b, tiny) / np.maximum(cols, tiny))
    for j in np.flatnonzero(active_cols):
        i = finite[:, j]
        g[j] = min(g[j], float(np.min(cost[i, j] - f[i])))

    dual = float(np.sum(a[~active_rows])) + float(np.sum(b[~active_cols]))
    dual += float(np.sum(a[active_rows] * (1 - np.exp(-f[active_rows]))))
    dual += float(np.sum(b[active_cols] * (1 - np.exp(-g[active_cols]))))
    return max(primal - dual, 0.0)
