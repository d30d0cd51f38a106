"""Bilevel refinement of a prior demand matrix against observed edge flows.

The upper level minimises::

    F(g) = sum_i (g_i - g0_i)^2 + sum_a (x_a(g) - xobs_a)^2

where ``x(g)`` is the user-equilibrium flow of ``g`` (lower level). The
gradient holds the equilibrium route proportions fixed, so ``dx_a/dg_i`` is
the share of pair ``i``'s demand that uses edge ``a``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import (DEFAULT_GAP, DEFAULT_MAX_ITER, EquilibriumSolution,
                         ShortestPathTable, frank_wolfe)
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .network import ODMatrix, RoadNetwork

log = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass(frozen=True)
class AdjustmentConfig:
    max_iter: int = 200
    tolerance: float = 1e-4
    max_halvings: int = 30
    fw_gap: float = DEFAULT_GAP
    fw_max_iter: int = DEFAULT_MAX_ITER
    divergence: float = 10.0
    demand_weight: float = 1.0
    flow_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise ConfigurationError("tolerance must lie in (0, 1)")
        for name in ("max_iter", "max_halvings", "fw_gap", "fw_max_iter", "divergence",
                     "demand_weight", "flow_weight"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class AdjustmentResult:
    demand: ODMatrix
    objective: float
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    converged: bool = False
    diagnostic: str = ""
    equilibrium: EquilibriumSolution | None = None

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


class _Evaluator:
    """F(g) with a reusable shortest-path cache and warm-started assignments."""

    def __init__(self, prior: ODMatrix, observed, network, cost, config):
        self.prior = prior
        self.observed = np.asarray(observed, dtype=float)
        if self.observed.shape != (network.n_edges,):
            raise InvalidInputError("observed flows must cover every edge")
        self.network = network
        self.cost = cost
        self.config = config
        self.table = ShortestPathTable(network, prior.pairs)
        self.last: EquilibriumSolution | None = None

    def __call__(self, g) -> tuple[float, EquilibriumSolution]:
        sol = frank_wolfe(self.network, ODMatrix(self.prior.pairs, g), self.cost,
                          self.config.fw_gap, self.config.fw_max_iter,
                          warm_start=self.last, table=self.table)
        F = _objective(g, self.prior.values, sol.flows, self.observed, self.config)
        if not math.isfinite(F):
            raise NumericalError("adjustment objective is not finite")
        return F, sol


def _objective(g, g0, x, xobs, config) -> float:
    dg = g - g0
    dx = x - xobs
    return config.demand_weight * float(dg @ dg) + config.flow_weight * float(dx @ dx)


def evaluate_objective(g: ODMatrix, prior: ODMatrix, observed, network: RoadNetwork,
                       cost=None, config: AdjustmentConfig = AdjustmentConfig()) -> float:
    """F(g) with the equilibrium flows of ``g`` solved at the configured gap."""
    if np.any(g.values < 0):
        raise InvalidInputError("demand must be non-negative")
    return _Evaluator(prior, observed, network, cost, config)(g.values)[0]


def gradient(g: ODMatrix, prior: ODMatrix, observed, solution: EquilibriumSolution | None,
             config: AdjustmentConfig = AdjustmentConfig()) -> np.ndarray:
    """dF/dg with route proportions frozen at ``solution``."""
    if solution is None:
        raise InvalidInputError("an equilibrium solution for g is required")
    U = solution.route_proportions()
    resid = solution.flows - np.asarray(observed, dtype=float)
    return (2.0 * config.demand_weight * (g.values - prior.values)
            + 2.0 * config.flow_weight * (U @ resid))


def project(g) -> np.ndarray:
    return np.maximum(g, 0.0)


def projected_gradient(g, grad) -> np.ndarray:
    """Gradient with components that would push a zero demand negative removed."""
    pg = np.array(grad, dtype=float)
    pg[(g <= 0) & (pg > 0)] = 0.0
    return pg


def adjust(prior: ODMatrix, observed, network: RoadNetwork,
           config: AdjustmentConfig = AdjustmentConfig(), cost=None) -> AdjustmentResult:
    """Projected-gradient descent on F from ``prior``.

    Each iteration takes a projected gradient step from an extrapolated
    point ``y = g + m (g - g_prev)`` (Nesterov momentum, ``m = 0`` on the
    first iteration and after a restart). The step starts at
    ``max(|g0|, 1) / |grad|`` on the first iteration and at twice the last
    accepted step afterwards, and is halved until the usual sufficient
    decrease condition holds. If halving was needed, the minimiser of a
    quadratic fitted along the step is tried as well. A candidate is only
    accepted if it lowers F below the current iterate; otherwise the
    momentum is reset and the iteration retried from ``g`` itself.

    The run stops on a relative F decrease below ``config.tolerance``.
    Hitting the iteration cap, finding no descent step from ``g``, or
    drifting further than ``config.divergence * max(|g0|, eps)`` from the
    prior is reported as non-convergence.
    """
    if np.any(prior.values < 0):
        raise InvalidInputError("prior must be non-negative")
    ev = _Evaluator(prior, observed, network, cost, config)
    g0 = prior.values
    g = g0.copy()
    F, sol = ev(g)
    ev.last = sol
    prior_norm = float(np.linalg.norm(g0))
    scale = max(prior_norm, 1.0)
    trace = [(0, F, float("nan"), 0.0)]
    converged, diagnostic = False, ""
    g_prev, t = g, 1.0
    y, F_y, sol_y = g, F, sol
    last_step = None

    for it in range(1, config.max_iter + 1):
        at_g = y is g
        grad = gradient(ODMatrix(prior.pairs, y), prior, ev.observed, sol_y, config)
        pg = projected_gradient(y, grad)
        gnorm = float(np.linalg.norm(pg))
        if at_g and (gnorm <= _EPS * (1.0 + float(np.linalg.norm(g))) or F == 0.0):
            converged, diagnostic = True, "stationary point"
            trace[-1] = (trace[-1][0], F, gnorm, trace[-1][3])
            break
        step = scale / (gnorm + _EPS) if last_step is None else 2.0 * last_step
        found = None
        halved = False
        for _ in range(config.max_halvings + 1):
            cand = project(y - step * pg)
            F_c, sol_c = ev(cand)
            d = cand - y
            if F_c <= F_y + float(grad @ d) + float(d @ d) / (2.0 * step):
                found = (cand, F_c, sol_c, step)
                break
            step *= 0.5
            halved = True
        if found is not None and halved:
            refined = _interpolate(y, pg, F_y, gnorm, found[3], found[1])
            if refined is not None:
                F_r, sol_r = ev(refined[0])
                if F_r < found[1]:
                    found = (refined[0], F_r, sol_r, found[3])
        if found is None or found[1] >= F:
            if not at_g:
                # momentum overshot: restart from the current iterate
                y, F_y, sol_y, t = g, F, sol, 1.0
                continue
            diagnostic = f"no descent step after {config.max_halvings} halvings"
            trace[-1] = (trace[-1][0], F, gnorm, trace[-1][3])
            break
        cand, F_c, sol_c, step = found
        last_step = step
        decrease = F - F_c
        g_prev, g, F, sol = g, cand, F_c, sol_c
        ev.last = sol
        trace.append((it, F, gnorm, step))
        if float(np.linalg.norm(g - g0)) > config.divergence * max(prior_norm, _EPS):
            diagnostic = "iterate diverged from the prior"
            break
        if decrease <= config.tolerance * (F + decrease):
            converged, diagnostic = True, "relative decrease below tolerance"
            break
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = project(g + ((t - 1.0) / t_new) * (g - g_prev))
        t = t_new
        if y is g or np.array_equal(y, g):
            y, F_y, sol_y = g, F, sol
        else:
            F_y, sol_y = ev(y)
    else:
        diagnostic = f"iteration cap {config.max_iter} reached"

    if not converged:
        log.warning("adjustment did not converge: %s", diagnostic)
    return AdjustmentResult(ODMatrix(prior.pairs, g), F, trace, converged, diagnostic, sol)


def _interpolate(g, pg, F0, gnorm, step, F_step):
    """Minimiser of the quadratic through F0, slope -|pg|^2 and F(step)."""
    slope = -gnorm * gnorm
    curv = (F_step - F0 - slope * step) / (step * step)
    if curv <= 0:
        return None
    s = -slope / (2.0 * curv)
    if abs(s - step) <= 1e-12 * step:
        return None
    return project(g - s * pg), s
