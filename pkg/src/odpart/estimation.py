"""Demand estimation from repeated link-count snapshots.

The estimator fits demand ``g`` and route-choice proportions ``P`` to the
flow samples by generalized least squares::

    min_{P >= 0, g >= 0}  sum_j (x_j - B' P' g)' S^-1 (x_j - B' P' g)
    s.t. P 1 = 1, p_ir = 0 for routes outside the pair's route set

The problem is bilinear, so it is solved by alternating two convex
sub-problems: a non-negative least squares in ``g`` with ``P`` fixed, and a
simplex-constrained least squares in the route flows with ``g`` fixed.

The partition-based prior constructions (degenerate, internal, external and
combined) live here as well.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import lsq_linear, nnls

from .errors import (DegenerateNetworkError, InconsistencyError, InsufficientSamplesError,
                     InvalidInputError, NumericalError, SolverError)
from .network import FlowSampleSet, ODMatrix, ODPairSet, RoadNetwork, validate
from .partition import CommunityNetwork, Partitioning
from .routing import DEFAULT_K, RouteSet, build_route_set

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GLSConfig:
    k: int = DEFAULT_K
    max_iter: int = 100
    rel_tol: float = 1e-6
    max_condition: float = 1e8
    ridge: float | None = None
    route_step_iter: int = 300
    # above this many pairs the demand step switches from exact NNLS to
    # warm-started accelerated projected gradient
    exact_demand_max: int = 1000
    demand_step_iter: int = 500


@dataclass
class FlowCovariance:
    matrix: np.ndarray
    ridge: float

    @property
    def condition(self) -> float:
        w = np.linalg.eigvalsh(self.matrix)
        return float(w[-1] / w[0])


def sample_covariance(samples: FlowSampleSet | np.ndarray, ridge: float | None = None,
                      max_condition: float = 1e8) -> FlowCovariance:
    """Unbiased sample covariance of the snapshots plus a ridge.

    Without an explicit ``ridge`` the ridge starts at ``1e-8 * trace / |A|``
    and grows tenfold until the condition number is at most ``max_condition``.
    """
    X = samples.flows if isinstance(samples, FlowSampleSet) else np.asarray(samples, float)
    if X.shape[0] < 2:
        raise InsufficientSamplesError(f"need at least 2 snapshots, got {X.shape[0]}")
    n = X.shape[1]
    S = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    S = 0.5 * (S + S.T)
    eye = np.eye(n)
    if ridge is not None:
        return FlowCovariance(S + ridge * eye, float(ridge))
    scale = np.trace(S) / n
    if not scale > 0:
        scale = 1.0
    lam = 1e-8 * scale
    w = np.linalg.eigvalsh(S)
    for _ in range(40):
        lo, hi = w[0] + lam, w[-1] + lam
        if lo > 0 and hi / lo <= max_condition:
            break
        lam *= 10.0
    return FlowCovariance(S + lam * eye, float(lam))


@dataclass
class RouteChoiceMatrix:
    """Route-choice proportions, one entry per route of a :class:`RouteSet`."""

    route_pair: np.ndarray
    proportions: np.ndarray
    n_pairs: int

    @property
    def matrix(self) -> sparse.csr_matrix:
        """Pairs x routes matrix P."""
        n = len(self.route_pair)
        return sparse.csr_matrix((self.proportions, (self.route_pair, np.arange(n))),
                                 shape=(self.n_pairs, n))

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.route_pair, weights=self.proportions, minlength=self.n_pairs)

    @classmethod
    def uniform(cls, routes: RouteSet) -> RouteChoiceMatrix:
        counts = routes.counts()
        return cls(routes.route_pair.copy(), 1.0 / counts[routes.route_pair], len(routes.pairs))


@dataclass
class GLSResult:
    demand: ODMatrix
    route_choice: RouteChoiceMatrix
    objective: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    covariance: FlowCovariance | None = None


class _GLSProblem:
    """Whitened data and operators for one estimation problem."""

    def __init__(self, samples: FlowSampleSet, routes: RouteSet, cov: FlowCovariance):
        X = samples.flows
        self.J = X.shape[0]
        self.xbar = X.mean(axis=0)
        self.chol = linalg.cholesky(cov.matrix, lower=True)
        resid = (X - self.xbar).T
        self.const = float(np.sum(self.whiten(resid) ** 2))
        self.A = routes.incidence.T.tocsr()  # edges x routes
        self.route_pair = routes.route_pair
        self.n_pairs = len(routes.pairs)
        self.bw = self.whiten(self.xbar)
        self._lip = None

    def whiten(self, v):
        return linalg.solve_triangular(self.chol, v, lower=True)

    def objective(self, g, p) -> float:
        mu = self.A @ (p * g[self.route_pair])
        r = self.bw - self.whiten(mu)
        return self.J * float(r @ r) + self.const

    def demand_matrix(self, p) -> sparse.csr_matrix:
        """Edges x pairs matrix mapping demand to mean flows under ``p``."""
        n_r = len(self.route_pair)
        collapse = sparse.csr_matrix((p, (np.arange(n_r), self.route_pair)),
                                     shape=(n_r, self.n_pairs))
        return (self.A @ collapse).tocsr()

    def demand_step(self, p, g=None, exact_max=1000, n_iter=500) -> np.ndarray:
        """Non-negative least squares in ``g`` with ``p`` fixed.

        Solved exactly (active set) for up to ``exact_max`` pairs; larger
        problems run ``n_iter`` accelerated projected-gradient steps from ``g``
        (or from zero).
        """
        M = self.demand_matrix(p)
        if self.n_pairs > exact_max:
            return self._demand_fista(M, np.zeros(self.n_pairs) if g is None else g, n_iter)
        Mw = self.whiten(M.toarray())
        try:
            g, _ = nnls(Mw, self.bw, maxiter=50 * max(Mw.shape))
        except RuntimeError:
            g = None
        if g is None or not _nnls_optimal(Mw, self.bw, g):
            # scipy's nnls can stop early on ill-conditioned systems
            res = lsq_linear(Mw, self.bw, bounds=(0.0, np.inf), method="bvls", tol=1e-14)
            if res.status < 1:
                raise SolverError("demand sub-problem failed: " + res.message, {"p": p})
            g = res.x
        return np.maximum(g, 0.0)

    def _demand_fista(self, M, g, n_iter) -> np.ndarray:
        def h(v):
            r = self.bw - self.whiten(M @ v)
            return float(r @ r)

        def grad(v):
            return -2.0 * (M.T @ linalg.cho_solve((self.chol, True), self.xbar - M @ v))

        lip = 2.0 * 1.01 * _power_norm(
            lambda v: M.T @ linalg.cho_solve((self.chol, True), M @ v), M.shape[1])
        if lip == 0:
            return g
        best, best_h = g, h(g)
        f, y, t = g, g.copy(), 1.0
        for _ in range(n_iter):
            f_new = np.maximum(y - grad(y) / lip, 0.0)
            h_new = h(f_new)
            if h_new < best_h:
                best, best_h = f_new, h_new
            elif h_new > best_h:
                y, t, f = best.copy(), 1.0, best  # restart
                continue
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = f_new + ((t - 1.0) / t_new) * (f_new - f)
            if np.linalg.norm(f_new - f) <= 1e-13 * (np.linalg.norm(f) + 1.0):
                break
            f, t = f_new, t_new
        return best

    def lipschitz(self) -> float:
        """Largest eigenvalue of 2 A' S^-1 A (with a 1% margin)."""
        if self._lip is None:
            op = lambda v: self.A.T @ linalg.cho_solve((self.chol, True), self.A @ v)  # noqa: E731
            self._lip = 2.0 * 1.01 * _power_norm(op, self.A.shape[1])
        return self._lip

    def route_step(self, g, p, n_iter) -> np.ndarray:
        """Route proportions minimising the fit with ``g`` fixed (accelerated projected gradient)."""
        gr = g[self.route_pair]
        free = np.bincount(self.route_pair, minlength=self.n_pairs) > 1
        free &= g > 0
        if not free.any():
            return p
        lip = self.lipschitz()
        if lip == 0:
            return p
        project = _SimplexProjector(self.route_pair, self.n_pairs)

        def h(f):
            r = self.bw - self.whiten(self.A @ f)
            return float(r @ r)

        def grad(f):
            r = self.xbar - self.A @ f
            return -2.0 * (self.A.T @ linalg.cho_solve((self.chol, True), r))

        f = p * gr
        best_f, best_h = f, h(f)
        y, t = f.copy(), 1.0
        for _ in range(n_iter):
            f_new = project(y - grad(y) / lip, g)
            h_new = h(f_new)
            if h_new < best_h:
                best_f, best_h = f_new, h_new
            elif h_new > best_h:
                y, t = best_f.copy(), 1.0  # restart
                f = best_f
                continue
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = f_new + ((t - 1.0) / t_new) * (f_new - f)
            if np.linalg.norm(f_new - f) <= 1e-13 * (np.linalg.norm(f) + 1.0):
                break
            f, t = f_new, t_new
        p_new = p.copy()
        ok = gr > 0
        p_new[ok] = best_f[ok] / gr[ok]
        return p_new


def _nnls_optimal(A, b, x, rtol=1e-11) -> bool:
    """KKT check for min ||Ax - b|| s.t. x >= 0, relative to round-off scale."""
    w = A.T @ (b - A @ x)
    na = np.linalg.norm(A)
    tol = rtol * na * (np.linalg.norm(b) + na * np.linalg.norm(x)) + 1e-300
    pos = x > 0
    return bool(np.all(np.abs(w[pos]) <= tol) and np.all(w[~pos] <= tol))


def _power_norm(op, n, n_iter=100) -> float:
    """Largest eigenvalue of the symmetric PSD operator ``op`` by power iteration."""
    v = np.ones(n)
    lam = 0.0
    for _ in range(n_iter):
        w = op(v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        new = nrm / np.linalg.norm(v)
        v = w / nrm
        if abs(new - lam) <= 1e-6 * new:
            return new
        lam = new
    return lam


class _SimplexProjector:
    """Euclidean projection of route flows onto ``{f >= 0, sum_r f_r = g_i}`` per pair."""

    def __init__(self, route_pair, n_pairs):
        counts = np.bincount(route_pair, minlength=n_pairs)
        self.k = max(int(counts.max()), 1)
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.rows = route_pair
        self.slots = np.arange(len(route_pair)) - first[route_pair]
        self.valid = np.zeros((n_pairs, self.k), dtype=bool)
        self.valid[self.rows, self.slots] = True
        self.n_pairs = n_pairs

    def __call__(self, v, g):
        V = np.full((self.n_pairs, self.k), -np.inf)
        V[self.rows, self.slots] = v
        U = -np.sort(-V, axis=1)
        U0 = np.where(np.isfinite(U), U, 0.0)
        css = np.cumsum(U0, axis=1)
        j = np.arange(1, self.k + 1)
        cond = (U - (css - g[:, None]) / j > 0) & np.isfinite(U)
        rho = np.where(cond.any(axis=1), self.k - 1 - np.argmax(cond[:, ::-1], axis=1), 0)
        theta = (css[np.arange(self.n_pairs), rho] - g) / (rho + 1)
        W = np.maximum(V - theta[:, None], 0.0)
        W[g <= 0] = 0.0
        return W[self.rows, self.slots]


def gls_estimate(network: RoadNetwork, samples: FlowSampleSet, routes: RouteSet | None = None,
                 config: GLSConfig = GLSConfig()) -> GLSResult:
    """Estimate demand and route choice from flow snapshots.

    Alternates the demand and route-choice sub-problems from uniform route
    choice until the relative objective decrease drops below
    ``config.rel_tol`` or ``config.max_iter`` rounds. Sub-problem results are
    only accepted when they do not increase the objective, so the returned
    history is non-increasing.
    """
    samples = samples.aligned(network)
    routes = routes if routes is not None else build_route_set(network, k=config.k)
    if np.any(routes.counts() == 0):
        bad = int(np.flatnonzero(routes.counts() == 0)[0])
        raise InvalidInputError(f"pair {routes.pairs[bad]} has no route")
    cov = sample_covariance(samples, config.ridge, config.max_condition)
    prob = _GLSProblem(samples, routes, cov)

    p = RouteChoiceMatrix.uniform(routes).proportions
    g = prob.demand_step(p, None, config.exact_demand_max, config.demand_step_iter)
    obj = prob.objective(g, p)
    _check_finite(obj)
    history = [obj]
    it = 0
    for it in range(1, config.max_iter + 1):
        if obj <= 0.0 or obj == prob.const:
            break
        p_new = prob.route_step(g, p, config.route_step_iter)
        obj_p = prob.objective(g, p_new)
        if obj_p <= obj:
            p = p_new
        else:
            obj_p = obj
        g_new = prob.demand_step(p, g, config.exact_demand_max, config.demand_step_iter)
        obj_g = prob.objective(g_new, p)
        if obj_g <= obj_p:
            g = g_new
        else:
            obj_g = obj_p
        _check_finite(obj_g)
        history.append(obj_g)
        decrease = obj - obj_g
        obj = obj_g
        if decrease <= config.rel_tol * abs(obj):
            break
    demand = ODMatrix(routes.pairs, g)
    choice = RouteChoiceMatrix(routes.route_pair.copy(), p, len(routes.pairs))
    return GLSResult(demand, choice, obj, history, it, cov)


def _check_finite(obj):
    if not math.isfinite(obj):
        raise NumericalError("GLS objective is not finite")


def _reachable_routes(network: RoadNetwork, k: int) -> RouteSet:
    routes = build_route_set(network, ODPairSet.for_network(network), k)
    keep = routes.reachable()
    return routes if keep.all() else routes.subset(keep)


def estimate_unpartitioned(network: RoadNetwork, samples: FlowSampleSet,
                           config: GLSConfig = GLSConfig()) -> ODMatrix:
    """GLS over the whole network; pairs without a route get zero demand."""
    pairs = ODPairSet.for_network(network)
    routes = _reachable_routes(network, config.k)
    res = gls_estimate(network, samples, routes, config)
    return _scatter(pairs, res.demand)


def _scatter(pairs: ODPairSet, part: ODMatrix, into: np.ndarray | None = None) -> ODMatrix:
    values = np.zeros(len(pairs)) if into is None else into
    for (o, d), v in zip(part.pairs, part.values):
        values[pairs.index(o, d)] = v
    return ODMatrix(pairs, values)


def degenerate_prior(community: CommunityNetwork, samples: FlowSampleSet | None = None,
                     config: GLSConfig = GLSConfig()) -> ODMatrix:
    """Community-to-community demand estimated on the community graph itself."""
    net = community.network
    if not validate(net).strongly_connected:
        raise DegenerateNetworkError("community network is not strongly connected")
    samples = samples if samples is not None else community.samples
    routes = build_route_set(net, ODPairSet.for_network(net), config.k)
    return gls_estimate(net, samples, routes, config).demand


def internal_prior(network: RoadNetwork, partitioning: Partitioning, samples: FlowSampleSet,
                   config: GLSConfig = GLSConfig()) -> ODMatrix:
    """Block-diagonal prior: GLS inside each community, zero between communities.

    Each community is estimated on its induced subnetwork using only the
    flows on its internal edges. Pairs that cannot reach each other inside
    the community get zero demand.
    """
    pairs = ODPairSet.for_network(network)
    values = np.zeros(len(pairs))
    samples = samples.aligned(network)
    for c, members in enumerate(partitioning.members()):
        sub = network.subnetwork(members)
        if sub.n_edges == 0:
            if sub.n_nodes > 1:
                log.warning("community %d has no internal edges; its block is zero", c)
            continue
        routes = _reachable_routes(sub, config.k)
        if routes.n_routes == 0:
            continue
        res = gls_estimate(sub, samples.restrict(sub.edge_ids), routes, config)
        _scatter(pairs, res.demand, values)
    return ODMatrix(pairs, values)


def _equal_split(total: float, n: int) -> np.ndarray:
    """``n`` shares of ``total`` whose floating-point sum is exactly ``total``."""
    base = total / n
    out = np.full(n, base)
    if n > 1:
        out[-1] = base + math.fsum([total] + [-base] * n)
    return out


def external_prior(h_com: ODMatrix, partitioning: Partitioning,
                   pairs: ODPairSet | None = None,
                   community_ids: list[str] | None = None) -> ODMatrix:
    """Spread each community-pair demand equally over its node pairs.

    The demand from community X to Y is split over the ``u_X * u_Y`` node
    pairs ``(x, y)``; pairs within one community get zero.
    """
    from .partition import community_node_id

    members = partitioning.members()
    if pairs is None:
        nodes = [n for n in partitioning.assignment]
        pairs = ODPairSet.all_pairs(nodes)
    ids = community_ids or [community_node_id(c) for c in range(len(members))]
    values = np.zeros(len(pairs))
    for x, mx in enumerate(members):
        for y, my in enumerate(members):
            if x == y:
                continue
            total = h_com.get(ids[x], ids[y]) if (ids[x], ids[y]) in h_com.pairs else 0.0
            shares = _equal_split(total, len(mx) * len(my))
            idx = [pairs.index(o, d) for o in mx for d in my]
            values[idx] = shares
    return ODMatrix(pairs, values)


def combined_prior(internal: ODMatrix, external: ODMatrix) -> ODMatrix:
    if internal.pairs != external.pairs:
        raise InconsistencyError("internal and external priors use different pair sets")
    if np.any((internal.values > 0) & (external.values > 0)):
        raise InconsistencyError("internal and external priors overlap")
    return ODMatrix(internal.pairs, internal.values + external.values)
