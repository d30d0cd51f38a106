"""User-equilibrium traffic assignment by the Frank-Wolfe method.

The solver keeps the convex combination of all-or-nothing path loadings it
has produced, so per-pair path shares (and from them the pair-edge usage
proportions needed by the demand adjustment) are available at termination.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import InvalidInputError, NumericalError
from .network import ODMatrix, ODPairSet, RoadNetwork
from .routing import Router

log = logging.getLogger(__name__)

DEFAULT_GAP = 1e-5
DEFAULT_MAX_ITER = 5000
LINE_SEARCH_TOL = 1e-10


class BPRCost:
    """Flow-dependent BPR link cost built from a network's edge attributes."""

    flow_dependent = True

    def __init__(self, network: RoadNetwork):
        self.t0 = np.asarray(network.free_flow_times, dtype=float)
        self.m = np.asarray(network.capacities, dtype=float)
        self.alpha = np.asarray(network.alphas, dtype=float)
        self.beta = np.asarray(network.betas, dtype=float)

    def times(self, x):
        return self.t0 * (1.0 + self.alpha * (x / self.m) ** self.beta)

    def integral(self, x):
        b = self.beta
        return self.t0 * x + self.t0 * self.alpha * x ** (b + 1) / ((b + 1) * self.m ** b)


class ConstantCost:
    """Flow-independent cost, e.g. edge length for uncongested networks."""

    flow_dependent = False

    def __init__(self, times):
        self.t = np.asarray(times, dtype=float)

    def times(self, x):
        return self.t.copy()

    def integral(self, x):
        return self.t * x


class AffineCost:
    """``t(x) = a + b x``; handy for closed-form checks."""

    flow_dependent = True

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def times(self, x):
        return self.a + self.b * x

    def integral(self, x):
        return self.a * x + 0.5 * self.b * x * x


def length_cost(network: RoadNetwork) -> ConstantCost:
    return ConstantCost(network.lengths)


class ShortestPathTable:
    """Per-pair shortest paths under a vector of edge times.

    The most recent result is cached so that flow-independent costs pay
    for the tree searches only once.
    """

    def __init__(self, network: RoadNetwork, pairs: ODPairSet):
        self.network = network
        self.router = Router(network)
        by_origin: dict[int, list[tuple[int, int]]] = {}
        for i, (o, d) in enumerate(pairs):
            by_origin.setdefault(network.node_index(o), []).append((i, network.node_index(d)))
        self.by_origin = by_origin
        self.n_pairs = len(pairs)
        self._key = None
        self._paths = None

    def paths(self, times) -> list:
        times = np.asarray(times, dtype=float)
        key = times.tobytes()
        if key == self._key:
            return self._paths
        if np.any(times <= 0) or not np.all(np.isfinite(times)):
            raise InvalidInputError("edge times must be positive and finite")
        w = self.router.ranked(times)
        out = [None] * self.n_pairs
        for origin, targets in self.by_origin.items():
            tree = self.router.search(origin, w)
            for i, dest in targets:
                hit = tree.get(dest)
                if hit is not None:
                    out[i] = self.router.to_edges(hit[1])
        self._key, self._paths = key, out
        return out


class PathRegistry:
    """Distinct paths seen so far, with a convex weight per pair."""

    def __init__(self, n_pairs: int, n_edges: int):
        self.n_pairs = n_pairs
        self.n_edges = n_edges
        self.path_pair: list[int] = []
        self.path_edges: list[tuple[int, ...]] = []
        self._ids: dict = {}
        self.weights = np.zeros(0)
        self._matrix = None

    def ids(self, paths) -> np.ndarray:
        out = np.full(len(paths), -1, dtype=int)
        for i, p in enumerate(paths):
            if p is None:
                continue
            key = (i, p)
            pid = self._ids.get(key)
            if pid is None:
                pid = len(self.path_pair)
                self._ids[key] = pid
                self.path_pair.append(i)
                self.path_edges.append(p)
                self._matrix = None
            out[i] = pid
        if len(self.weights) < len(self.path_pair):
            self.weights = np.concatenate(
                [self.weights, np.zeros(len(self.path_pair) - len(self.weights))])
        return out

    @property
    def matrix(self) -> sparse.csr_matrix:
        """Paths x edges 0/1 incidence."""
        if self._matrix is None:
            rows = [k for k, p in enumerate(self.path_edges) for _ in p]
            cols = [e for p in self.path_edges for e in p]
            self._matrix = sparse.csr_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(len(self.path_edges), self.n_edges))
        return self._matrix

    def copy(self) -> PathRegistry:
        new = PathRegistry(self.n_pairs, self.n_edges)
        new.path_pair = list(self.path_pair)
        new.path_edges = list(self.path_edges)
        new._ids = dict(self._ids)
        new.weights = self.weights.copy()
        new._matrix = self._matrix
        return new

    def pair_path_matrix(self) -> sparse.csr_matrix:
        """Pairs x paths matrix of path shares."""
        n = len(self.path_pair)
        return sparse.csr_matrix((self.weights[:n], (self.path_pair, np.arange(n))),
                                 shape=(self.n_pairs, n))


def _load(registry: PathRegistry, ids: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """Edge flows from sending each pair's demand along path ``ids[i]``."""
    ok = ids >= 0
    if np.any(demand[~ok] > 0):
        bad = int(np.flatnonzero(~ok & (demand > 0))[0])
        raise InvalidInputError(f"pair {bad} has positive demand but no path")
    vec = np.zeros(registry.matrix.shape[0])
    np.add.at(vec, ids[ok], demand[ok])
    return registry.matrix.T @ vec


def all_or_nothing(network: RoadNetwork, demand: ODMatrix, times,
                   table: ShortestPathTable | None = None) -> np.ndarray:
    """Edge flows from loading every pair on one shortest path under ``times``."""
    table = table or ShortestPathTable(network, demand.pairs)
    reg = PathRegistry(len(demand.pairs), network.n_edges)
    ids = reg.ids(table.paths(times))
    return _load(reg, ids, demand.values)


def relative_gap(x, times, aon_flows) -> float:
    """``(t.x - t.y) / t.x`` where y is the all-or-nothing flow under t.

    Defined as 0 when there is no flow at all.
    """
    x = np.asarray(x, dtype=float)
    tx = float(np.dot(times, x))
    if tx == 0.0:
        if not np.any(x > 0):
            return 0.0
        raise NumericalError("zero total travel cost with non-zero flow")
    return (tx - float(np.dot(times, aon_flows))) / tx


@dataclass
class EquilibriumSolution:
    flows: np.ndarray
    times: np.ndarray
    gap: float
    iterations: int
    converged: bool
    demand: ODMatrix
    registry: PathRegistry
    trace: list = field(default_factory=list)

    def route_proportions(self) -> sparse.csr_matrix:
        """Pairs x edges share of each pair's demand that uses each edge."""
        return (self.registry.pair_path_matrix() @ self.registry.matrix).tocsr()

    def path_flows(self) -> list[dict[tuple[int, ...], float]]:
        """Per pair: edge-index path -> flow, for paths carrying positive share."""
        out = [dict() for _ in range(self.registry.n_pairs)]
        g = self.demand.values
        for k, (i, p) in enumerate(zip(self.registry.path_pair, self.registry.path_edges)):
            w = self.registry.weights[k]
            if w > 0:
                out[i][p] = w * g[i]
        return out

    def path_shares(self) -> list[dict[tuple[int, ...], float]]:
        out = [dict() for _ in range(self.registry.n_pairs)]
        for k, (i, p) in enumerate(zip(self.registry.path_pair, self.registry.path_edges)):
            w = self.registry.weights[k]
            if w > 0:
                out[i][p] = w
        return out


def _line_search(cost, x, d) -> float:
    """Exact step along ``d`` minimising the Beckmann objective, by bisection."""

    def slope(lam):
        return float(np.dot(cost.times(x + lam * d), d))

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > LINE_SEARCH_TOL:
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beckmann(cost, x) -> float:
    return float(np.sum(cost.integral(x)))


def frank_wolfe(network: RoadNetwork, demand: ODMatrix, cost=None, gap: float = DEFAULT_GAP,
                max_iter: int = DEFAULT_MAX_ITER, warm_start: EquilibriumSolution | None = None,
                table: ShortestPathTable | None = None) -> EquilibriumSolution:
    """Solve the user-equilibrium assignment of ``demand`` on ``network``.

    Parameters
    ----------
    cost : BPRCost, ConstantCost or AffineCost, optional
        Link cost model; defaults to the network's BPR functions.
    gap : float
        Relative-gap threshold for convergence.
    warm_start : EquilibriumSolution, optional
        A previous solution on the same pair set. Its path shares are reused
        with the new demand, which keeps the starting point feasible.
    table : ShortestPathTable, optional
        Reusable shortest-path cache for repeated solves.
    """
    if np.any(demand.values < 0):
        raise InvalidInputError("demand must be non-negative")
    cost = cost if cost is not None else BPRCost(network)
    table = table or ShortestPathTable(network, demand.pairs)
    g = demand.values

    if warm_start is not None and warm_start.demand.pairs == demand.pairs:
        reg = warm_start.registry.copy()
        n = len(reg.path_pair)
        x = reg.matrix.T @ (reg.weights[:n] * g[reg.path_pair]) if n else np.zeros(network.n_edges)
    else:
        reg = PathRegistry(len(demand.pairs), network.n_edges)
        ids = reg.ids(table.paths(cost.times(np.zeros(network.n_edges))))
        x = _load(reg, ids, g)
        reg.weights[ids[ids >= 0]] = 1.0

    objective = beckmann(cost, x)
    trace = []
    converged = False
    rel = float("inf")
    it = 0
    for it in range(1, max_iter + 1):
        t = cost.times(x)
        ids = reg.ids(table.paths(t))
        y = _load(reg, ids, g)
        rel = relative_gap(x, t, y)
        trace.append((it, objective, rel))
        if rel <= gap:
            converged = True
            break
        lam = _line_search(cost, x, y - x)
        if lam == 0.0:
            # no descent along the AON direction; the gap is at its floor
            converged = rel <= gap
            break
        x = x + lam * (y - x)
        reg.weights *= 1.0 - lam
        np.add.at(reg.weights, ids[ids >= 0], lam)
        new_obj = beckmann(cost, x)
        if not np.isfinite(new_obj):
            raise NumericalError("Beckmann objective became non-finite")
        if new_obj > objective + 1e-12 * max(1.0, abs(objective)):
            raise NumericalError(
                f"Beckmann objective increased at iteration {it}: {objective} -> {new_obj}")
        objective = new_obj
    if not converged:
        log.warning("Frank-Wolfe stopped at iteration cap %d with gap %.3g", max_iter, rel)
    x = np.maximum(x, 0.0)
    return EquilibriumSolution(x, cost.times(x), rel, it, converged, demand, reg, trace)
