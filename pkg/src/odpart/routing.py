"""Route enumeration and the edge-route incidence matrix.

Shortest paths are computed with a label-setting search whose labels are
``(distance, edge-id sequence)`` so that ties between equal-length paths are
always broken by the lexicographic order of their edge ids. This makes
routes independent of the order in which edges were supplied.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import InconsistencyError, InvalidPairError
from .network import ODPairSet, RoadNetwork

DEFAULT_K = 4


class Router:
    """Shortest-path machinery bound to one network.

    Edges are handled internally by their rank in sorted-id order; a path is
    a tuple of ranks, so comparing two paths as tuples compares their edge
    id sequences.
    """

    def __init__(self, network: RoadNetwork):
        self.network = network
        ids = network.edge_ids
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self.edge_of_rank = np.asarray(order, dtype=int)
        self.rank_of_edge = np.empty(len(ids), dtype=int)
        self.rank_of_edge[self.edge_of_rank] = np.arange(len(ids))
        self.head_of_rank = [int(network.heads[e]) for e in order]
        out = [[] for _ in range(network.n_nodes)]
        for r, e in enumerate(order):
            out[network.tails[e]].append((r, self.head_of_rank[r]))
        self.out = out

    def ranked(self, edge_values) -> list[float]:
        """Per-edge values re-indexed by rank, as a plain list for fast lookup."""
        return np.asarray(edge_values, dtype=float)[self.edge_of_rank].tolist()

    def search(self, source: int, weights: Sequence[float], target: int | None = None,
               banned_nodes=frozenset(), banned_edges=frozenset()) -> dict:
        """Label-setting search from ``source``.

        Returns ``{node: (distance, path)}`` for settled nodes, where path is a
        tuple of edge ranks. Stops early once ``target`` is settled.
        """
        out = self.out
        best = {source: (0.0, ())}
        heap = [(0.0, (), source)]
        done = {}
        while heap:
            d, path, u = heapq.heappop(heap)
            if u in done:
                continue
            done[u] = (d, path)
            if u == target:
                break
            for r, v in out[u]:
                if v in done or v in banned_nodes or r in banned_edges:
                    continue
                label = (d + weights[r], path + (r,))
                cur = best.get(v)
                if cur is None or label < cur:
                    best[v] = label
                    heapq.heappush(heap, (label[0], label[1], v))
        return done

    def to_edges(self, path) -> tuple[int, ...]:
        e = self.edge_of_rank
        return tuple(int(e[r]) for r in path)

    def nodes_of(self, source: int, path) -> list[int]:
        return [source] + [self.head_of_rank[r] for r in path]

    def k_shortest(self, source: int, target: int, k: int, lengths: Sequence[float]):
        """Yen's algorithm. Returns a list of ``(length, path)`` in rank space."""

        def total(path):
            return math.fsum(lengths[r] for r in path)

        first = self.search(source, lengths, target=target).get(target)
        if first is None:
            return []
        accepted = [first[1]]
        seen = {first[1]}
        candidates = []
        while len(accepted) < k:
            last = accepted[-1]
            nodes = self.nodes_of(source, last)
            for i in range(len(last)):
                root = last[:i]
                banned_e = {p[i] for p in accepted if len(p) > i and p[:i] == root}
                banned_n = frozenset(nodes[:i])
                spur = self.search(nodes[i], lengths, target=target,
                                   banned_nodes=banned_n, banned_edges=banned_e).get(target)
                if spur is None:
                    continue
                path = root + spur[1]
                if path not in seen:
                    seen.add(path)
                    heapq.heappush(candidates, (total(path), path))
            if not candidates:
                break
            accepted.append(heapq.heappop(candidates)[1])
        return sorted((total(p), p) for p in accepted)


@dataclass(frozen=True)
class Route:
    pair_index: int
    edge_ids: tuple[str, ...]
    length: float


def k_shortest_routes(network: RoadNetwork, pair: tuple[str, str], k: int = DEFAULT_K,
                      pair_index: int = 0, router: Router | None = None) -> list[Route]:
    """Up to ``k`` simple routes for ``pair`` in non-decreasing length order.

    Length ties are broken by the lexicographic order of edge ids. An
    unreachable destination yields an empty list.
    """
    origin, destination = pair
    if origin == destination:
        raise InvalidPairError(f"origin equals destination ({origin})")
    if k < 1:
        raise InvalidPairError("k must be at least 1")
    router = router or Router(network)
    lengths = router.ranked(network.lengths)
    found = router.k_shortest(network.node_index(origin), network.node_index(destination),
                              k, lengths)
    ids = network.edge_ids
    return [Route(pair_index, tuple(ids[e] for e in router.to_edges(p)), length)
            for length, p in found]


class RouteSet:
    """Routes for every pair of an :class:`ODPairSet` plus the incidence matrix B.

    ``B`` is (total routes x edges) with ``B[r, a] = 1`` iff route ``r`` uses
    edge ``a``. Rows are grouped by pair, in pair order.
    """

    def __init__(self, network: RoadNetwork, pairs: ODPairSet, routes: Sequence[Sequence[Route]]):
        if len(routes) != len(pairs):
            raise InconsistencyError("one route list per pair required")
        self.network = network
        self.pairs = pairs
        self.routes = [list(r) for r in routes]
        self.incidence = build_incidence(self, network)
        self.route_pair = np.asarray(
            [i for i, rs in enumerate(self.routes) for _ in rs], dtype=int)

    @property
    def n_routes(self) -> int:
        return len(self.route_pair)

    def all_routes(self) -> list[Route]:
        return [r for rs in self.routes for r in rs]

    def counts(self) -> np.ndarray:
        return np.asarray([len(rs) for rs in self.routes], dtype=int)

    def reachable(self) -> np.ndarray:
        return self.counts() > 0

    def subset(self, keep) -> RouteSet:
        """Route set restricted to the pairs where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        idx = np.flatnonzero(keep)
        pairs = ODPairSet([self.pairs[i] for i in idx])
        routes = [[Route(new, r.edge_ids, r.length) for r in self.routes[old]]
                  for new, old in enumerate(idx)]
        return RouteSet(self.network, pairs, routes)


def build_route_set(network: RoadNetwork, pairs: ODPairSet | None = None,
                    k: int = DEFAULT_K) -> RouteSet:
    pairs = pairs if pairs is not None else ODPairSet.for_network(network)
    router = Router(network)
    lengths = router.ranked(network.lengths)
    ids = network.edge_ids
    routes = []
    for i, (o, d) in enumerate(pairs):
        if o == d:
            raise InvalidPairError(f"origin equals destination ({o})")
        found = router.k_shortest(network.node_index(o), network.node_index(d), k, lengths)
        routes.append([Route(i, tuple(ids[e] for e in router.to_edges(p)), length)
                       for length, p in found])
    return RouteSet(network, pairs, routes)


def build_incidence(routes: RouteSet, network: RoadNetwork) -> sparse.csr_matrix:
    rows, cols = [], []
    r = 0
    for rs in routes.routes:
        for route in rs:
            if not route.edge_ids:
                raise InconsistencyError(f"route {r} has no edges")
            for eid in route.edge_ids:
                rows.append(r)
                cols.append(network.edge_index(eid))
            r += 1
    data = np.ones(len(rows))
    return sparse.csr_matrix((data, (rows, cols)), shape=(r, network.n_edges))
