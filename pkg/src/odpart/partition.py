"""Modularity-based partitioning of a road network and its community graph.

Resolution convention
---------------------
The resolution ``r`` scales the observed-edge term of modularity::

    Q_r = 1/(2m) * sum_ij [ r * A_ij - k_i k_j / (2m) ] * delta(c_i, c_j)

so ``r = 0`` leaves every node in its own community and larger values merge
nodes into fewer, larger communities. ``r = 1`` is ordinary modularity.
Edge weights are inverse superedge lengths; a pair of opposite directed
edges becomes a single undirected edge.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNetworkError, InvalidAssignmentError, InvalidInputError
from .network import FlowSampleSet, RoadNetwork, SuperEdge, SuperNode, is_strongly_connected

log = logging.getLogger(__name__)

SWEEP_GRID = 64
_MIN_GAIN = 1e-12


@dataclass
class Partitioning:
    resolution: float
    assignment: dict[str, int]
    modularity: float
    objective: float = float("nan")

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment.values())) if self.assignment else 0

    def members(self) -> list[list[str]]:
        out = [[] for _ in range(self.n_communities)]
        for node, c in self.assignment.items():
            out[c].append(node)
        return out

    @classmethod
    def trivial(cls, network: RoadNetwork) -> Partitioning:
        """Every node in one community."""
        assignment = {n: 0 for n in network.node_ids}
        return cls(float("inf"), assignment, modularity(network, assignment))

    @classmethod
    def singletons(cls, network: RoadNetwork) -> Partitioning:
        assignment = {n: i for i, n in enumerate(network.node_ids)}
        return cls(0.0, assignment, modularity(network, assignment))


def undirected_weights(network: RoadNetwork) -> np.ndarray:
    """Symmetric weight matrix with ``A_ij = 1 / length`` and no self-loops.

    Antiparallel (and any parallel) edges between two nodes collapse to one
    undirected edge whose length is the mean of the constituents; unequal
    lengths are reported.
    """
    n = network.n_nodes
    lengths: dict[tuple[int, int], list[float]] = {}
    for t, h, length in zip(network.tails, network.heads, network.lengths):
        if t == h:
            continue
        key = (min(t, h), max(t, h))
        lengths.setdefault(key, []).append(float(length))
    A = np.zeros((n, n))
    for (i, j), ls in lengths.items():
        if max(ls) - min(ls) > 1e-12 * max(ls):
            log.warning("asymmetric lengths between %s and %s: %s; using the mean",
                        network.nodes[i].id, network.nodes[j].id, ls)
        w = 1.0 / (sum(ls) / len(ls))
        A[i, j] = A[j, i] = w
    return A


def _labels(network: RoadNetwork, assignment) -> np.ndarray:
    try:
        return np.asarray([assignment[n] for n in network.node_ids])
    except KeyError as exc:
        raise InvalidAssignmentError(f"node {exc.args[0]!r} missing from assignment") from None


def _modularity_matrix(A: np.ndarray, labels: np.ndarray, resolution: float) -> float:
    two_m = A.sum()
    if two_m == 0:
        return 0.0
    k = A.sum(axis=1)
    q = 0.0
    for c in np.unique(labels):
        idx = labels == c
        q += resolution * A[np.ix_(idx, idx)].sum() - k[idx].sum() ** 2 / two_m
    return q / two_m


def modularity(network: RoadNetwork, assignment, resolution: float = 1.0) -> float:
    """Modularity of ``assignment`` (node id -> community) on the undirected weighted graph."""
    labels = _labels(network, assignment)
    return _modularity_matrix(undirected_weights(network), labels, resolution)


def _one_level(A: np.ndarray, resolution: float, rng) -> tuple[np.ndarray, bool]:
    """Local moving phase on a (possibly aggregated) graph with self-loops."""
    n = A.shape[0]
    two_m = A.sum()
    k = A.sum(axis=1)
    comm = np.arange(n)
    tot = k.copy()
    offdiag = A - np.diag(np.diag(A))
    order = rng.permutation(n)
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = comm[i]
            nbrs = np.flatnonzero(offdiag[i])
            links: dict[int, float] = {}
            for j in nbrs:
                links[comm[j]] = links.get(comm[j], 0.0) + offdiag[i, j]
            tot[ci] -= k[i]
            best_c = ci
            best_gain = resolution * links.get(ci, 0.0) - k[i] * tot[ci] / two_m
            for c in sorted(links):
                gain = resolution * links[c] - k[i] * tot[c] / two_m
                if gain > best_gain + _MIN_GAIN:
                    best_c, best_gain = c, gain
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                improved = True
                moved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, moved_any


def louvain(network: RoadNetwork, resolution: float = 1.0, seed: int = 0) -> Partitioning:
    """Greedy multi-level modularity optimisation.

    Node visiting order within each level is a seeded random permutation, so
    the result is a deterministic function of ``(network, resolution, seed)``.
    """
    if resolution < 0:
        raise InvalidInputError("resolution must be non-negative")
    A0 = undirected_weights(network)
    n = network.n_nodes
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    A = A0
    if A.sum() > 0:
        while True:
            comm, moved = _one_level(A, resolution, rng)
            if not moved:
                break
            labels = comm[labels]
            H = np.zeros((A.shape[0], comm.max() + 1))
            H[np.arange(A.shape[0]), comm] = 1.0
            A = H.T @ A @ H
            if A.shape[0] == 1:
                break
    labels = _canonical(labels)
    assignment = {nid: int(c) for nid, c in zip(network.node_ids, labels)}
    return Partitioning(float(resolution), assignment,
                        _modularity_matrix(A0, labels, 1.0),
                        _modularity_matrix(A0, labels, resolution))


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel communities 0..C-1 in order of first appearance in node order."""
    mapping: dict[int, int] = {}
    for c in labels:
        mapping.setdefault(int(c), len(mapping))
    return np.asarray([mapping[int(c)] for c in labels])


def resolution_sweep(network: RoadNetwork, seed: int = 0, n_grid: int = SWEEP_GRID,
                     max_extend: int = 60) -> list[tuple[float, Partitioning]]:
    """Partitionings from unpartitioned down to two communities.

    The bracket ``[r_lo, r_hi]`` is found by halving/doubling from 1 until the
    low end leaves all nodes apart and the high end yields at most two
    communities; a geometric grid of ``n_grid`` resolutions is then scanned.
    For each distinct community count only the lowest-resolution result is
    kept. Counts of one (everything merged) are dropped.
    """
    n = network.n_nodes
    cache: dict[float, Partitioning] = {}

    def run(r):
        if r not in cache:
            cache[r] = louvain(network, r, seed)
        return cache[r]

    r_lo = 1.0
    for _ in range(max_extend):
        if run(r_lo).n_communities >= n:
            break
        r_lo /= 2.0
    r_hi = 1.0
    for _ in range(max_extend):
        if run(r_hi).n_communities <= 2:
            break
        r_hi *= 2.0
    for r in np.geomspace(r_lo, r_hi, n_grid):
        run(float(r))

    if not any(p.n_communities == 2 for p in cache.values()):
        # bisect between the last resolution above two communities and the
        # first one that merges everything
        lo = max((r for r, p in cache.items() if p.n_communities > 2), default=None)
        hi = min((r for r, p in cache.items() if p.n_communities < 2
                  and lo is not None and r > lo), default=None)
        if lo is not None and hi is not None:
            for _ in range(40):
                mid = math.sqrt(lo * hi)
                c = run(mid).n_communities
                if c == 2:
                    break
                lo, hi = (mid, hi) if c > 2 else (lo, mid)

    best: dict[int, tuple[float, Partitioning]] = {}
    for r in sorted(cache):
        p = cache[r]
        c = p.n_communities
        if c >= 2 and c not in best:
            best[c] = (r, p)
    if 2 not in best:
        log.warning("resolution sweep did not reach two communities; coarsest has %d",
                    min(best) if best else n)
    return [best[c] for c in sorted(best, reverse=True)]


@dataclass
class CommunityNetwork:
    """Community graph: one node per community, one edge per crossing direction."""

    network: RoadNetwork
    members: dict[str, tuple[str, ...]]
    samples: FlowSampleSet
    partitioning: Partitioning
    node_of_community: list[str] = field(default_factory=list)

    def aggregate(self, original: RoadNetwork, flows: np.ndarray) -> np.ndarray:
        """Sum edge flows (last axis in ``original`` edge order) onto community edges."""
        flows = np.asarray(flows, dtype=float)
        out = np.zeros(flows.shape[:-1] + (self.network.n_edges,))
        for j, e in enumerate(self.network.edge_ids):
            cols = [original.edge_index(m) for m in self.members[e]]
            out[..., j] = flows[..., cols].sum(axis=-1)
        return out


def community_node_id(c: int) -> str:
    return f"C{c}"


def crossing_edges(network: RoadNetwork, partitioning: Partitioning) -> dict[tuple[int, int], list[int]]:
    """Neighbouring community pairs, found by scanning each community's out-edges."""
    labels = _labels(network, partitioning.assignment)
    out_edges: list[list[int]] = [[] for _ in range(network.n_nodes)]
    for j, t in enumerate(network.tails):
        out_edges[t].append(j)
    found: dict[tuple[int, int], list[int]] = {}
    for c in range(int(labels.max()) + 1 if len(labels) else 0):
        for u in np.flatnonzero(labels == c):
            for j in out_edges[u]:
                d = int(labels[network.heads[j]])
                if d != c:
                    found.setdefault((c, d), []).append(j)
    return {key: sorted(v) for key, v in sorted(found.items())}


def build_community_network(network: RoadNetwork, partitioning: Partitioning,
                            samples: FlowSampleSet) -> CommunityNetwork:
    """Collapse each community to a node.

    A community edge X->Y aggregates every original edge from X to Y: its
    length and free-flow time are the means weighted by each edge's mean
    flow across snapshots (plain means when all such flows are zero), its
    capacity and per-snapshot flow are sums.
    """
    samples = samples.aligned(network)
    n_comm = partitioning.n_communities
    cross = crossing_edges(network, partitioning)
    mean_flow = samples.mean()
    nodes = [SuperNode(community_node_id(c), f"community {c}") for c in range(n_comm)]
    edges, members, flows = [], {}, []
    for (x, y), idx in cross.items():
        w = mean_flow[idx]
        if w.sum() > 0:
            length = float(np.dot(w, network.lengths[idx]) / w.sum())
            t0 = float(np.dot(w, network.free_flow_times[idx]) / w.sum())
        else:
            length = float(np.mean(network.lengths[idx]))
            t0 = float(np.mean(network.free_flow_times[idx]))
        eid = f"{community_node_id(x)}-{community_node_id(y)}"
        edges.append(SuperEdge(
            eid, community_node_id(x), community_node_id(y), length,
            float(network.capacities[idx].sum()), t0,
            float(np.mean(network.alphas[idx])), float(np.mean(network.betas[idx]))))
        members[eid] = tuple(network.edge_ids[j] for j in idx)
        flows.append(samples.flows[:, idx].sum(axis=1))
    comm_net = RoadNetwork(nodes, edges)
    if not edges or not is_strongly_connected(comm_net):
        raise DegenerateNetworkError(
            f"community network with {n_comm} communities is not strongly connected")
    flow_arr = np.column_stack(flows)
    comm_samples = FlowSampleSet(comm_net.edge_ids, flow_arr, samples.labels, samples.time_bin)
    return CommunityNetwork(comm_net, members, comm_samples, partitioning,
                            [community_node_id(c) for c in range(n_comm)])
