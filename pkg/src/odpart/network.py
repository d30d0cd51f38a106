"""Road network representation, demand containers and the BPR congestion function.

Units are fixed throughout the package: lengths in km, times in hours and
flows or demands in vehicles/hour. Nodes and edges keep the order in which
they were supplied and every matrix is indexed by that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import InconsistencyError, InvalidInputError

DEFAULT_ALPHA = 0.15
DEFAULT_BETA = 4.0


@dataclass(frozen=True)
class SuperNode:
    id: str
    label: str = ""
    lat: float | None = None
    lon: float | None = None


@dataclass(frozen=True)
class SuperEdge:
    id: str
    tail: str
    head: str
    length: float
    capacity: float
    free_flow_time: float
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


class RoadNetwork:
    """Directed graph of supernodes joined by superedges.

    The network is immutable after construction. Structural consistency
    (unique ids, known endpoints) is enforced here; connectivity and
    parameter positivity are reported by :func:`validate`.
    """

    def __init__(self, nodes: Iterable[SuperNode], edges: Iterable[SuperEdge]):
        self._nodes = tuple(nodes)
        self._edges = tuple(edges)
        self._node_index = {n.id: i for i, n in enumerate(self._nodes)}
        if len(self._node_index) != len(self._nodes):
            raise InconsistencyError("duplicate node ids")
        self._edge_index = {e.id: i for i, e in enumerate(self._edges)}
        if len(self._edge_index) != len(self._edges):
            raise InconsistencyError("duplicate edge ids")
        for e in self._edges:
            if e.tail not in self._node_index or e.head not in self._node_index:
                raise InconsistencyError(f"edge {e.id!r} references an unknown node")

        self.tails = _readonly([self._node_index[e.tail] for e in self._edges])
        self.heads = _readonly([self._node_index[e.head] for e in self._edges])
        self.lengths = _readonly([float(e.length) for e in self._edges])
        self.capacities = _readonly([float(e.capacity) for e in self._edges])
        self.free_flow_times = _readonly([float(e.free_flow_time) for e in self._edges])
        self.alphas = _readonly([float(e.alpha) for e in self._edges])
        self.betas = _readonly([float(e.beta) for e in self._edges])
        self._incidence = None

    @property
    def nodes(self) -> tuple[SuperNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[SuperEdge, ...]:
        return self._edges

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self._nodes]

    @property
    def edge_ids(self) -> list[str]:
        return [e.id for e in self._edges]

    @property
    def n_nodes(self) -> int:
        return len(self._nodes)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def node_index(self, node_id: str) -> int:
        return self._node_index[node_id]

    def edge_index(self, edge_id: str) -> int:
        try:
            return self._edge_index[edge_id]
        except KeyError:
            raise InconsistencyError(f"unknown edge id {edge_id!r}") from None

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._edge_index

    def edge(self, edge_id: str) -> SuperEdge:
        return self._edges[self.edge_index(edge_id)]

    @property
    def incidence(self) -> sparse.csc_matrix:
        if self._incidence is None:
            self._incidence = incidence(self)
        return self._incidence

    def subnetwork(self, node_ids: Iterable[str]) -> RoadNetwork:
        """Induced subgraph on ``node_ids``, keeping the original ordering."""
        keep = set(node_ids)
        nodes = [n for n in self._nodes if n.id in keep]
        edges = [e for e in self._edges if e.tail in keep and e.head in keep]
        return RoadNetwork(nodes, edges)

    def replace_edges(self, **columns: Sequence[float]) -> RoadNetwork:
        """Copy of the network with whole edge attribute columns replaced."""
        n = self.n_edges
        for name, values in columns.items():
            if len(values) != n:
                raise InvalidInputError(f"column {name!r} has wrong length")
        edges = []
        for i, e in enumerate(self._edges):
            fields = {name: float(values[i]) for name, values in columns.items()}
            edges.append(replace(e, **fields))
        return RoadNetwork(self._nodes, edges)

    def __repr__(self):
        return f"RoadNetwork({self.n_nodes} nodes, {self.n_edges} edges)"


def bpr_travel_time(edge: SuperEdge, flow: float) -> float:
    if not flow >= 0:
        raise InvalidInputError(f"flow must be non-negative, got {flow}")
    return edge.free_flow_time * (1.0 + edge.alpha * (flow / edge.capacity) ** edge.beta)


def bpr_integral(edge: SuperEdge, flow: float) -> float:
    """Closed-form integral of the BPR function from 0 to ``flow``."""
    if not flow >= 0:
        raise InvalidInputError(f"flow must be non-negative, got {flow}")
    t0, m, a, b = edge.free_flow_time, edge.capacity, edge.alpha, edge.beta
    return t0 * flow + t0 * a * flow ** (b + 1) / ((b + 1) * m ** b)


def incidence(network: RoadNetwork) -> sparse.csc_matrix:
    """Node-edge incidence matrix: -1 at the tail, +1 at the head."""
    n_e = network.n_edges
    cols = np.repeat(np.arange(n_e), 2)
    rows = np.empty(2 * n_e, dtype=int)
    rows[0::2] = network.tails
    rows[1::2] = network.heads
    vals = np.tile([-1.0, 1.0], n_e)
    return sparse.csc_matrix((vals, (rows, cols)), shape=(network.n_nodes, n_e))


@dataclass
class ValidationResult:
    strongly_connected: bool
    incidence_ok: bool
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.passed


def is_strongly_connected(network: RoadNetwork) -> bool:
    n = network.n_nodes
    if n == 0:
        return False
    adj = sparse.csr_matrix(
        (np.ones(network.n_edges), (network.tails, network.heads)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def validate(network: RoadNetwork) -> ValidationResult:
    failures = []
    connected = is_strongly_connected(network)
    if not connected:
        failures.append("network is not strongly connected")

    N = incidence(network).toarray()
    inc_ok = True
    for j, e in enumerate(network.edges):
        col = N[:, j]
        if e.tail == e.head or np.count_nonzero(col == -1) != 1 or np.count_nonzero(col == 1) != 1:
            inc_ok = False
            failures.append(f"edge {e.id!r}: incidence column malformed (self-loop?)")
    for e in network.edges:
        if not (e.length > 0 and math.isfinite(e.length)):
            failures.append(f"edge {e.id!r}: length must be positive")
        if not (e.capacity > 0 and math.isfinite(e.capacity)):
            failures.append(f"edge {e.id!r}: capacity must be positive")
        if not (e.free_flow_time > 0 and math.isfinite(e.free_flow_time)):
            failures.append(f"edge {e.id!r}: free-flow time must be positive")
        if not e.alpha >= 0:
            failures.append(f"edge {e.id!r}: alpha must be >= 0")
        if not e.beta >= 1:
            failures.append(f"edge {e.id!r}: beta must be >= 1")
    return ValidationResult(connected, inc_ok, failures)


class ODPairSet:
    """Ordered set of (origin, destination) node-id pairs.

    The default universe is every ordered pair of distinct nodes in
    row-major node order.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]]):
        self._pairs = tuple((str(o), str(d)) for o, d in pairs)
        self._index = {}
        for i, (o, d) in enumerate(self._pairs):
            if o == d:
                raise InvalidInputError(f"pair ({o}, {d}) has origin equal to destination")
            if (o, d) in self._index:
                raise InvalidInputError(f"duplicate pair ({o}, {d})")
            self._index[(o, d)] = i

    @classmethod
    def all_pairs(cls, node_ids: Iterable[str]) -> ODPairSet:
        ids = list(node_ids)
        return cls((o, d) for o in ids for d in ids if o != d)

    @classmethod
    def for_network(cls, network: RoadNetwork) -> ODPairSet:
        return cls.all_pairs(network.node_ids)

    def __len__(self):
        return len(self._pairs)

    def __iter__(self):
        return iter(self._pairs)

    def __getitem__(self, i):
        return self._pairs[i]

    def __eq__(self, other):
        return isinstance(other, ODPairSet) and self._pairs == other._pairs

    def __hash__(self):
        return hash(self._pairs)

    def index(self, origin: str, destination: str) -> int:
        return self._index[(origin, destination)]

    def __contains__(self, pair):
        return tuple(pair) in self._index

    def origins(self) -> list[str]:
        return [o for o, _ in self._pairs]

    def destinations(self) -> list[str]:
        return [d for _, d in self._pairs]


@dataclass
class ODMatrix:
    """Vectorised demand over an :class:`ODPairSet`."""

    pairs: ODPairSet
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.pairs),):
            raise InvalidInputError(
                f"demand vector has shape {self.values.shape}, expected ({len(self.pairs)},)")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("demand contains non-finite values")
        if np.any(self.values < 0):
            raise InvalidInputError("demand must be non-negative")

    @classmethod
    def zeros(cls, pairs: ODPairSet) -> ODMatrix:
        return cls(pairs, np.zeros(len(pairs)))

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def get(self, origin: str, destination: str) -> float:
        return float(self.values[self.pairs.index(origin, destination)])

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {p: float(v) for p, v in zip(self.pairs, self.values)}

    def to_square(self, node_ids: Sequence[str]) -> np.ndarray:
        pos = {n: i for i, n in enumerate(node_ids)}
        out = np.zeros((len(node_ids), len(node_ids)))
        for (o, d), v in zip(self.pairs, self.values):
            out[pos[o], pos[d]] = v
        return out


@dataclass(frozen=True)
class FlowSnapshot:
    sample: int
    time_bin: str
    flows: Mapping[str, float]


class FlowSampleSet:
    """J snapshots of mean hourly superedge flows for one time bin.

    ``flows`` has shape (J, |A|) with columns ordered as ``edge_ids``.
    """

    def __init__(self, edge_ids: Sequence[str], flows, labels: Sequence[str] | None = None,
                 time_bin: str = ""):
        self.edge_ids = tuple(edge_ids)
        flows = np.asarray(flows, dtype=float)
        if flows.ndim == 1:
            flows = flows[None, :]
        if flows.ndim != 2 or flows.shape[1] != len(self.edge_ids):
            raise InvalidInputError(
                f"flow array of shape {flows.shape} does not match {len(self.edge_ids)} edges")
        if not np.all(np.isfinite(flows)) or np.any(flows < 0):
            raise InvalidInputError("flows must be finite and non-negative")
        self.flows = flows
        self.labels = tuple(labels) if labels is not None else tuple(str(j) for j in range(len(flows)))
        if len(self.labels) != len(flows):
            raise InvalidInputError("one label per snapshot required")
        self.time_bin = time_bin

    def __len__(self):
        return self.flows.shape[0]

    @property
    def n_samples(self) -> int:
        return self.flows.shape[0]

    def mean(self) -> np.ndarray:
        return self.flows.mean(axis=0)

    def snapshot(self, j: int) -> FlowSnapshot:
        return FlowSnapshot(j, self.time_bin, dict(zip(self.edge_ids, self.flows[j])))

    def __iter__(self):
        return (self.snapshot(j) for j in range(len(self)))

    def restrict(self, edge_ids: Sequence[str]) -> FlowSampleSet:
        pos = {e: i for i, e in enumerate(self.edge_ids)}
        try:
            cols = [pos[e] for e in edge_ids]
        except KeyError as exc:
            raise InconsistencyError(f"no flows recorded for edge {exc.args[0]!r}") from None
        return FlowSampleSet(edge_ids, self.flows[:, cols], self.labels, self.time_bin)

    def aligned(self, network: RoadNetwork) -> FlowSampleSet:
        """Columns reordered to the network's edge order."""
        if tuple(network.edge_ids) == self.edge_ids:
            return self
        return self.restrict(network.edge_ids)
