"""Modular test networks with known demand and Poisson flow samples.

Each block is three bidirected triangles joined in a ring; blocks are chained
into a larger network through randomly chosen low-degree nodes. The
networks are uncongested: link cost is the edge length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assignment import frank_wolfe, length_cost
from .errors import ConstructionError, InvalidInputError
from .network import FlowSampleSet, ODMatrix, ODPairSet, RoadNetwork, SuperEdge, SuperNode

# local (1-based) node numbering inside one nine-node block
TRIANGLES = ((1, 2), (2, 3), (1, 3), (4, 5), (5, 6), (4, 6), (7, 8), (8, 9), (7, 9))
CONNECTORS = ((2, 4), (6, 7), (3, 9))
MAX_CONNECT_DEGREE = 6
PLACEHOLDER_CAPACITY = 1e6


@dataclass(frozen=True)
class SynthConfig:
    blocks: int = 1
    seed: int = 0
    intra_distance: float = 1.0
    inter_distance: float = 5.0
    connector_distance: float = 10.0
    demand_max: int = 10
    integer_demand: bool = True
    sample_multiplier: float = 2.5

    def __post_init__(self):
        if self.blocks < 1:
            raise InvalidInputError("at least one block is required")
        if min(self.intra_distance, self.inter_distance, self.connector_distance) <= 0:
            raise InvalidInputError("distances must be positive")
        if self.sample_multiplier <= 0:
            raise InvalidInputError("sample multiplier must be positive")


def _edge(tail: int, head: int, length: float) -> SuperEdge:
    return SuperEdge(f"{tail}-{head}", str(tail), str(head), length,
                     PLACEHOLDER_CAPACITY, length)


def _both(a: int, b: int, length: float) -> list[SuperEdge]:
    return [_edge(a, b, length), _edge(b, a, length)]


def build_block_network(config: SynthConfig) -> RoadNetwork:
    rng = np.random.default_rng(config.seed)
    nodes: list[int] = []
    edges: list[SuperEdge] = []
    degree: dict[int, int] = {}

    for b in range(config.blocks):
        off = 9 * b
        block_nodes = [off + i for i in range(1, 10)]
        block_edges = []
        for u, v in TRIANGLES:
            block_edges += _both(off + u, off + v, config.intra_distance)
        for u, v in CONNECTORS:
            block_edges += _both(off + u, off + v, config.inter_distance)
        block_degree = {n: 0 for n in block_nodes}
        for e in block_edges:
            block_degree[int(e.tail)] += 1
            block_degree[int(e.head)] += 1

        if nodes:
            old = [n for n in nodes if degree[n] < MAX_CONNECT_DEGREE]
            new = [n for n in block_nodes if block_degree[n] < MAX_CONNECT_DEGREE]
            if not old or not new:
                raise ConstructionError("no eligible node to connect the next block")
            a = old[rng.integers(len(old))]
            c = new[rng.integers(len(new))]
            block_edges += _both(a, c, config.connector_distance)
            degree[a] += 2
            block_degree[c] += 2

        nodes += block_nodes
        edges += block_edges
        degree.update(block_degree)

    return RoadNetwork([SuperNode(str(n), str(n)) for n in nodes], edges)


def random_demand(network: RoadNetwork, seed: int, demand_max: int = 10,
                  integer: bool = True, pairs: ODPairSet | None = None) -> ODMatrix:
    """Independent uniform demand per ordered pair, in ``{0..demand_max}`` by default."""
    pairs = pairs or ODPairSet.for_network(network)
    rng = np.random.default_rng(seed)
    if integer:
        values = rng.integers(0, demand_max + 1, size=len(pairs)).astype(float)
    else:
        values = rng.uniform(0.0, demand_max, size=len(pairs))
    return ODMatrix(pairs, values)


def equilibrium_mean_flows(network: RoadNetwork, demand: ODMatrix) -> np.ndarray:
    return frank_wolfe(network, demand, cost=length_cost(network)).flows


def sample_count(network: RoadNetwork, multiplier: float = 2.5) -> int:
    return int(math.ceil(multiplier * network.n_edges))


def poisson_samples(network: RoadNetwork, mean_flows, n_samples: int, seed: int,
                    time_bin: str = "synth", label_offset: int = 0) -> FlowSampleSet:
    """One independent Poisson draw per edge per day; day ``j`` uses its own child seed."""
    mean_flows = np.asarray(mean_flows, dtype=float)
    children = np.random.SeedSequence(seed).spawn(label_offset + n_samples)[label_offset:]
    flows = np.empty((n_samples, network.n_edges))
    for j, child in enumerate(children):
        flows[j] = np.random.default_rng(child).poisson(mean_flows)
    labels = [f"d{label_offset + j:04d}" for j in range(n_samples)]
    return FlowSampleSet(network.edge_ids, flows, labels, time_bin)


def simulate_flows(network: RoadNetwork, demand: ODMatrix, config: SynthConfig,
                   n_samples: int | None = None, seed: int | None = None) -> FlowSampleSet:
    """Poisson flow samples around the uncongested equilibrium of ``demand``."""
    mean = equilibrium_mean_flows(network, demand)
    n = n_samples if n_samples is not None else sample_count(network, config.sample_multiplier)
    return poisson_samples(network, mean, n, config.seed if seed is None else seed)


@dataclass
class SynthProblem:
    network: RoadNetwork
    truth: ODMatrix
    mean_flows: np.ndarray
    samples: FlowSampleSet
    validation: FlowSampleSet
    config: SynthConfig


def synth_problem(config: SynthConfig, validation_days: int | None = None) -> SynthProblem:
    """Network, ground-truth demand, fitting samples and held-out validation samples.

    Fitting and validation days are disjoint children of the same seed
    sequence. Capacities are set to ten times the largest mean flow so that
    the network stays effectively uncongested even under BPR costs.
    """
    network = build_block_network(config)
    demand_seed = int(np.random.SeedSequence([config.seed, 1]).generate_state(1)[0])
    truth = random_demand(network, demand_seed, config.demand_max, config.integer_demand)
    mean = equilibrium_mean_flows(network, truth)
    cap = 10.0 * float(mean.max()) if mean.max() > 0 else PLACEHOLDER_CAPACITY
    network = network.replace_edges(capacity=np.full(network.n_edges, cap))
    n_fit = sample_count(network, config.sample_multiplier)
    n_val = validation_days if validation_days is not None else n_fit
    sample_seed = int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0])
    fit = poisson_samples(network, mean, n_fit, sample_seed)
    val = poisson_samples(network, mean, n_val, sample_seed, time_bin="validation",
                          label_offset=n_fit)
    return SynthProblem(network, truth, mean, fit, val, config)
