import itertools

import numpy as np
import pytest
from hypothesis import settings

from odpart.network import RoadNetwork, SuperEdge, SuperNode
from odpart.synth import SynthConfig, build_block_network

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def make_network(edges, nodes=None, capacity=1000.0):
    """Network from ``(id, tail, head, length)`` tuples; t0 = length."""
    if nodes is None:
        nodes = list(dict.fromkeys(n for e in edges for n in e[1:3]))
    return RoadNetwork([SuperNode(n) for n in nodes],
                       [SuperEdge(i, t, h, float(l), capacity, float(l)) for i, t, h, l in edges])


def bidirected(pairs, capacity=1000.0):
    """Bidirected network from ``(a, b, length)`` tuples."""
    edges = []
    for a, b, l in pairs:
        edges += [(f"{a}-{b}", a, b, l), (f"{b}-{a}", b, a, l)]
    return make_network(edges, capacity=capacity)


def simple_paths(network, source, target):
    """Every simple path as a tuple of edge ids (brute force)."""
    out_edges = {}
    for e in network.edges:
        out_edges.setdefault(e.tail, []).append(e)
    found = []

    def walk(node, seen, path):
        if node == target:
            found.append(tuple(path))
            return
        for e in out_edges.get(node, []):
            if e.head not in seen:
                walk(e.head, seen | {e.head}, path + [e.id])

    walk(source, {source}, [])
    return found


def path_length(network, path):
    return sum(network.edge(e).length for e in path)


def all_partitions(items):
    """Every set partition of ``items`` as a list of blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in all_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


@pytest.fixture(scope="session")
def block9():
    return build_block_network(SynthConfig(blocks=1, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
