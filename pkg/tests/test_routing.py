import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from odpart.errors import InconsistencyError, InvalidPairError
from odpart.network import ODPairSet, RoadNetwork
from odpart.routing import Route, RouteSet, build_route_set, k_shortest_routes

from conftest import make_network, path_length, simple_paths


def oracle(network, o, d, k):
    paths = simple_paths(network, o, d)
    paths.sort(key=lambda p: (math.fsum(network.edge(e).length for e in p), p))
    return paths[:k]


def test_parallel_edges():
    net = make_network([("e2", "u", "v", 2), ("e1", "u", "v", 1), ("back", "v", "u", 1)])
    routes = k_shortest_routes(net, ("u", "v"), k=4)
    assert [r.edge_ids for r in routes] == [("e1",), ("e2",)]
    assert [r.length for r in routes] == [1.0, 2.0]


def test_same_pair_rejected(block9):
    with pytest.raises(InvalidPairError):
        k_shortest_routes(block9, ("1", "1"))
    with pytest.raises(InvalidPairError):
        k_shortest_routes(block9, ("1", "2"), k=0)


def test_unreachable_is_empty():
    net = make_network([("ab", "a", "b", 1)])
    assert k_shortest_routes(net, ("b", "a")) == []


def test_k1_matches_dijkstra(block9):
    G = nx.DiGraph()
    for e in block9.edges:
        G.add_edge(e.tail, e.head, weight=e.length)
    for o in block9.node_ids:
        dist = nx.single_source_dijkstra_path_length(G, o)
        for d in block9.node_ids:
            if o != d:
                (r,) = k_shortest_routes(block9, (o, d), k=1)
                assert r.length == pytest.approx(dist[d], abs=1e-12)


def test_block_pair_1_8_exhaustive(block9):
    routes = k_shortest_routes(block9, ("1", "8"), k=4)
    assert [r.edge_ids for r in routes] == oracle(block9, "1", "8", 4)


def test_all_block_pairs_exhaustive(block9):
    for o in block9.node_ids:
        for d in block9.node_ids:
            if o != d:
                routes = k_shortest_routes(block9, (o, d), k=4)
                assert [r.edge_ids for r in routes] == oracle(block9, o, d, 4)


@st.composite
def small_graphs(draw):
    n = draw(st.integers(3, 6))
    nodes = [str(i) for i in range(n)]
    arcs = draw(st.lists(st.tuples(st.sampled_from(nodes), st.sampled_from(nodes),
                                   st.integers(1, 4)), min_size=n, max_size=3 * n))
    edges = [(f"e{j:02d}", t, h, l) for j, (t, h, l) in enumerate(arcs) if t != h]
    return make_network(edges, nodes=nodes)


@given(small_graphs(), st.integers(1, 6), st.data())
def test_yen_matches_enumeration(net, k, data):
    o = data.draw(st.sampled_from(net.node_ids))
    d = data.draw(st.sampled_from([n for n in net.node_ids if n != o]))
    got = [r.edge_ids for r in k_shortest_routes(net, (o, d), k=k)]
    assert got == oracle(net, o, d, k)
    for r in got:
        nodes = [net.edge(r[0]).tail] + [net.edge(e).head for e in r]
        assert len(set(nodes)) == len(nodes)


@given(small_graphs(), st.randoms())
def test_edge_order_invariance(net, rnd):
    edges = list(net.edges)
    rnd.shuffle(edges)
    shuffled = RoadNetwork(net.nodes, edges)
    pairs = ODPairSet.for_network(net)
    a = build_route_set(net, pairs, k=3)
    b = build_route_set(shuffled, pairs, k=3)
    assert [[r.edge_ids for r in rs] for rs in a.routes] == [[r.edge_ids for r in rs] for rs in b.routes]


def test_incidence_row():
    net = make_network([("a1", "u", "v", 1), ("a2", "v", "u", 1), ("a3", "v", "w", 1),
                        ("a4", "w", "u", 1)])
    rs = RouteSet(net, ODPairSet([("u", "w")]), [[Route(0, ("a1", "a3"), 2.0)]])
    assert rs.incidence.toarray().tolist() == [[1, 0, 1, 0]]


def test_incidence_counts(block9):
    rs = build_route_set(block9, k=4)
    B = rs.incidence
    assert B.shape == (rs.n_routes, 24)
    assert B.sum() == sum(len(r.edge_ids) for r in rs.all_routes())
    assert np.all(rs.counts() == 4)
    for route in rs.all_routes():
        assert path_length(block9, route.edge_ids) == pytest.approx(route.length)


def test_unknown_edge_rejected():
    net = make_network([("a", "u", "v", 1), ("b", "v", "u", 1)])
    with pytest.raises(InconsistencyError):
        RouteSet(net, ODPairSet([("u", "v")]), [[Route(0, ("zz",), 1.0)]])


def test_subset_reindexes(block9):
    rs = build_route_set(block9, k=2)
    keep = np.zeros(len(rs.pairs), dtype=bool)
    keep[[3, 10]] = True
    sub = rs.subset(keep)
    assert list(sub.pairs) == [rs.pairs[3], rs.pairs[10]]
    assert [r.pair_index for r in sub.all_routes()] == [0, 0, 1, 1]
    assert sub.incidence.toarray().tolist() == rs.incidence.toarray()[[6, 7, 20, 21]].tolist()
