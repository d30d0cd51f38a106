import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from odpart.errors import InconsistencyError, InvalidInputError
from odpart.network import (FlowSampleSet, ODMatrix, ODPairSet, RoadNetwork, SuperEdge,
                            SuperNode, bpr_integral, bpr_travel_time, incidence, validate)

from conftest import make_network


def edge(t0=1.0, m=1000.0, a=0.15, b=4.0):
    return SuperEdge("e", "u", "v", 1.0, m, t0, a, b)


@pytest.mark.parametrize("e, x, expected", [
    (edge(), 0.0, 1.0),
    (edge(), 1000.0, 1.15),
    (edge(t0=0.5, m=2000.0), 4000.0, 1.7),
])
def test_bpr_examples(e, x, expected):
    assert bpr_travel_time(e, x) == pytest.approx(expected, rel=1e-12)


def test_bpr_negative_flow():
    with pytest.raises(InvalidInputError):
        bpr_travel_time(edge(), -1.0)
    with pytest.raises(InvalidInputError):
        bpr_integral(edge(), -1.0)


def test_bpr_integral_examples():
    assert bpr_integral(edge(), 0.0) == 0.0
    assert bpr_integral(edge(), 1000.0) == pytest.approx(1030.0, rel=1e-12)


@given(x=st.floats(0.0, 5000.0), t0=st.floats(0.01, 5.0), m=st.floats(10.0, 1e4),
       a=st.floats(0.0, 1.0), b=st.floats(1.0, 6.0))
def test_bpr_integral_matches_quadrature(x, t0, m, a, b):
    e = edge(t0, m, a, b)
    ref, _ = quad(lambda s: bpr_travel_time(e, s), 0.0, x, epsabs=0, epsrel=1e-12, limit=200)
    assert bpr_integral(e, x) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@given(x=st.floats(0.0, 1e4), dx=st.floats(0.0, 1e3))
def test_bpr_monotone(x, dx):
    e = edge()
    assert bpr_travel_time(e, x + dx) >= bpr_travel_time(e, x) >= e.free_flow_time


def test_validate_two_node():
    assert validate(make_network([("ab", "a", "b", 1), ("ba", "b", "a", 1)])).passed
    res = validate(make_network([("ab", "a", "b", 1)]))
    assert not res.passed and not res.strongly_connected


def test_validate_block(block9):
    assert validate(block9).passed


def test_validate_reports_bad_parameters():
    net = RoadNetwork([SuperNode("a"), SuperNode("b")],
                      [SuperEdge("ab", "a", "b", 1.0, 0.0, 1.0), SuperEdge("ba", "b", "a", 1.0, 10.0, 1.0)])
    res = validate(net)
    assert any("capacity" in f for f in res.failures)


def test_incidence_single_edge():
    N = incidence(make_network([("a", "u", "v", 1)])).toarray()
    assert N.tolist() == [[-1.0], [1.0]]


def test_incidence_block(block9):
    N = incidence(block9).toarray()
    assert N.shape == (9, 24)
    assert np.all(N.sum(axis=0) == 0)
    assert np.all((N == -1).sum(axis=0) == 1)


def test_structural_errors():
    with pytest.raises(InconsistencyError):
        RoadNetwork([SuperNode("a"), SuperNode("a")], [])
    with pytest.raises(InconsistencyError):
        RoadNetwork([SuperNode("a")], [SuperEdge("e", "a", "z", 1, 1, 1)])
    with pytest.raises(InconsistencyError):
        make_network([("e", "a", "b", 1), ("e", "b", "a", 1)])


def test_od_pairs_and_matrix():
    pairs = ODPairSet.all_pairs(["a", "b", "c"])
    assert list(pairs) == [("a", "b"), ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b")]
    od = ODMatrix(pairs, np.arange(6.0))
    assert od.get("b", "c") == 3.0
    assert od.total == 15.0
    with pytest.raises(InvalidInputError):
        ODMatrix(pairs, -np.ones(6))
    with pytest.raises(InvalidInputError):
        ODMatrix(pairs, np.ones(5))


def test_flow_samples():
    s = FlowSampleSet(["a", "b"], [[1.0, 2.0], [3.0, 4.0]])
    assert s.mean().tolist() == [2.0, 3.0]
    assert s.restrict(["b"]).flows.tolist() == [[2.0], [4.0]]
    assert s.snapshot(1).flows == {"a": 3.0, "b": 4.0}
    with pytest.raises(InvalidInputError):
        FlowSampleSet(["a"], [[-1.0]])
