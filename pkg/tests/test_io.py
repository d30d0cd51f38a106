import numpy as np
import pytest

from odpart import io
from odpart.errors import InvalidInputError
from odpart.network import FlowSampleSet, ODMatrix, ODPairSet
from odpart.partition import resolution_sweep
from odpart.synth import SynthConfig, synth_problem

TNTP = """<NUMBER OF ZONES> 2
<NUMBER OF NODES> 3
<FIRST THRU NODE> 1
<NUMBER OF LINKS> 4
<END OF METADATA>

~ init_node term_node capacity length free_flow_time b power speed toll link_type ;
1 2 25900.2 6 6 0.15 4 0 0 1 ;
2 1 25900.2 6 6 0.15 4 0 0 1 ;
2 3 4958.2 4 4 0.15 4 0 0 1 ;
2 3 1000 5 5 0.3 2 0 0 1 ;
3 2 4958.2 4 4 0.15 4 0 0 1 ;
"""


@pytest.fixture(scope="module")
def problem():
    return synth_problem(SynthConfig(blocks=2, seed=1), validation_days=5)


def test_network_round_trip(tmp_path, problem):
    n, e = io.write_network(problem.network, tmp_path)
    back = io.read_network(n, e)
    assert back.nodes == problem.network.nodes
    assert back.edges == problem.network.edges


def test_flows_round_trip(tmp_path, problem):
    path = io.write_flows(problem.samples, tmp_path / "f.csv")
    back = io.read_flows(path, problem.network.edge_ids)
    assert back.flows.tobytes() == problem.samples.flows.tobytes()
    assert back.labels == problem.samples.labels


def test_flows_missing_edge(tmp_path):
    s = FlowSampleSet(["a", "b"], [[1.0, 2.0]])
    path = io.write_flows(s, tmp_path / "f.csv")
    with pytest.raises(InvalidInputError):
        io.read_flows(path, ["a", "b", "c"])


def test_od_round_trip(tmp_path, problem):
    path = io.write_od(problem.truth, tmp_path / "od.csv")
    back = io.read_od(path, problem.truth.pairs)
    assert back.values.tobytes() == problem.truth.values.tobytes()


def test_partition_round_trip(tmp_path, problem):
    _, part = resolution_sweep(problem.network, 0)[-1]
    path = io.write_partition(part, tmp_path / "p.csv")
    assert io.read_partition(path) == part.assignment


def test_tntp(tmp_path):
    path = tmp_path / "toy_net.tntp"
    path.write_text(TNTP)
    net = io.read_tntp_network(path)
    assert net.node_ids == ["1", "2", "3"]
    assert net.edge_ids == ["1-2", "2-1", "2-3", "2-3#1", "3-2"]
    e = net.edge("2-3#1")
    assert (e.capacity, e.length, e.free_flow_time, e.alpha, e.beta) == (1000.0, 5.0, 5.0, 0.3, 2.0)


def test_tntp_short_line(tmp_path):
    path = tmp_path / "bad_net.tntp"
    path.write_text("<END OF METADATA>\n1 2 3 ;\n")
    with pytest.raises(InvalidInputError):
        io.read_tntp_network(path)


def test_read_network_missing_column(tmp_path):
    (tmp_path / "nodes.csv").write_text("id,label,lat,lon\na,,,\nb,,,\n")
    (tmp_path / "edges.csv").write_text(
        "id,tail,head,length_km,capacity_vph,t0_hours,alpha,beta\nab,a,b,1,,1,,\n")
    with pytest.raises(InvalidInputError):
        io.read_network(tmp_path / "nodes.csv", tmp_path / "edges.csv")


def test_od_written_sparse(tmp_path):
    pairs = ODPairSet([("a", "b"), ("b", "a")])
    path = io.write_od(ODMatrix(pairs, [0.0, 2.5]), tmp_path / "od.csv")
    assert path.read_text().splitlines() == ["origin_id,destination_id,demand_vph", "b,a,2.5"]
    assert io.read_od(path, pairs).values.tolist() == [0.0, 2.5]
    assert np.all(io.read_od(path, pairs).values >= 0)
