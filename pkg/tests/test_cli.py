import json

import numpy as np
import pandas as pd
import pytest

from odpart import io
from odpart.cli import main
from odpart.network import ODPairSet


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["--seed", "2", "--out", str(d), "synth", "--blocks", "1",
                 "--validation-days", "20"]) == 0
    return d


def net_args(d):
    return ["--nodes", str(d / "nodes.csv"), "--edges", str(d / "edges.csv")]


def test_synth_outputs(synth_dir):
    for name in ("nodes.csv", "edges.csv", "flows.csv", "validation.csv", "od_truth.csv"):
        assert (synth_dir / name).exists()
    net = io.read_network(synth_dir / "nodes.csv", synth_dir / "edges.csv")
    assert net.n_edges == 24
    assert len(io.read_flows(synth_dir / "validation.csv", net.edge_ids)) == 20


def test_pipeline(synth_dir, tmp_path):
    d = synth_dir
    assert main(["--out", str(tmp_path / "p"), "partition", *net_args(d),
                 "--flows", str(d / "flows.csv")]) == 0
    summary = json.loads((tmp_path / "p" / "partitions.json").read_text())
    assert [s["n_communities"] for s in summary] == [9, 6, 3]
    assert (tmp_path / "p" / "community_3" / "members.csv").exists()

    assert main(["--out", str(tmp_path / "e"), "estimate", *net_args(d), "--flows",
                 str(d / "flows.csv"), "--strategy", "combined", "--partition",
                 str(tmp_path / "p" / "partition_3.csv"), "--routes-dump"]) == 0
    assert (tmp_path / "e" / "routes.csv").exists()

    assert main(["--out", str(tmp_path / "a"), "adjust", *net_args(d), "--flows",
                 str(d / "flows.csv"), "--prior", str(tmp_path / "e" / "od.csv"),
                 "--cost", "length"]) == 0
    adj = json.loads((tmp_path / "a" / "adjust.json").read_text())
    assert adj["converged"]

    assert main(["--out", str(tmp_path / "u"), "assign", *net_args(d), "--od",
                 str(tmp_path / "a" / "od.csv"), "--cost", "length"]) == 0
    assert json.loads((tmp_path / "u" / "assign.json").read_text())["converged"]

    assert main(["--out", str(tmp_path / "v"), "validate", *net_args(d), "--ue-flows",
                 str(tmp_path / "u" / "ue_flows.csv"), "--validation",
                 str(d / "validation.csv")]) == 0
    val = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert 0 <= val["flow"]["median"] < 1


def test_estimate_strategies_agree_with_library(synth_dir, tmp_path):
    from odpart.estimation import estimate_unpartitioned

    d = synth_dir
    assert main(["--out", str(tmp_path), "estimate", *net_args(d), "--flows",
                 str(d / "flows.csv")]) == 0
    net = io.read_network(d / "nodes.csv", d / "edges.csv")
    od = io.read_od(tmp_path / "od.csv", ODPairSet.for_network(net))
    ref = estimate_unpartitioned(net, io.read_flows(d / "flows.csv", net.edge_ids))
    assert od.values.tobytes() == ref.values.tobytes()


def test_sweep_with_config(synth_dir, tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text('strategy = "degenerate"\nblocks = 2\nsizes = [2]\n')
    assert main(["--config", str(cfg), "--out", str(tmp_path / "s"), "sweep"]) == 0
    data = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert data["strategy"] == "degenerate"
    assert [s["n_communities"] for s in data["sizes"]] == [2]
    # flags win over the file
    assert main(["--config", str(cfg), "--out", str(tmp_path / "s2"), "sweep",
                 "--strategy", "unpartitioned"]) == 0
    data = json.loads((tmp_path / "s2" / "summary.json").read_text())
    assert data["strategy"] == "unpartitioned"


def test_json_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"blocks": 1, "validation_days": 3}))
    assert main(["--config", str(cfg), "--out", str(tmp_path), "synth"]) == 0
    assert len(io.read_flows(tmp_path / "validation.csv")) == 3


def test_missing_required_option(capsys, tmp_path):
    assert main(["--out", str(tmp_path), "adjust", "--nodes", "x", "--edges", "y"]) == 2
    assert "--flows" in capsys.readouterr().err


def test_bad_input_exit_code(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "assign", "--nodes", str(tmp_path / "none.csv"),
                 "--edges", str(tmp_path / "none.csv"), "--od", "x"]) == 2
    assert "error" in capsys.readouterr().err


def test_ingest(tmp_path):
    from odpart.network import RoadNetwork, SuperEdge, SuperNode

    net = RoadNetwork([SuperNode("a"), SuperNode("b")],
                      [SuperEdge("ab", "a", "b", 2.0, 1000.0, 0.05),
                       SuperEdge("ba", "b", "a", 2.0, 1000.0, 0.05)])
    io.write_network(net, tmp_path)
    minutes = np.arange(360, 1200)
    rows = [("s_" + e, e, "2024-03-0%d" % day, m, 10.0 + (e == "ba"), 60.0)
            for day in (1, 2) for e in ("ab", "ba") for m in minutes]
    pd.DataFrame(rows, columns=["sensor_id", "edge_id", "date", "minute_of_day", "flow_vpm",
                                "speed_kmh"]).to_csv(tmp_path / "readings.csv", index=False)
    out = tmp_path / "out"
    assert main(["--out", str(out), "ingest", *net_args(tmp_path), "--readings",
                 str(tmp_path / "readings.csv"), "--bins", "AM,PM", "--min-obs", "100"]) == 0
    flows = io.read_flows(out / "flows_AM.csv")
    assert flows.flows.tolist() == [[600.0, 660.0], [600.0, 660.0]]
    edges = io.read_network(out / "nodes.csv", out / "edges.csv")
    assert edges.edge("ba").capacity == 660.0
    assert edges.edge("ab").free_flow_time == pytest.approx(2.0 / 60.0)
    assert not (out / "flows_MD.csv").exists()
