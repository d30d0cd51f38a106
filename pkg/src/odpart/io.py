"""Flat-file readers and writers (CSV plus the TNTP network format)."""
from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .network import FlowSampleSet, ODMatrix, ODPairSet, RoadNetwork, SuperEdge, SuperNode

NODE_COLUMNS = ["id", "label", "lat", "lon"]
EDGE_COLUMNS = ["id", "tail", "head", "length_km", "capacity_vph", "t0_hours", "alpha", "beta"]


def _rows(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _opt_float(s):
    return None if s in ("", None) else float(s)


def _num(v) -> str:
    # repr round-trips floats exactly
    return "" if v is None else repr(float(v))


def read_network(nodes_path, edges_path) -> RoadNetwork:
    nodes = [SuperNode(r["id"], r.get("label", "") or "", _opt_float(r.get("lat")),
                       _opt_float(r.get("lon"))) for r in _rows(nodes_path)]
    edges = []
    for r in _rows(edges_path):
        missing = [c for c in EDGE_COLUMNS[:6] if r.get(c) in ("", None)]
        if missing:
            raise InvalidInputError(f"edge {r.get('id')!r} lacks {missing}")
        edges.append(SuperEdge(
            r["id"], r["tail"], r["head"], float(r["length_km"]), float(r["capacity_vph"]),
            float(r["t0_hours"]), float(r.get("alpha") or 0.15), float(r.get("beta") or 4.0)))
    return RoadNetwork(nodes, edges)


def write_network(network: RoadNetwork, directory, prefix: str = "") -> tuple[Path, Path]:
    d = Path(directory)
    n = _write(d / f"{prefix}nodes.csv", NODE_COLUMNS,
               [[v.id, v.label, _num(v.lat), _num(v.lon)] for v in network.nodes])
    e = _write(d / f"{prefix}edges.csv", EDGE_COLUMNS,
               [[a.id, a.tail, a.head, _num(a.length), _num(a.capacity),
                 _num(a.free_flow_time), _num(a.alpha), _num(a.beta)] for a in network.edges])
    return n, e


def read_tntp_network(path) -> RoadNetwork:
    """Read a TNTP ``*_net.tntp`` file.

    Columns map as init_node/term_node -> tail/head, capacity -> capacity,
    length -> length, free_flow_time -> t0, b -> alpha, power -> beta. Units
    are taken as given in the file. Parallel links get ``#k`` id suffixes.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta = dict(re.findall(r"<([^>]+)>\s*([^\n<]*)", text))
    body = text.split("<END OF METADATA>", 1)[-1]
    edges, seen, node_ids = [], {}, set()
    for line in body.splitlines():
        line = line.strip()
        if not line or line.startswith("~"):
            continue
        parts = line.rstrip(";").split()
        if len(parts) < 7:
            raise InvalidInputError(f"short TNTP link line: {line!r}")
        tail, head = parts[0], parts[1]
        cap, length, t0, b, power = (float(p) for p in parts[2:7])
        base = f"{tail}-{head}"
        k = seen.get(base, 0)
        seen[base] = k + 1
        eid = base if k == 0 else f"{base}#{k}"
        edges.append(SuperEdge(eid, tail, head, length, cap, t0, b, power))
        node_ids.update((tail, head))
    n_nodes = int(meta.get("NUMBER OF NODES", "0").strip() or 0)
    ids = [str(i) for i in range(1, n_nodes + 1)] if n_nodes else []
    ids += sorted(node_ids - set(ids), key=lambda s: (len(s), s))
    return RoadNetwork([SuperNode(i, i) for i in ids], edges)


def write_flows(samples: FlowSampleSet, path) -> Path:
    rows = []
    labels = samples.labels or [str(j) for j in range(samples.n_samples)]
    for j, day in enumerate(labels):
        rows += [[day, e, _num(v)] for e, v in zip(samples.edge_ids, samples.flows[j])]
    return _write(path, ["day", "edge_id", "flow_vph"], rows)


def read_flows(path, edge_ids=None, time_bin: str = "") -> FlowSampleSet:
    rows = _rows(path)
    days: dict[str, dict[str, float]] = {}
    for r in rows:
        days.setdefault(r["day"], {})[r["edge_id"]] = float(r["flow_vph"])
    if edge_ids is None:
        edge_ids = list(dict.fromkeys(r["edge_id"] for r in rows))
    flows = np.empty((len(days), len(edge_ids)))
    for j, (day, vals) in enumerate(days.items()):
        try:
            flows[j] = [vals[e] for e in edge_ids]
        except KeyError as exc:
            raise InvalidInputError(f"day {day} has no flow for edge {exc.args[0]}") from None
    return FlowSampleSet(list(edge_ids), flows, list(days), time_bin)


def write_od(od: ODMatrix, path) -> Path:
    rows = [[o, d, _num(v)] for (o, d), v in zip(od.pairs, od.values) if v != 0]
    return _write(path, ["origin_id", "destination_id", "demand_vph"], rows)


def read_od(path, pairs: ODPairSet) -> ODMatrix:
    values = np.zeros(len(pairs))
    for r in _rows(path):
        values[pairs.index(r["origin_id"], r["destination_id"])] = float(r["demand_vph"])
    return ODMatrix(pairs, values)


def write_routes(routes, path) -> Path:
    rows = []
    for i, rs in enumerate(routes.routes):
        for rank, r in enumerate(rs):
            rows.append([i, rank, ";".join(r.edge_ids), _num(r.length)])
    return _write(path, ["pair_index", "rank", "edge_ids", "length_km"], rows)


def write_partition(partitioning, path) -> Path:
    return _write(path, ["node_id", "community_id"],
                  [[n, c] for n, c in partitioning.assignment.items()])


def read_partition(path) -> dict[str, int]:
    return {r["node_id"]: int(r["community_id"]) for r in _rows(path)}


def write_members(community, path) -> Path:
    return _write(path, ["community_edge_id", "edge_id"],
                  [[ce, e] for ce, es in community.members.items() for e in es])


def write_equilibrium(solution, network: RoadNetwork, directory) -> tuple[Path, Path]:
    d = Path(directory)
    a = _write(d / "ue_flows.csv", ["edge_id", "flow_vph", "time_hours"],
               [[e, _num(x), _num(t)] for e, x, t in
                zip(network.edge_ids, solution.flows, solution.times)])
    b = _write(d / "fw_trace.csv", ["iter", "objective", "gap"],
               [[i, _num(o), _num(g)] for i, o, g in solution.trace])
    return a, b


def write_adjust_trace(result, path) -> Path:
    return _write(path, ["iter", "F", "grad_norm", "step"],
                  [[i, _num(F), "" if math.isnan(gn) else _num(gn), _num(s)]
                   for i, F, gn, s in result.trace])
