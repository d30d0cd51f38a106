"""Command-line entry point: ``odpart <subcommand> [options]``.

Every subcommand reads and writes the flat-file formats of :mod:`odpart.io`.
Options may also come from ``--config`` (a JSON or TOML key-value file);
command-line flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigurationError, OdpartError

log = logging.getLogger("odpart")


def _load_config(path) -> dict:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a key-value table")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _network(args):
    if getattr(args, "tntp", None):
        return io.read_tntp_network(args.tntp)
    if not (args.nodes and args.edges):
        raise ConfigurationError("--nodes and --edges (or --tntp) are required")
    return io.read_network(args.nodes, args.edges)


def _cost(kind, network):
    from .assignment import ConstantCost

    return ConstantCost(network.lengths) if kind == "length" else None


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True))


def cmd_ingest(args, out: Path):
    from .ingest import DEFAULT_BINS, load_readings, process_readings

    network = _network(args)
    readings = load_readings(args.readings)
    days = sorted(readings["date"].unique())
    if args.date_from:
        days = [d for d in days if d >= args.date_from]
    if args.date_to:
        days = [d for d in days if d <= args.date_to]
    bins = [b for b in DEFAULT_BINS if b.label in set(args.bins.split(","))]
    if not bins:
        raise ConfigurationError(f"no known time bin in {args.bins!r}")
    res = process_readings(readings, network, bins, days, min_obs=args.min_obs)
    io.write_network(res.network, out)
    for label, samples in res.flows.items():
        io.write_flows(samples, out / f"flows_{label}.csv")
        io._write(out / f"speeds_{label}.csv", ["edge_id", "speed_kmh"],
                  [[e, "" if np.isnan(v) else repr(float(v))]
                   for e, v in zip(res.network.edge_ids, res.speeds[label])])
    _write_json(out / "ingest.json", {"capacity_source": res.capacity_source,
                                      "snapshots": {k: len(v) for k, v in res.flows.items()}})


def cmd_synth(args, out: Path):
    from .synth import SynthConfig, synth_problem

    prob = synth_problem(SynthConfig(blocks=args.blocks, seed=args.seed), args.validation_days)
    io.write_network(prob.network, out)
    io.write_flows(prob.samples, out / "flows.csv")
    io.write_flows(prob.validation, out / "validation.csv")
    io.write_od(prob.truth, out / "od_truth.csv")


def cmd_partition(args, out: Path):
    from .partition import build_community_network, louvain, resolution_sweep

    network = _network(args)
    samples = io.read_flows(args.flows, network.edge_ids)
    if args.resolution is not None:
        runs = [(args.resolution, louvain(network, args.resolution, args.seed))]
    else:
        runs = resolution_sweep(network, args.seed)
    summary = []
    for r, part in runs:
        c = part.n_communities
        io.write_partition(part, out / f"partition_{c}.csv")
        entry = {"n_communities": c, "resolution": r, "modularity": part.modularity}
        try:
            comm = build_community_network(network, part, samples)
        except OdpartError as exc:
            entry["community_network"] = str(exc)
        else:
            d = out / f"community_{c}"
            io.write_network(comm.network, d)
            io.write_members(comm, d / "members.csv")
            io.write_flows(comm.samples, d / "flows.csv")
        summary.append(entry)
    _write_json(out / "partitions.json", summary)


def cmd_estimate(args, out: Path):
    from .estimation import (GLSConfig, combined_prior, degenerate_prior,
                             estimate_unpartitioned, external_prior, internal_prior)
    from .network import ODPairSet
    from .partition import Partitioning, build_community_network, modularity
    from .routing import build_route_set

    network = _network(args)
    samples = io.read_flows(args.flows, network.edge_ids)
    gls = GLSConfig(k=args.k, max_iter=args.gls_max_iter, ridge=args.ridge)
    if args.routes_dump:
        io.write_routes(build_route_set(network, k=args.k), out / "routes.csv")
    if args.strategy == "unpartitioned":
        io.write_od(estimate_unpartitioned(network, samples, gls), out / "od.csv")
        return
    if not args.partition:
        raise ConfigurationError(f"strategy {args.strategy!r} needs --partition")
    assignment = io.read_partition(args.partition)
    part = Partitioning(float("nan"), assignment, modularity(network, assignment))
    if args.strategy == "internal":
        od = internal_prior(network, part, samples, gls)
    else:
        comm = build_community_network(network, part, samples)
        h = degenerate_prior(comm, comm.samples, gls)
        if args.strategy == "degenerate":
            io.write_network(comm.network, out / "community")
            io.write_members(comm, out / "community" / "members.csv")
            od = h
        else:
            od = external_prior(h, part, ODPairSet.for_network(network), comm.node_of_community)
            if args.strategy == "combined":
                od = combined_prior(internal_prior(network, part, samples, gls), od)
    io.write_od(od, out / "od.csv")


def cmd_adjust(args, out: Path):
    from .adjustment import AdjustmentConfig, adjust
    from .network import ODPairSet

    network = _network(args)
    observed = io.read_flows(args.flows, network.edge_ids).mean()
    prior = io.read_od(args.prior, ODPairSet.for_network(network))
    cfg = AdjustmentConfig(max_iter=args.max_iter, tolerance=args.tolerance,
                           divergence=args.divergence)
    res = adjust(prior, observed, network, cfg, cost=_cost(args.cost, network))
    io.write_od(res.demand, out / "od.csv")
    io.write_adjust_trace(res, out / "adjust_trace.csv")
    _write_json(out / "adjust.json", {"converged": res.converged, "diagnostic": res.diagnostic,
                                      "objective": res.objective,
                                      "iterations": res.iterations})


def cmd_assign(args, out: Path):
    from .assignment import frank_wolfe
    from .network import ODPairSet

    network = _network(args)
    od = io.read_od(args.od, ODPairSet.for_network(network))
    sol = frank_wolfe(network, od, _cost(args.cost, network), args.gap, args.max_iter)
    io.write_equilibrium(sol, network, out)
    _write_json(out / "assign.json", {"converged": sol.converged, "gap": sol.gap,
                                      "iterations": sol.iterations})


def cmd_validate(args, out: Path):
    from .experiment import rae_flow, rae_time

    network = _network(args)
    rows = io._rows(args.ue_flows)
    pred_map = {r["edge_id"]: float(r["flow_vph"]) for r in rows}
    pred = np.asarray([pred_map[e] for e in network.edge_ids])
    obs = io.read_flows(args.validation, network.edge_ids).mean()
    keep = obs > 0
    rx = rae_flow(pred, obs)
    ids = [e for e, k in zip(network.edge_ids, keep) if k]
    io._write(out / "rae_flow.csv", ["edge_id", "rae"], [[e, repr(float(v))] for e, v in zip(ids, rx)])
    summary = {"flow": _stats(rx)}
    if args.speeds:
        from .experiment import _read_speeds

        speeds = _read_speeds(args.speeds, network.edge_ids)
        rt = rae_time(pred, network, speeds)
        ok = np.isfinite(speeds) & (speeds > 0)
        ids = [e for e, k in zip(network.edge_ids, ok) if k]
        io._write(out / "rae_time.csv", ["edge_id", "rae"],
                  [[e, repr(float(v))] for e, v in zip(ids, rt)])
        summary["time"] = _stats(rt)
    _write_json(out / "validate.json", summary)


def _stats(v):
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(len(v))}


def _as_list(value) -> list:
    # config files give lists, the command line gives comma-separated strings
    return list(value) if isinstance(value, (list, tuple)) else str(value).split(",")


def cmd_sweep(args, out: Path):
    from .experiment import ExperimentConfig, run_experiment

    keys = ["strategy", "blocks", "seed", "nodes", "edges", "flows", "validation", "speeds",
            "resolution", "k", "cost", "validation_days"]
    data = {k: v for k, v in args.config_data.items() if k in ExperimentConfig.__dataclass_fields__}
    data.update({k: getattr(args, k) for k in keys if getattr(args, k, None) is not None})
    if args.sizes:
        data["sizes"] = [int(s) for s in _as_list(args.sizes)]
    if args.time_bins:
        data["time_bins"] = [str(b) for b in _as_list(args.time_bins)]
    if data.get("nodes"):
        data["blocks"] = None
    report = run_experiment(ExperimentConfig.from_mapping(data))
    report.write(out)
    for e in report.entries:
        log.info("%d communities (%s): converged=%s median flow RAE=%s", e.n_communities,
                 e.time_bin, e.converged, e.median_flow)


REQUIRED = {
    "ingest": ["readings"],
    "synth": [],
    "partition": ["flows"],
    "estimate": ["flows"],
    "adjust": ["flows", "prior"],
    "assign": ["od"],
    "validate": ["ue_flows", "validation"],
    "sweep": [],
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    p = argparse.ArgumentParser(prog="odpart", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON or TOML file of option defaults")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    def net_args(sp):
        sp.add_argument("--nodes")
        sp.add_argument("--edges")
        sp.add_argument("--tntp", help="TNTP *_net.tntp file instead of nodes/edges")

    sp = subs["ingest"] = sub.add_parser("ingest", help="detector readings to binned flows and edge parameters")
    net_args(sp)
    sp.add_argument("--readings")
    sp.add_argument("--bins", default="AM,MD,PM")
    sp.add_argument("--date-from")
    sp.add_argument("--date-to")
    sp.add_argument("--min-obs", type=int, default=1000)
    sp.set_defaults(func=cmd_ingest)

    sp = subs["synth"] = sub.add_parser("synth", help="synthetic block network, demand and flow samples")
    sp.add_argument("--blocks", type=int, default=1)
    sp.add_argument("--validation-days", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = subs["partition"] = sub.add_parser("partition", help="Louvain partitioning and community networks")
    net_args(sp)
    sp.add_argument("--flows")
    sp.add_argument("--resolution", type=float, help="single resolution instead of a sweep")
    sp.set_defaults(func=cmd_partition)

    sp = subs["estimate"] = sub.add_parser("estimate", help="prior demand by GLS and a partition strategy")
    net_args(sp)
    sp.add_argument("--flows")
    sp.add_argument("--strategy", default="unpartitioned",
                    choices=["unpartitioned", "degenerate", "internal", "external", "combined"])
    sp.add_argument("--partition", help="partition_<C>.csv file")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--ridge", type=float)
    sp.add_argument("--gls-max-iter", type=int, default=100)
    sp.add_argument("--routes-dump", action="store_true")
    sp.set_defaults(func=cmd_estimate)

    sp = subs["adjust"] = sub.add_parser("adjust", help="bilevel adjustment of a prior against observed flows")
    net_args(sp)
    sp.add_argument("--flows")
    sp.add_argument("--prior")
    sp.add_argument("--cost", choices=["bpr", "length"], default="bpr")
    sp.add_argument("--max-iter", type=int, default=200)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--divergence", type=float, default=10.0)
    sp.set_defaults(func=cmd_adjust)

    sp = subs["assign"] = sub.add_parser("assign", help="user-equilibrium assignment (Frank-Wolfe)")
    net_args(sp)
    sp.add_argument("--od")
    sp.add_argument("--cost", choices=["bpr", "length"], default="bpr")
    sp.add_argument("--gap", type=float, default=1e-5)
    sp.add_argument("--max-iter", type=int, default=5000)
    sp.set_defaults(func=cmd_assign)

    sp = subs["validate"] = sub.add_parser("validate", help="RAE of predicted flows (and times) against validation data")
    net_args(sp)
    sp.add_argument("--ue-flows")
    sp.add_argument("--validation")
    sp.add_argument("--speeds")
    sp.set_defaults(func=cmd_validate)

    sp = subs["sweep"] = sub.add_parser("sweep", help="full experiment over a resolution sweep")
    net_args(sp)
    sp.add_argument("--strategy")
    sp.add_argument("--blocks", type=int)
    sp.add_argument("--flows")
    sp.add_argument("--validation")
    sp.add_argument("--speeds")
    sp.add_argument("--time-bins")
    sp.add_argument("--resolution", type=float)
    sp.add_argument("--sizes", help="comma-separated community counts to keep")
    sp.add_argument("--k", type=int)
    sp.add_argument("--cost", choices=["bpr", "length"])
    sp.add_argument("--validation-days", type=int)
    sp.set_defaults(func=cmd_sweep)
    return p, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = "odpart"
    try:
        config = _load_config(known.config) if known.config else {}
        parser, subparsers = build_parser()
        for sp in subparsers.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in config.items() if k in dests})
        parser.set_defaults(**{k: v for k, v in config.items() if k in ("seed", "out")})
        args = parser.parse_args(argv)
        command = args.command
        args.config_data = config
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        missing = [f"--{n.replace('_', '-')}" for n in REQUIRED[command]
                   if getattr(args, n, None) in (None, "")]
        if missing:
            raise ConfigurationError(f"missing required option(s) {', '.join(missing)}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, out)
    except (OdpartError, OSError, ValueError, KeyError) as exc:
        print(f"{command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
