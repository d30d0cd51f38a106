"""End-to-end experiments: estimate, adjust, assign and validate per partition size.

For every partition size of a resolution sweep the selected strategy builds
a prior demand matrix, the prior is adjusted against the mean observed
flows of the fitting days, and the resulting equilibrium flows are compared
with the mean flows of held-out validation days.
"""
from __future__ import annotations

import json
import logging
import math
import time
import tracemalloc
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adjustment import AdjustmentConfig, AdjustmentResult, adjust
from .assignment import BPRCost, ConstantCost
from .errors import ConfigurationError, EmptyReportError, OdpartError
from .estimation import (GLSConfig, combined_prior, degenerate_prior, estimate_unpartitioned,
                         external_prior, internal_prior)
from .network import FlowSampleSet, ODMatrix, ODPairSet, RoadNetwork
from .partition import Partitioning, build_community_network, louvain, resolution_sweep

log = logging.getLogger(__name__)

STRATEGIES = ("degenerate", "internal", "external", "combined", "unpartitioned")


def rae_flow(predicted, observed) -> np.ndarray:
    """``|pred - obs| / obs`` per edge; edges observed at zero are dropped."""
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    keep = obs > 0
    if not keep.all():
        log.warning("%d edge(s) with zero observed flow excluded from RAE", int((~keep).sum()))
    if not keep.any():
        raise EmptyReportError("no edge with positive observed flow")
    return np.abs(pred[keep] - obs[keep]) / obs[keep]


def rae_time(predicted_flows, network: RoadNetwork, observed_speeds) -> np.ndarray:
    """Travel-time RAE with BPR times of the predicted flows against ``length / speed``."""
    speed = np.asarray(observed_speeds, dtype=float)
    keep = np.isfinite(speed) & (speed > 0)
    if not keep.all():
        log.warning("%d edge(s) without observed speed excluded from time RAE",
                    int((~keep).sum()))
    if not keep.any():
        raise EmptyReportError("no edge with positive observed speed")
    t_user = BPRCost(network).times(np.asarray(predicted_flows, dtype=float))
    t_obs = network.lengths[keep] / speed[keep]
    return np.abs(t_user[keep] - t_obs) / t_obs


@dataclass
class ExperimentConfig:
    """What to run.

    Either ``blocks`` (synthetic network) or ``nodes``/``edges``/``flows``/
    ``validation`` file paths describe the data. ``flows``, ``validation``
    and ``speeds`` may contain ``{bin}``, filled from ``time_bins``.
    """

    strategy: str = "unpartitioned"
    blocks: int | None = 1
    seed: int = 0
    nodes: str | None = None
    edges: str | None = None
    flows: str | None = None
    validation: str | None = None
    speeds: str | None = None
    time_bins: list[str] = field(default_factory=lambda: ["synth"])
    resolution: float | None = None
    sizes: list[int] | None = None
    k: int = 4
    cost: str | None = None
    validation_days: int | None = None
    gls_max_iter: int = 100
    gls_tol: float = 1e-6
    adjust_max_iter: int = 200
    adjust_tol: float = 1e-4
    divergence: float = 10.0
    fw_gap: float = 1e-5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; pick one of {STRATEGIES}")
        files = [self.nodes, self.edges, self.flows, self.validation]
        if any(files) and not all(files):
            raise ConfigurationError("nodes, edges, flows and validation must be given together")
        if not any(files) and not (self.blocks and self.blocks >= 1):
            raise ConfigurationError("need either synthetic blocks or input files")
        if self.cost not in (None, "length", "bpr"):
            raise ConfigurationError("cost must be 'length' or 'bpr'")
        if self.k < 1:
            raise ConfigurationError("k must be at least 1")
        if self.resolution is not None and self.resolution < 0:
            raise ConfigurationError("resolution must be non-negative")

    @property
    def synthetic(self) -> bool:
        return self.nodes is None

    @classmethod
    def from_mapping(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def gls(self) -> GLSConfig:
        return GLSConfig(k=self.k, max_iter=self.gls_max_iter, rel_tol=self.gls_tol)

    def adjustment(self) -> AdjustmentConfig:
        return AdjustmentConfig(max_iter=self.adjust_max_iter, tolerance=self.adjust_tol,
                                divergence=self.divergence, fw_gap=self.fw_gap)


@dataclass
class SizeResult:
    n_communities: int
    resolution: float
    time_bin: str
    converged: bool
    diagnostic: str
    seconds: float
    peak_bytes: int
    rae_flow: np.ndarray | None = None
    rae_time: np.ndarray | None = None
    edge_ids: tuple[str, ...] = ()
    time_edge_ids: tuple[str, ...] = ()

    @property
    def share_pct(self) -> float:
        """Mean share of supernodes per community, in percent."""
        return 100.0 / self.n_communities

    @staticmethod
    def _stats(values):
        if values is None or len(values) == 0:
            return None
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        return {"median": float(med), "q1": float(q1), "q3": float(q3)}

    def summary(self) -> dict:
        return {"n_communities": self.n_communities, "resolution": self.resolution,
                "time_bin": self.time_bin, "share_pct": self.share_pct,
                "converged": self.converged, "diagnostic": self.diagnostic,
                "seconds": self.seconds, "peak_bytes": self.peak_bytes,
                "flow": self._stats(self.rae_flow), "time": self._stats(self.rae_time)}

    @property
    def median_flow(self) -> float:
        s = self._stats(self.rae_flow)
        return s["median"] if s else float("nan")


@dataclass
class ValidationReport:
    strategy: str
    entries: list[SizeResult]
    config: dict = field(default_factory=dict)

    def entry(self, n_communities: int, time_bin: str | None = None) -> SizeResult:
        for e in self.entries:
            if e.n_communities == n_communities and time_bin in (None, e.time_bin):
                return e
        raise KeyError(n_communities)

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "config": self.config,
                "sizes": [e.summary() for e in self.entries]}

    def write(self, out_dir) -> list[Path]:
        from .io import _write

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "summary.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable))
        rows = [[e.n_communities, round(e.share_pct, 6), e.time_bin, int(e.converged),
                 _fmt(e.summary()["flow"], "median"), _fmt(e.summary()["flow"], "q1"),
                 _fmt(e.summary()["flow"], "q3"), _fmt(e.summary()["time"], "median"),
                 repr(e.seconds), e.peak_bytes] for e in self.entries]
        paths.append(_write(out / "sizes.csv",
                            ["n_communities", "share_pct", "time_bin", "converged",
                             "flow_median", "flow_q1", "flow_q3", "time_median",
                             "seconds", "peak_bytes"], rows))
        for metric in ("rae_flow", "rae_time"):
            ids = "edge_ids" if metric == "rae_flow" else "time_edge_ids"
            rows = [[e.n_communities, e.time_bin, eid, repr(float(v))]
                    for e in self.entries if getattr(e, metric) is not None
                    for eid, v in zip(getattr(e, ids), getattr(e, metric))]
            if rows:
                paths.append(_write(out / f"{metric}.csv",
                                    ["n_communities", "time_bin", "edge_id", "rae"], rows))
        paths += plot_report(self, out)
        return paths


def _fmt(stats, key):
    return "" if stats is None else repr(stats[key])


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def plot_report(report: ValidationReport, out_dir) -> list[Path]:
    """SVG line charts of median and IQR RAE against mean community share."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for metric, key in (("flow", "rae_flow"), ("time", "rae_time")):
        by_bin: dict[str, list] = {}
        for e in report.entries:
            s = e.summary()[metric]
            if s is not None:
                by_bin.setdefault(e.time_bin, []).append((e.share_pct, s))
        if not by_bin:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, pts in sorted(by_bin.items()):
            pts.sort(key=lambda p: p[0])
            xs = [p[0] for p in pts]
            line, = ax.plot(xs, [p[1]["median"] for p in pts], "o-", label=label)
            for q in ("q1", "q3"):
                ax.plot(xs, [p[1][q] for p in pts], "--", color=line.get_color())
        ax.set_xlabel("mean share of supernodes per community (%)")
        ax.set_ylabel(f"{metric} RAE")
        ax.set_title(report.strategy)
        ax.legend()
        path = Path(out_dir) / f"{key}.svg"
        # fixed salt keeps the generated element ids reproducible
        with matplotlib.rc_context({"svg.hashsalt": "odpart"}):
            fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


@dataclass
class StrategyRun:
    """Everything one strategy produces at one partition size."""

    prior: ODMatrix
    adjusted: AdjustmentResult
    network: RoadNetwork
    observed: np.ndarray
    to_eval: object = None  # maps full-network flows to the evaluation network


def _cost(network: RoadNetwork, kind: str):
    return ConstantCost(network.lengths) if kind == "length" else None


def build_prior(strategy: str, network: RoadNetwork, samples: FlowSampleSet,
                partitioning: Partitioning | None, gls: GLSConfig):
    """Prior demand and the network it lives on (the community graph for degenerate)."""
    if strategy == "unpartitioned" or partitioning is None:
        return estimate_unpartitioned(network, samples, gls), network, samples, None
    if strategy == "internal":
        return internal_prior(network, partitioning, samples, gls), network, samples, None
    comm = build_community_network(network, partitioning, samples)
    h = degenerate_prior(comm, comm.samples, gls)
    if strategy == "degenerate":
        return h, comm.network, comm.samples, comm
    pairs = ODPairSet.for_network(network)
    ext = external_prior(h, partitioning, pairs, comm.node_of_community)
    if strategy == "external":
        return ext, network, samples, None
    return combined_prior(internal_prior(network, partitioning, samples, gls), ext), \
        network, samples, None


def run_strategy(strategy: str, network: RoadNetwork, samples: FlowSampleSet,
                 partitioning: Partitioning | None, config: ExperimentConfig) -> StrategyRun:
    prior, net, fit, comm = build_prior(strategy, network, samples, partitioning, config.gls())
    observed = fit.aligned(net).mean()
    kind = config.cost or ("length" if config.synthetic else "bpr")
    result = adjust(prior, observed, net, config.adjustment(), cost=_cost(net, kind))
    to_eval = (lambda f: comm.aggregate(network, f)) if comm is not None else None
    return StrategyRun(prior, result, net, observed, to_eval)


def _partitionings(network: RoadNetwork, config: ExperimentConfig):
    if config.strategy == "unpartitioned":
        return [(float("inf"), None, 1)]
    if config.resolution is not None:
        p = louvain(network, config.resolution, config.seed)
        runs = [(config.resolution, p, p.n_communities)]
    else:
        runs = [(r, p, p.n_communities) for r, p in resolution_sweep(network, config.seed)]
    if config.sizes is not None:
        runs = [x for x in runs if x[2] in set(config.sizes)]
    return runs


def _load_data(config: ExperimentConfig):
    """Network plus (fitting, validation, speeds) per time bin."""
    if config.synthetic:
        from .synth import SynthConfig, synth_problem

        prob = synth_problem(SynthConfig(blocks=config.blocks, seed=config.seed),
                             config.validation_days)
        return prob.network, {"synth": (prob.samples, prob.validation, None)}
    from .io import read_flows, read_network

    network = read_network(config.nodes, config.edges)
    data = {}
    for b in config.time_bins:
        fit = read_flows(config.flows.format(bin=b), network.edge_ids, b)
        val = read_flows(config.validation.format(bin=b), network.edge_ids, b)
        overlap = set(fit.labels) & set(val.labels)
        if overlap:
            raise ConfigurationError(
                f"fitting and validation days overlap in bin {b}: {sorted(overlap)[:3]}")
        speeds = None
        if config.speeds:
            speeds = _read_speeds(config.speeds.format(bin=b), network.edge_ids)
        data[b] = (fit, val, speeds)
    return network, data


def _read_speeds(path, edge_ids) -> np.ndarray:
    from .io import _rows

    vals = {r["edge_id"]: float(r["speed_kmh"]) if r["speed_kmh"] else np.nan
            for r in _rows(path)}
    return np.asarray([vals.get(e, np.nan) for e in edge_ids])


def run_experiment(config: ExperimentConfig) -> ValidationReport:
    """Run the configured strategy at every partition size and validate.

    Per-size failures (solver errors, degenerate community graphs, adjustment
    non-convergence) leave that size's RAE missing and are flagged; they do
    not stop the sweep. Time and peak traced memory are recorded for every
    attempted size.
    """
    network, data = _load_data(config)
    entries = []
    for r, part, n_comm in _partitionings(network, config):
        for b, (fit, val, speeds) in data.items():
            entries.append(_run_size(config, network, part, r, n_comm, b, fit, val, speeds))
    return ValidationReport(config.strategy, entries, asdict(config))


def _run_size(config, network, part, r, n_comm, time_bin, fit, val, speeds) -> SizeResult:
    tracing = tracemalloc.is_tracing()
    if not tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    start = time.perf_counter()
    rae_x = rae_t = None
    edge_ids: tuple[str, ...] = ()
    time_ids: tuple[str, ...] = ()
    try:
        run = run_strategy(config.strategy, network, fit, part, config)
        converged, diagnostic = run.adjusted.converged, run.adjusted.diagnostic
        if converged:
            pred = run.adjusted.equilibrium.flows
            obs_full = val.aligned(network).mean()
            obs = run.to_eval(obs_full) if run.to_eval else obs_full
            keep = obs > 0
            edge_ids = tuple(e for e, k in zip(run.network.edge_ids, keep) if k)
            rae_x = rae_flow(pred, obs)
            if speeds is not None and run.to_eval is None:
                rae_t = rae_time(pred, network, speeds)
                ok = np.isfinite(speeds) & (speeds > 0)
                time_ids = tuple(e for e, k in zip(network.edge_ids, ok) if k)
    except OdpartError as exc:
        log.warning("size %d (%s) failed: %s", n_comm, time_bin, exc)
        converged, diagnostic = False, f"{type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - start
    _, peak = tracemalloc.get_traced_memory()
    if not tracing:
        tracemalloc.stop()
    return SizeResult(n_comm, r, time_bin, converged, diagnostic, seconds, int(peak),
                      rae_x, rae_t, edge_ids, time_ids)

