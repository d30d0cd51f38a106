"""Detector readings to time-binned edge flows, capacities and free-flow times.

Raw input is one row per sensor and minute. Sensors on the same superedge
are fused per minute with a median filter; fused flows are averaged within
each time bin to give one hourly-flow snapshot per (day, bin). Capacities
and free-flow times come from 10-minute rolling means of the fused series.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InvalidInputError, MissingCapacityError, MissingSpeedError
from .network import FlowSampleSet, RoadNetwork

log = logging.getLogger(__name__)

WINDOW = 10
MIN_CAPACITY_OBS = 1000
READING_COLUMNS = ("sensor_id", "edge_id", "date", "minute_of_day", "flow_vpm", "speed_kmh")


@dataclass(frozen=True)
class TimeBin:
    label: str
    start_hour: int
    end_hour: int

    def __post_init__(self):
        if not 0 <= self.start_hour < self.end_hour <= 24:
            raise InvalidInputError(f"bad time bin {self}")

    def contains(self, minute):
        return (minute >= 60 * self.start_hour) & (minute < 60 * self.end_hour)


AM = TimeBin("AM", 6, 10)
MD = TimeBin("MD", 10, 16)
PM = TimeBin("PM", 16, 20)
DEFAULT_BINS = (AM, MD, PM)


def rolling_mean(values, window: int = WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` minutes, ignoring missing (NaN) values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InvalidInputError("cannot smooth an empty series")
    if window < 1:
        raise InvalidInputError("window must be at least 1")
    return pd.Series(arr).rolling(window, min_periods=1).mean().to_numpy()


def estimate_capacity(smoothed_flows, fallback: float | None = None,
                      min_obs: int = MIN_CAPACITY_OBS) -> float:
    """Capacity in veh/h: 60 times the largest smoothed per-minute flow.

    Edges with fewer than ``min_obs`` observed minutes use ``fallback``.
    """
    arr = np.asarray(smoothed_flows, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size >= min_obs and arr.max() > 0:
        return 60.0 * float(arr.max())
    if fallback is None or not fallback > 0:
        raise MissingCapacityError(
            f"{arr.size} observations (< {min_obs}) and no usable fallback capacity")
    return float(fallback)


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile ``q`` (0-100) of the finite entries of ``values``."""
    arr = np.sort(np.asarray(values, dtype=float)[np.isfinite(values)])
    if arr.size == 0:
        raise InvalidInputError("no finite values")
    rank = max(1, math.ceil(q / 100.0 * arr.size))
    return float(arr[rank - 1])


def estimate_free_flow_time(smoothed_speeds, length_km: float) -> float:
    """Free-flow time in hours from the p95 (nearest rank) of smoothed speeds in km/h."""
    arr = np.asarray(smoothed_speeds, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0 or not np.any(arr > 0):
        raise MissingSpeedError("no positive speed observations")
    return float(length_km) / nearest_rank(arr, 95.0)


def fuse_sensors(readings) -> float:
    """Median of the readings left after dropping those more than 2 MAD from the median.

    With zero MAD only readings equal to the median survive.
    """
    arr = np.asarray(readings, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        raise InvalidInputError("no readings to fuse")
    m = np.median(arr)
    mad = np.median(np.abs(arr - m))
    keep = arr[np.abs(arr - m) <= 2.0 * mad] if mad > 0 else arr[arr == m]
    if keep.size == 0:
        # even count with zero MAD can put the median between two values
        return float(m)
    return float(np.median(keep))


def bin_flows(fused: pd.DataFrame, bins=DEFAULT_BINS, days=None,
              edge_ids=None) -> dict[str, FlowSampleSet]:
    """Hourly flow snapshots per (day, bin) from fused per-minute flows.

    ``fused`` has columns ``edge_id, date, minute_of_day, flow_vpm``. A
    snapshot is 60 times the mean per-minute flow of each edge inside the
    bin; (day, bin) snapshots missing any edge are dropped with a warning.
    """
    df = fused.dropna(subset=["flow_vpm"])
    edge_ids = list(edge_ids) if edge_ids is not None else sorted(df["edge_id"].unique())
    days = sorted(days) if days is not None else sorted(df["date"].unique())
    _check_bins(bins)
    out = {}
    for b in bins:
        sub = df[b.contains(df["minute_of_day"]) & df["date"].isin(days)]
        means = sub.groupby(["date", "edge_id"])["flow_vpm"].mean().unstack("edge_id")
        means = means.reindex(index=days, columns=edge_ids)
        complete = means.notna().all(axis=1)
        for day in means.index[~complete]:
            missing = [e for e in edge_ids if pd.isna(means.loc[day, e])]
            log.warning("dropping %s snapshot for %s: no data on %d edge(s), e.g. %s",
                        b.label, day, len(missing), missing[0])
        kept = means[complete]
        out[b.label] = FlowSampleSet(edge_ids, 60.0 * kept.to_numpy(dtype=float),
                                     [str(d) for d in kept.index], b.label)
    return out


def _check_bins(bins):
    spans = sorted((b.start_hour, b.end_hour) for b in bins)
    for (_, e1), (s2, _) in zip(spans, spans[1:]):
        if s2 < e1:
            raise InvalidInputError("time bins overlap")


def load_readings(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"sensor_id": str, "edge_id": str, "date": str})
    missing = set(READING_COLUMNS) - set(df.columns)
    if missing:
        raise InvalidInputError(f"readings file lacks columns {sorted(missing)}")
    if (df["flow_vpm"] < 0).any() or (df["speed_kmh"] < 0).any():
        raise InvalidInputError("negative flow or speed reading")
    dup = df.duplicated(["sensor_id", "date", "minute_of_day"])
    if dup.any():
        raise InvalidInputError("more than one record per sensor and minute")
    return df


def fuse_readings(readings: pd.DataFrame) -> pd.DataFrame:
    """One fused flow and speed per (edge, day, minute)."""
    keys = ["edge_id", "date", "minute_of_day"]

    def fuse(col):
        return readings.groupby(keys)[col].agg(
            lambda s: fuse_sensors(s) if s.notna().any() else np.nan)

    return pd.concat([fuse("flow_vpm"), fuse("speed_kmh")], axis=1).reset_index()


def _smoothed(fused: pd.DataFrame, col: str, window: int) -> pd.Series:
    """Per-edge rolling means over each day's minute grid, at observed minutes only."""
    parts = []
    for (_, _), grp in fused.groupby(["edge_id", "date"], sort=True):
        obs = grp.dropna(subset=[col])
        if obs.empty:
            continue
        minutes = obs["minute_of_day"].to_numpy(dtype=int)
        grid = np.full(minutes.max() + 1, np.nan)
        grid[minutes] = obs[col].to_numpy(dtype=float)
        parts.append(pd.Series(rolling_mean(grid, window)[minutes], index=obs.index))
    return pd.concat(parts) if parts else pd.Series(dtype=float)


@dataclass
class IngestResult:
    network: RoadNetwork
    flows: dict[str, FlowSampleSet]
    speeds: dict[str, np.ndarray]
    capacity_source: dict[str, str] = field(default_factory=dict)


def process_readings(readings: pd.DataFrame, network: RoadNetwork, bins=DEFAULT_BINS,
                     days=None, window: int = WINDOW,
                     min_obs: int = MIN_CAPACITY_OBS) -> IngestResult:
    """Full ingest: fuse sensors, estimate edge parameters, bin flows.

    Capacities and free-flow times of ``network`` are replaced where the
    data allow; the network's own capacity is the fallback. Edges without
    any speed data keep their free-flow time. ``speeds`` holds per-bin mean
    fused speeds (km/h, NaN if unobserved) over the kept days.
    """
    if days is not None:
        readings = readings[readings["date"].isin(set(days))]
    unknown = set(readings["edge_id"]) - set(network.edge_ids)
    if unknown:
        raise InvalidInputError(f"readings reference unknown edges, e.g. {sorted(unknown)[0]}")
    fused = fuse_readings(readings)
    flow_s = _smoothed(fused, "flow_vpm", window)
    speed_s = _smoothed(fused, "speed_kmh", window)
    caps = network.capacities.copy()
    t0 = network.free_flow_times.copy()
    source = {}
    for j, eid in enumerate(network.edge_ids):
        rows = fused.index[fused["edge_id"] == eid]
        caps[j] = estimate_capacity(flow_s.reindex(rows).to_numpy(), caps[j], min_obs)
        source[eid] = "observed" if caps[j] != network.capacities[j] else "fallback"
        sp = speed_s.reindex(rows).to_numpy()
        try:
            t0[j] = estimate_free_flow_time(sp, network.lengths[j])
        except MissingSpeedError:
            log.warning("edge %s has no speed data; keeping its free-flow time", eid)
    net = network.replace_edges(capacity=caps, free_flow_time=t0)
    flows = bin_flows(fused, bins, days, network.edge_ids)
    speeds = {}
    for b in bins:
        sub = fused[b.contains(fused["minute_of_day"])]
        mean = sub.groupby("edge_id")["speed_kmh"].mean()
        speeds[b.label] = mean.reindex(network.edge_ids).to_numpy(dtype=float)
    return IngestResult(net, flows, speeds, source)
