import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from odpart.errors import InvalidInputError, MissingCapacityError, MissingSpeedError
from odpart.ingest import (AM, MD, PM, TimeBin, bin_flows, estimate_capacity,
                           estimate_free_flow_time, fuse_sensors, nearest_rank,
                           process_readings, rolling_mean)

from conftest import make_network


def window_means(values, w):
    """Trailing means computed one window at a time."""
    out = []
    for i in range(len(values)):
        win = [v for v in values[max(0, i - w + 1):i + 1] if not np.isnan(v)]
        out.append(sum(win) / len(win) if win else np.nan)
    return np.asarray(out)


def test_rolling_examples():
    assert rolling_mean([5.0] * 30).tolist() == [5.0] * 30
    assert rolling_mean(np.arange(20.0))[19] == pytest.approx(14.5)
    assert rolling_mean([7.0]).tolist() == [7.0]
    with pytest.raises(InvalidInputError):
        rolling_mean([])


@given(st.lists(st.floats(0, 100) | st.just(float("nan")), min_size=1, max_size=60),
       st.integers(1, 15))
def test_rolling_matches_window_oracle(values, w):
    np.testing.assert_allclose(rolling_mean(values, w), window_means(values, w),
                               rtol=1e-10, atol=1e-10, equal_nan=True)


def test_capacity_examples():
    assert estimate_capacity(np.full(1000, 30.0)) == 1800.0
    assert estimate_capacity(np.ones(10), fallback=4000.0) == 4000.0
    with pytest.raises(MissingCapacityError):
        estimate_capacity(np.ones(10))


def test_capacity_brute_force(rng):
    raw = rng.poisson(20, size=1500).astype(float)
    expected = 60.0 * max(raw[max(0, i - 9):i + 1].mean() for i in range(len(raw)))
    assert estimate_capacity(rolling_mean(raw)) == pytest.approx(expected, rel=1e-12)


def test_free_flow_examples():
    assert estimate_free_flow_time(np.full(100, 100.0), 50.0) == 0.5
    assert estimate_free_flow_time(np.arange(1.0, 101.0), 95.0) == 1.0
    with pytest.raises(MissingSpeedError):
        estimate_free_flow_time([], 1.0)
    with pytest.raises(MissingSpeedError):
        estimate_free_flow_time([0.0, 0.0], 1.0)


@given(st.lists(st.floats(0, 200), min_size=1, max_size=50), st.floats(0.5, 100))
def test_nearest_rank_is_an_order_statistic(values, q):
    s = sorted(values)
    k = int(np.ceil(q / 100 * len(s)))
    assert nearest_rank(values, q) == s[max(k, 1) - 1]


@pytest.mark.parametrize("readings, expected", [
    ([10, 10, 10, 100], 10.0),
    ([42], 42.0),
    ([8, 10, 12], 10.0),
    ([1, 2, 3, 100], 2.0),
])
def test_fuse_examples(readings, expected):
    assert fuse_sensors(readings) == expected


@given(st.lists(st.floats(0, 1000), min_size=1, max_size=20))
def test_fuse_within_range(readings):
    v = fuse_sensors(readings)
    assert min(readings) <= v <= max(readings)


def minute_frame(edge, date, minutes, flows):
    return pd.DataFrame({"edge_id": edge, "date": date, "minute_of_day": minutes,
                         "flow_vpm": flows})


def test_bin_constant_and_two_level():
    am = np.arange(360, 600)
    df = pd.concat([minute_frame("a", "d1", am, 20.0),
                    minute_frame("b", "d1", am, np.where(am < 480, 10.0, 30.0))])
    out = bin_flows(df, [AM], edge_ids=["a", "b"])["AM"]
    assert out.flows.tolist() == [[1200.0, 1200.0]]


def test_bin_drops_outage_day(caplog):
    am = np.arange(360, 600)
    df = pd.concat([minute_frame("a", "d1", am, 1.0), minute_frame("b", "d1", am, 1.0),
                    minute_frame("a", "d2", am, 1.0), minute_frame("b", "d2", [], [])])
    with caplog.at_level(logging.WARNING):
        out = bin_flows(df, [AM], edge_ids=["a", "b"])["AM"]
    assert out.labels == ("d1",)
    assert "dropping" in caplog.text


def test_bins_must_not_overlap():
    with pytest.raises(InvalidInputError):
        bin_flows(minute_frame("a", "d", [400], [1.0]), [AM, TimeBin("X", 9, 11)])
    assert AM.contains(360) and not AM.contains(600) and MD.contains(600) and PM.contains(1199)


def test_process_readings_end_to_end():
    net = make_network([("ab", "a", "b", 10.0), ("ba", "b", "a", 10.0)], capacity=500.0)
    rows = []
    for day in ("2024-01-01", "2024-01-02"):
        for minute in range(360, 1200):
            for sensor, edge in (("s1", "ab"), ("s2", "ab"), ("s3", "ba")):
                rows.append((sensor, edge, day, minute, 15.0, 80.0 if sensor != "s2" else 90.0))
    df = pd.DataFrame(rows, columns=["sensor_id", "edge_id", "date", "minute_of_day",
                                     "flow_vpm", "speed_kmh"])
    res = process_readings(df, net, min_obs=1000)
    assert res.network.capacities.tolist() == [900.0, 900.0]
    assert res.capacity_source == {"ab": "observed", "ba": "observed"}
    assert res.network.free_flow_times[1] == pytest.approx(10.0 / 80.0)
    assert res.flows["MD"].flows.shape == (2, 2)
    assert np.all(res.flows["PM"].flows == 900.0)
    # too few observations: the network's own capacity is kept
    res2 = process_readings(df, net, min_obs=10**6)
    assert res2.network.capacities.tolist() == [500.0, 500.0]
