import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replaynet.flashback import (
    FlashbackConfig,
    aggregate_states,
    build_taps,
    flashback_weight,
    haversine_km,
)
from replaynet.numerics import ParameterStore, finite_diff_check

CFG = FlashbackConfig()
DAY = 86400.0


def test_config_defaults_and_validation():
    assert (CFG.alpha, CFG.beta, CFG.window) == (0.1, 100.0, 20)
    with pytest.raises(ValueError):
        FlashbackConfig(alpha=-1)
    with pytest.raises(ValueError):
        FlashbackConfig(window=0)


def test_haversine_examples():
    assert haversine_km((10.0, 20.0), (10.0, 20.0)) == 0.0
    assert haversine_km((0, 0), (0, 1)) == pytest.approx(111.195, abs=0.01)
    assert haversine_km((90, 0), (-90, 0)) == pytest.approx(math.pi * 6371.0, abs=0.1)


def test_haversine_against_spherical_law_of_cosines():
    rng = np.random.default_rng(0)
    a = np.stack([rng.uniform(-80, 80, 200), rng.uniform(-180, 180, 200)], axis=1)
    b = np.stack([rng.uniform(-80, 80, 200), rng.uniform(-180, 180, 200)], axis=1)
    p1, p2 = np.radians(a[:, 0]), np.radians(b[:, 0])
    dl = np.radians(b[:, 1] - a[:, 1])
    c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(dl)
    oracle = 6371.0 * np.arccos(np.clip(c, -1, 1))
    assert np.max(np.abs(haversine_km(a, b) - oracle)) < 1e-6


@pytest.mark.parametrize("bad", [(91, 0), (0, 181), (-90.5, 0), (float("nan"), 0)])
def test_haversine_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        haversine_km(bad, (0, 0))


def test_flashback_weight_points():
    assert flashback_weight(0, 0, CFG) == 1.0
    assert flashback_weight(0.5, 0, CFG) == 0.0
    assert flashback_weight(0.5, 3.0, CFG) == 0.0
    assert abs(flashback_weight(1.0, 0, CFG) - 0.904837) < 1e-6


def test_flashback_weight_integer_days():
    for k in range(1, 8):
        assert flashback_weight(k, 0, CFG) == pytest.approx(math.exp(-0.1 * k), rel=1e-12)


@given(st.floats(0, 30), st.floats(0, 50), st.floats(0, 50))
@settings(max_examples=200, deadline=None)
def test_flashback_weight_bounds_and_monotone_in_distance(dt, d1, d2):
    w1, w2 = flashback_weight(dt, d1, CFG), flashback_weight(dt, d2, CFG)
    assert 0.0 <= w1 <= 1.0
    if d1 <= d2:
        assert w1 >= w2


def _hist(times_days, coords, states):
    return [(s, t * DAY, c) for s, t, c in zip(states, times_days, coords)]


def test_aggregate_single_state():
    h = np.array([0.3, -0.2])
    assert np.array_equal(aggregate_states([(h, 0.0, (1.0, 1.0))], (0.0, (1.0, 1.0)), CFG), h)


def test_aggregate_half_day_neighbour_is_ignored():
    hj, hi = np.array([5.0, 5.0]), np.array([1.0, 2.0])
    out = aggregate_states(_hist([0, 0.5], [(0, 0), (0, 0)], [hj, hi]), (0.5 * DAY, (0, 0)), CFG)
    assert np.array_equal(out, hi)


def test_aggregate_one_day_neighbour():
    hj, hi = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    out = aggregate_states(_hist([0, 1], [(0, 0), (0, 0)], [hj, hi]), (DAY, (0, 0)), CFG)
    w = math.exp(-0.1)
    assert np.allclose(out, (hi + w * hj) / (1 + w), atol=1e-12)
    assert out[0] == pytest.approx(0.904837 / 1.904837, abs=1e-6)


def _random_track(rng, n):
    times = np.cumsum(rng.gamma(2.0, 0.4, n)) * DAY
    lat = 40.7 + rng.normal(0, 0.01, n)
    lon = -74.0 + rng.normal(0, 0.01, n)
    return times, lat, lon


@pytest.mark.parametrize("n,window", [(1, 20), (7, 3), (45, 20), (30, 50)])
def test_taps_match_bruteforce_oracle(n, window):
    rng = np.random.default_rng(n)
    cfg = FlashbackConfig(beta=1.0, window=window)
    times, lat, lon = _random_track(rng, n)
    H = rng.normal(size=(n, 3))
    got = build_taps(times, lat, lon, cfg).aggregate(H)
    for i in range(n):
        hist = [(H[j], times[j], (lat[j], lon[j])) for j in range(i + 1)]
        expect = aggregate_states(hist, (times[i], (lat[i], lon[i])), cfg)
        assert np.max(np.abs(got[i] - expect)) < 1e-12


def test_taps_cut_at_segment_boundaries():
    rng = np.random.default_rng(5)
    times, lat, lon = _random_track(rng, 50)
    H = rng.normal(size=(50, 2))
    taps = build_taps(times, lat, lon, FlashbackConfig(beta=1.0), segment=20)
    got = taps.aggregate(H)
    for i in range(50):
        lo = i - i % 20
        hist = [(H[j], times[j], (lat[j], lon[j])) for j in range(lo, i + 1)]
        expect = aggregate_states(hist, (times[i], (lat[i], lon[i])), FlashbackConfig(beta=1.0))
        assert np.max(np.abs(got[i] - expect)) < 1e-12
    assert np.array_equal(got[20], H[20])


def test_aggregate_is_convex_combination():
    rng = np.random.default_rng(9)
    times, lat, lon = _random_track(rng, 25)
    taps = build_taps(times, lat, lon, FlashbackConfig(beta=2.0))
    assert np.all(taps.weights >= 0)
    assert np.allclose(taps.weights.sum(axis=1), 1.0, atol=1e-15)
    H = rng.normal(size=(25, 4))
    out = taps.aggregate(H)
    for i in range(25):
        lo = max(0, i - 19)
        assert np.all(out[i] <= H[lo:i + 1].max(axis=0) + 1e-12)
        assert np.all(out[i] >= H[lo:i + 1].min(axis=0) - 1e-12)


def test_aggregate_gradient_finite_differences():
    rng = np.random.default_rng(3)
    times, lat, lon = _random_track(rng, 30)
    taps = build_taps(times, lat, lon, FlashbackConfig(beta=1.0), segment=20)
    G = rng.normal(size=(30, 3))
    ps = ParameterStore()
    ps.add("h", rng.normal(size=(30, 3)))

    def loss(p):
        out = taps.aggregate(p["h"].value)
        p["h"].grad += taps.backward(G * np.cos(out))
        return float(np.sum(np.sin(out) * G))

    assert finite_diff_check(loss, ps, sample_count=40) < 1e-4
