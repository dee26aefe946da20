"""Spatiotemporal flashback weights and hidden-state aggregation.

A past hidden state ``h_j`` contributes to the context at step ``i`` with
weight ``hvc(2*pi*dT) * exp(-alpha*dT) * exp(-beta*dD)`` where ``dT`` is the
gap in days, ``dD`` the great-circle distance in km and
``hvc(x) = (1 + cos x) / 2``. The context is the weight-normalised sum over the
most recent ``window`` states of the current training window, the current
state included.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class FlashbackConfig:
    alpha: float = 0.1
    beta: float = 100.0
    window: int = 20

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("decay rates must be non-negative")
        if self.window < 1:
            raise ValueError("flashback window must be at least 1")


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180) or not (
        np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))
    ):
        raise ValueError("coordinates out of range: lat must lie in [-90, 90], lon in [-180, 180]")
    return lat, lon


def haversine_km(a, b):
    """Great-circle distance in km between ``(lat, lon)`` pairs given in degrees.

    Broadcasts over numpy arrays: ``a`` and ``b`` may be ``(..., 2)`` arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lat1, lon1 = _check_coords(a[..., 0], a[..., 1])
    lat2, lon2 = _check_coords(b[..., 0], b[..., 1])
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2 - lon1)
    s = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def havercosine(x):
    return (1.0 + np.cos(x)) / 2.0


def flashback_weight(delta_t, delta_d, cfg: FlashbackConfig):
    """Relevance of a past state ``delta_t`` days and ``delta_d`` km away."""
    delta_t = np.asarray(delta_t, dtype=np.float64)
    delta_d = np.asarray(delta_d, dtype=np.float64)
    w = havercosine(2 * math.pi * delta_t) * np.exp(-cfg.alpha * delta_t) * np.exp(-cfg.beta * delta_d)
    return float(w) if w.ndim == 0 else w


@dataclass
class FlashbackTaps:
    """Normalised aggregation weights for one sequence.

    ``weights[i, k]`` is the weight of state ``i - k`` in the context of step
    ``i``; zero where ``i - k`` falls before the start of step ``i``'s window.
    """

    weights: np.ndarray

    @property
    def depth(self) -> int:
        return self.weights.shape[1]

    def aggregate(self, states: np.ndarray) -> np.ndarray:
        n = states.shape[0]
        out = self.weights[:, :1] * states
        for k in range(1, self.depth):
            out[k:] += self.weights[k:, k:k + 1] * states[:n - k]
        return out

    def backward(self, d_context: np.ndarray) -> np.ndarray:
        n = d_context.shape[0]
        d_states = self.weights[:, :1] * d_context
        for k in range(1, self.depth):
            d_states[:n - k] += self.weights[k:, k:k + 1] * d_context[k:]
        return d_states


def build_taps(times, lat, lon, cfg: FlashbackConfig, segment: int | None = None) -> FlashbackTaps:
    """Aggregation weights for a sequence of states.

    ``times`` are in seconds; ``segment`` is the training-window length at
    whose boundaries the look-back is cut (None: never cut).
    """
    times = np.asarray(times, dtype=np.float64)
    n = len(times)
    depth = max(1, min(cfg.window, n))
    if segment is not None:
        depth = min(depth, segment)
    pos = np.arange(n)
    seg_start = pos - pos % segment if segment is not None else np.zeros(n, dtype=np.int64)
    raw = np.zeros((n, depth))
    raw[:, 0] = 1.0
    coords = np.stack([lat, lon], axis=-1)
    for k in range(1, depth):
        i = pos[k:]
        j = i - k
        ok = j >= seg_start[i]
        dt = (times[i] - times[j]) / SECONDS_PER_DAY
        dd = haversine_km(coords[i], coords[j])
        raw[k:, k] = np.where(ok, flashback_weight(dt, dd, cfg), 0.0)
    return FlashbackTaps(raw / raw.sum(axis=1, keepdims=True))


def aggregate_states(hidden, current, cfg: FlashbackConfig) -> np.ndarray:
    """Aggregate ``hidden`` = [(state, time_s, (lat, lon)), ...] relative to ``current``.

    ``hidden`` is ordered oldest first and ends with the current state;
    ``current`` is ``(time_s, (lat, lon))``. Only the last ``cfg.window``
    entries are used.
    """
    recent = hidden[-cfg.window:]
    t_now, (lat_now, lon_now) = current
    total = 0.0
    acc = np.zeros_like(np.asarray(recent[-1][0], dtype=np.float64))
    for state, t, (lat, lon) in recent:
        dt = (t_now - t) / SECONDS_PER_DAY
        w = flashback_weight(dt, haversine_km((lat_now, lon_now), (lat, lon)), cfg)
        acc = acc + w * np.asarray(state, dtype=np.float64)
        total += w
    return acc / total
