"""Cyclical timestamps and Gaussian-smoothed timestamp embeddings.

Local check-in times are mapped onto a discrete cyclic clock (hour-in-week by
default). A timestamp's smoothed embedding is the normalised Gaussian-weighted
average of all timestamp embeddings in its cycle, where the Gaussian width
(bandwidth) is a learnable per-timestamp parameter kept positive by softplus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache

import numpy as np

DISCONNECTED = math.inf

SCALES = ("day", "weekday_weekend", "week")
GRANULARITIES = ("hour", "minute")

# softplus(x) == 1 at this raw value
RAW_FOR_UNIT_SIGMA = math.log(math.e - 1.0)


@dataclass(frozen=True)
class TimestampScheme:
    """A (scale, granularity) cyclic timestamp space.

    ``week/day`` (7 slots) is accepted in addition to the six regular
    combinations; it backs the day-in-week half of the multi-granularity
    variant.
    """

    scale: str = "week"
    granularity: str = "hour"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown time scale {self.scale!r}; expected one of {SCALES}")
        ok = GRANULARITIES + (("day",) if self.scale == "week" else ())
        if self.granularity not in ok:
            raise ValueError(f"unknown granularity {self.granularity!r} for scale {self.scale!r}")

    @property
    def slots_per_day(self) -> int:
        return {"hour": 24, "minute": 1440, "day": 1}[self.granularity]

    @property
    def timestamp_count(self) -> int:
        days = {"day": 1, "weekday_weekend": 2, "week": 7}[self.scale]
        return days * self.slots_per_day

    @property
    def cycle_groups(self) -> list[tuple[int, int]]:
        """``(start_index, period)`` pairs partitioning ``[0, timestamp_count)``."""
        if self.scale == "weekday_weekend":
            p = self.slots_per_day
            return [(0, p), (p, p)]
        return [(0, self.timestamp_count)]

    def index(self, weekday, hour, minute=0):
        """Timestamp index from a Monday=0 weekday, hour and minute.

        Works elementwise on integer arrays as well as on scalars.
        """
        if self.granularity == "day":
            return weekday * 1
        within = hour if self.granularity == "hour" else hour * 60 + minute
        if self.scale == "day":
            return within
        if self.scale == "week":
            return weekday * self.slots_per_day + within
        weekend = np.asarray(weekday) >= 5
        out = np.where(weekend, self.slots_per_day, 0) + within
        return int(out) if np.ndim(out) == 0 else out

    def group_starts_periods(self):
        """Per-slot arrays ``(group_start, period)``."""
        T = self.timestamp_count
        start = np.empty(T, dtype=np.int64)
        period = np.empty(T, dtype=np.int64)
        for s, p in self.cycle_groups:
            start[s:s + p] = s
            period[s:s + p] = p
        return start, period

    def hour_of_day(self, n: int):
        """Local hour covered by slot ``n`` (None for day-in-week slots)."""
        if self.granularity == "day":
            return None
        within = n % self.slots_per_day
        return within if self.granularity == "hour" else within // 60

    def is_weekend(self, n: int):
        """True/False for slots that pin down the weekday, None otherwise."""
        if self.scale == "day":
            return None
        if self.granularity == "day":
            return n >= 5
        if self.scale == "weekday_weekend":
            return n >= self.slots_per_day
        return n // self.slots_per_day >= 5


def transform_timestamp(local_time: datetime, scheme: TimestampScheme) -> int:
    return int(scheme.index(local_time.weekday(), local_time.hour, local_time.minute))


def cyclical_distance(l: int, n: int, scheme: TimestampScheme) -> float:
    """Shortest arc between slots ``l`` and ``n`` on their cycle.

    Slots in different cycle groups are disconnected (``math.inf``).
    """
    T = scheme.timestamp_count
    if not (0 <= l < T and 0 <= n < T):
        raise ValueError(f"timestamp index out of range [0, {T})")
    for s, p in scheme.cycle_groups:
        if s <= l < s + p and s <= n < s + p:
            diff = abs(l - n)
            return float(diff if diff < p - diff else p - diff)
    return DISCONNECTED


@lru_cache(maxsize=16)
def _full_sq_distances(scheme: TimestampScheme) -> np.ndarray:
    return _sq_distance_rows(np.arange(scheme.timestamp_count), scheme)


def _sq_distance_rows(ns, scheme: TimestampScheme) -> np.ndarray:
    ns = np.asarray(ns, dtype=np.int64)
    start, period = scheme.group_starts_periods()
    l = np.arange(scheme.timestamp_count)
    diff = np.abs(l[None, :] - ns[:, None])
    p = period[ns][:, None]
    d = np.minimum(diff, p - diff).astype(np.float64)
    d[start[None, :] != start[ns][:, None]] = np.inf
    return d * d


def sq_distance_rows(ns, scheme: TimestampScheme) -> np.ndarray:
    """Squared cyclical distances, one row per slot in ``ns``; inf when disconnected."""
    if scheme.timestamp_count <= 1440:
        return _full_sq_distances(scheme)[np.asarray(ns, dtype=np.int64)]
    return _sq_distance_rows(ns, scheme)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def weight_rows(ns, sigmas, scheme: TimestampScheme):
    """Normalised Gaussian smoothing weights for each ``(n, sigma)`` pair.

    Returns ``(W, D2)`` with ``W[k]`` summing to one over the cycle of
    ``ns[k]`` and ``D2`` the squared distances with disconnected entries
    zeroed (their weight is exactly zero).
    """
    D2 = sq_distance_rows(ns, scheme)
    sig = np.asarray(sigmas, dtype=np.float64).reshape(-1, 1)
    with np.errstate(invalid="ignore"):
        K = np.exp(-D2 / (2.0 * sig * sig))
    K[~np.isfinite(D2)] = 0.0
    W = K / K.sum(axis=1, keepdims=True)
    D2 = np.where(np.isfinite(D2), D2, 0.0)
    return W, D2


def smoothing_weights(n: int, sigma: float, scheme: TimestampScheme) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("bandwidth must be positive")
    W, _ = weight_rows([n], [sigma], scheme)
    return W[0]


class Bandwidths:
    """Per-timestamp bandwidths ``sigma = softplus(raw)`` or a fixed constant.

    ``raw`` is a :class:`~replaynet.numerics.ParamTensor`. With
    ``fixed_value`` set it is never read for sigma and never receives gradient.
    """

    def __init__(self, raw, fixed_value: float | None = None):
        if fixed_value is not None and not fixed_value > 0:
            raise ValueError("fixed bandwidth must be positive")
        self.raw = raw
        self.fixed_value = fixed_value

    @property
    def count(self) -> int:
        return self.raw.value.shape[0]

    def sigma(self, ns=None) -> np.ndarray:
        if self.fixed_value is not None:
            n = self.count if ns is None else len(ns)
            return np.full(n, float(self.fixed_value))
        raw = self.raw.value if ns is None else self.raw.value[ns]
        return softplus(raw)

    def backward(self, ns, dsigma):
        if self.fixed_value is not None:
            return
        np.add.at(self.raw.grad, ns, dsigma * sigmoid(self.raw.value[ns]))


class SmoothedLookup:
    """Smoothed embeddings for a batch of slots, with a matching backward.

    One instance covers one forward/backward pass: the weight rows for the
    distinct slots of the batch are built once and reused by every lookup.
    """

    def __init__(self, slots, bandwidths: Bandwidths, table, scheme: TimestampScheme):
        self.scheme = scheme
        self.bandwidths = bandwidths
        self.table = table
        self.unique, self.inverse = np.unique(np.asarray(slots, dtype=np.int64), return_inverse=True)
        self.sig = bandwidths.sigma(self.unique)
        self.W, self.D2 = weight_rows(self.unique, self.sig, scheme)
        self.S = self.W @ table.value

    def rows(self, positions):
        """Smoothed embeddings for entries ``positions`` of the original slot list."""
        return self.S[self.inverse[positions]]

    def backward(self, positions, dS):
        """Accumulate gradient of smoothed rows into the table and bandwidths."""
        k = len(self.unique)
        dU = np.zeros((k, self.S.shape[1]))
        np.add.at(dU, self.inverse[positions], dS)
        self.table.grad += self.W.T @ dU
        if self.bandwidths.fixed_value is None:
            # d w_l / d sigma = w_l (d_l^2 - sum_m w_m d_m^2) / sigma^3
            proj = dU @ self.table.value.T
            mean_d2 = (self.W * self.D2).sum(axis=1, keepdims=True)
            dsig = (self.W * (self.D2 - mean_d2) * proj).sum(axis=1) / self.sig ** 3
            self.bandwidths.backward(self.unique, dsig)


class RawLookup:
    """Plain (unsmoothed) timestamp embedding lookup with the same interface."""

    def __init__(self, slots, table):
        self.slots = np.asarray(slots, dtype=np.int64)
        self.table = table

    def rows(self, positions):
        return self.table.value[self.slots[positions]]

    def backward(self, positions, dS):
        np.add.at(self.table.grad, self.slots[positions], dS)


def smooth_embedding(n: int, bandwidths: Bandwidths, table, scheme: TimestampScheme) -> np.ndarray:
    lookup = SmoothedLookup([n], bandwidths, table, scheme)
    return lookup.rows(np.array([0]))[0]


HOUR_OF_DAY = TimestampScheme("day", "hour")
DAY_OF_WEEK = TimestampScheme("week", "day")


def multi_granularity_embedding(local_time: datetime, bandwidths, tables) -> np.ndarray:
    """Hour-in-day and day-in-week smoothed embeddings, concatenated."""
    hour_bw, dow_bw = bandwidths
    hour_table, dow_table = tables
    a = smooth_embedding(transform_timestamp(local_time, HOUR_OF_DAY), hour_bw, hour_table, HOUR_OF_DAY)
    b = smooth_embedding(transform_timestamp(local_time, DAY_OF_WEEK), dow_bw, dow_table, DAY_OF_WEEK)
    return np.concatenate([a, b])
