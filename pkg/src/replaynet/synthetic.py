"""Synthetic check-in corpora with an hour-dependent revisit regularity.

Each user owns one "regular" POI per block of ``block_hours`` local hours
(the POI for block ``b`` is drawn from the pool of POIs whose id is
``b`` modulo the block count, so regular places of a given time of day are
shared in kind across users). Check-ins arrive as a renewal process with
gamma-distributed gaps averaging ``24 / rate_per_day`` hours. At a check-in
at local hour ``h`` the user goes to the regular POI of that hour with
probability ``regularity[h]`` (multiplied by ``weekend_damping`` on Saturday
and Sunday) and to a uniformly random POI otherwise.

With ``rebind_mean_days > 0`` each regular POI is redrawn from its pool at
exponentially spaced times with that mean, so revisits become less likely
as the lag grows. The default (0) keeps bindings fixed for the whole run.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timedelta, timezone

import numpy as np

from .data import CheckIn
from .numerics import rng_for


class SpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def profile(default: float = 0.5, **ranges) -> list[float]:
    """24-entry regularity profile; ``ranges`` maps ``"6-12"`` style keys to values."""
    out = [default] * 24
    for key, value in ranges.items():
        lo, hi = (int(x) for x in key.strip("h").split("_"))
        for h in range(lo, hi):
            out[h % 24] = value
    return out


MORNING_EVENING = dict(default=0.6, h6_12=0.9, h18_24=0.3)


@dataclass
class SyntheticSpec:
    user_count: int = 50
    poi_count: int = 100
    days: int = 90
    regularity: list = field(default_factory=lambda: profile(**MORNING_EVENING))
    weekend_damping: float = 1.0
    seed: int = 0
    rate_per_day: float = 2.0
    gap_shape: float = 4.0
    block_hours: int = 1
    start: str = "2023-01-02T00:00:00"
    center_lat: float = 40.73
    center_lon: float = -73.99
    radius_km: float = 10.0
    tz_offset_minutes: int = -300
    rebind_mean_days: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("user_count", "poi_count", "days", "block_hours"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise SpecError(name, f"must be a non-negative integer, got {v!r}")
        if self.poi_count < 1:
            raise SpecError("poi_count", "must be at least 1")
        if self.block_hours < 1 or self.block_hours > 24:
            raise SpecError("block_hours", "must lie in [1, 24]")
        if len(self.regularity) != 24:
            raise SpecError("regularity", f"needs 24 hourly values, got {len(self.regularity)}")
        if any(not 0.0 <= float(r) <= 1.0 for r in self.regularity):
            raise SpecError("regularity", "values must lie in [0, 1]")
        if not 0.0 <= self.weekend_damping <= 1.0:
            raise SpecError("weekend_damping", "must lie in [0, 1]")
        if not self.rate_per_day > 0:
            raise SpecError("rate_per_day", "must be positive")
        if not self.rebind_mean_days >= 0:
            raise SpecError("rebind_mean_days", "must be non-negative")
        if not self.gap_shape > 0:
            raise SpecError("gap_shape", "must be positive")
        try:
            datetime.fromisoformat(self.start)
        except (TypeError, ValueError):
            raise SpecError("start", f"not an ISO-8601 date-time: {self.start!r}") from None
        if not (-90 <= self.center_lat <= 90 and -180 <= self.center_lon <= 180):
            raise SpecError("center_lat", "center coordinates out of range")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise SpecError(name, "unknown field")
        d = dict(d)
        reg = d.get("regularity")
        if isinstance(reg, dict):
            d["regularity"] = profile(**{("default" if k == "default" else "h" + k.replace("-", "_")): v
                                         for k, v in reg.items()})
        elif isinstance(reg, (int, float)):
            d["regularity"] = [float(reg)] * 24
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def block_count(self) -> int:
        return math.ceil(24 / self.block_hours)


def poi_coordinates(spec: SyntheticSpec) -> np.ndarray:
    rng = rng_for(spec.seed, "synthetic", "pois")
    r = spec.radius_km * np.sqrt(rng.uniform(0, 1, spec.poi_count))
    theta = rng.uniform(0, 2 * math.pi, spec.poi_count)
    dlat = r * np.cos(theta) / 111.195
    dlon = r * np.sin(theta) / (111.195 * math.cos(math.radians(spec.center_lat)))
    return np.stack([spec.center_lat + dlat, spec.center_lon + dlon], axis=1)


def regular_pois(spec: SyntheticSpec, user: int) -> np.ndarray:
    """Regular POI per time block for ``user``."""
    rng = rng_for(spec.seed, "synthetic", "regular", user)
    nb = spec.block_count
    out = np.empty(nb, dtype=np.int64)
    for b in range(nb):
        pool = np.arange(b, spec.poi_count, nb)
        out[b] = rng.choice(pool) if len(pool) else rng.integers(spec.poi_count)
    return out


def _pool(spec: SyntheticSpec, b: int) -> np.ndarray:
    pool = np.arange(b, spec.poi_count, spec.block_count)
    return pool if len(pool) else np.arange(spec.poi_count)


def generate_synthetic(spec: SyntheticSpec) -> list[CheckIn]:
    coords = poi_coordinates(spec)
    start = datetime.fromisoformat(spec.start).replace(tzinfo=None)
    offset = timedelta(minutes=spec.tz_offset_minutes)
    mean_gap = 24.0 / spec.rate_per_day
    horizon = spec.days * 24.0
    reg = np.asarray(spec.regularity, dtype=np.float64)
    out: list[CheckIn] = []
    for u in range(spec.user_count):
        rng = rng_for(spec.seed, "synthetic", "walk", u)
        bound = regular_pois(spec, u)
        drift = rng_for(spec.seed, "synthetic", "drift", u) if spec.rebind_mean_days > 0 else None
        if drift is not None:
            rebind_mean = spec.rebind_mean_days * 24.0
            expiry = drift.exponential(rebind_mean, len(bound))
        t = rng.uniform(0.0, mean_gap)
        while t < horizon:
            local = start + timedelta(seconds=round(t * 3600.0))
            if drift is not None:
                for b in np.nonzero(expiry <= t)[0]:
                    while expiry[b] <= t:
                        bound[b] = drift.choice(_pool(spec, b))
                        expiry[b] += drift.exponential(rebind_mean)
            rho = reg[local.hour] * (spec.weekend_damping if local.weekday() >= 5 else 1.0)
            if rng.random() < rho:
                poi = int(bound[local.hour // spec.block_hours])
            else:
                poi = int(rng.integers(spec.poi_count))
            utc = (local - offset).replace(tzinfo=timezone.utc)
            out.append(CheckIn(str(u), str(poi), utc, float(coords[poi, 0]), float(coords[poi, 1]),
                               spec.tz_offset_minutes))
            t += rng.gamma(spec.gap_shape, mean_gap / spec.gap_shape)
    return out
