"""Check-in ingestion, chronological splitting and corpus analyses.

File format (comma separated, optional header row)::

    user_id,poi_id,utc_time,lat,lon[,tz_offset_minutes]

``utc_time`` is ISO-8601; a trailing ``Z`` or explicit offset is honoured and
naive values are read as UTC. Without a ``tz_offset_minutes`` value the local
time uses the longitude band: ``round(lon / 15)`` hours.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

HEADER = ["user_id", "poi_id", "utc_time", "lat", "lon", "tz_offset_minutes"]
MIN_CHECKINS = 5
DAYTIME = (6, 18)


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    utc_time: datetime
    lat: float
    lon: float
    tz_offset_minutes: int | None = None

    @property
    def offset_minutes(self) -> int:
        if self.tz_offset_minutes is not None:
            return self.tz_offset_minutes
        return int(round(self.lon / 15.0)) * 60

    @property
    def local_time(self) -> datetime:
        """Naive local wall-clock time."""
        return (self.utc_time + timedelta(minutes=self.offset_minutes)).replace(tzinfo=None)

    @property
    def timestamp(self) -> float:
        return self.utc_time.timestamp()


@dataclass
class IngestReport:
    rows: int = 0
    accepted: int = 0
    rejected_coordinates: int = 0
    duplicates: int = 0
    rejected_lines: list = field(default_factory=list)


def parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def format_time(t: datetime) -> str:
    t = t.astimezone(timezone.utc)
    if t.microsecond:
        return t.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def ingest(path, report: IngestReport | None = None, delimiter: str = ",") -> list[CheckIn]:
    """Read a check-in file.

    Malformed rows raise :class:`IngestError` with the line number.
    Out-of-range coordinates and repeated ``(user, utc_time)`` rows are
    skipped and counted in ``report``.
    """
    report = report if report is not None else IngestReport()
    out: list[CheckIn] = []
    seen: set[tuple[str, datetime]] = set()
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == "user_id":
                continue
            report.rows += 1
            if len(row) not in (5, 6):
                raise IngestError(f"{path}:{lineno}: expected 5 or 6 fields, got {len(row)}")
            try:
                user, poi = row[0].strip(), row[1].strip()
                t = parse_time(row[2])
                lat, lon = float(row[3]), float(row[4])
                tz = row[5].strip() if len(row) == 6 else ""
                tz_offset = int(tz) if tz else None
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if not user or not poi:
                raise IngestError(f"{path}:{lineno}: empty user or POI id")
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                report.rejected_coordinates += 1
                report.rejected_lines.append(lineno)
                continue
            if (user, t) in seen:
                report.duplicates += 1
                continue
            seen.add((user, t))
            out.append(CheckIn(user, poi, t, lat, lon, tz_offset))
    report.accepted = len(out)
    if not out:
        log.warning("no check-ins read from %s", path)
    return out


def write_checkins(path, checkins) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for c in checkins:
            tz = "" if c.tz_offset_minutes is None else str(c.tz_offset_minutes)
            w.writerow([c.user_id, c.poi_id, format_time(c.utc_time), repr(c.lat), repr(c.lon), tz])


def _id_key(u: str):
    # numeric ids sort numerically, everything else lexically after them
    return (0, int(u), "") if u.lstrip("-").isdigit() else (1, 0, u)


def trajectories(checkins) -> dict[str, list[CheckIn]]:
    """Group by user, each trajectory sorted by UTC time; users in id order."""
    by_user: dict[str, list[CheckIn]] = defaultdict(list)
    for c in checkins:
        by_user[c.user_id].append(c)
    return {u: sorted(by_user[u], key=lambda c: c.utc_time) for u in sorted(by_user, key=_id_key)}


@dataclass
class Sequence:
    """Model-ready arrays for one user's full trajectory."""

    user: int
    pois: np.ndarray
    times: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    weekday: np.ndarray
    hour: np.ndarray
    minute: np.ndarray
    n_train: int

    def __len__(self):
        return len(self.pois)

    def slots(self, scheme) -> np.ndarray:
        return np.asarray(scheme.index(self.weekday, self.hour, self.minute), dtype=np.int64)

    def prefix(self, n: int) -> "Sequence":
        return Sequence(self.user, self.pois[:n], self.times[:n], self.lat[:n], self.lon[:n],
                        self.weekday[:n], self.hour[:n], self.minute[:n], min(self.n_train, n))


@dataclass
class SplitCorpus:
    train: dict[str, list[CheckIn]]
    test: dict[str, list[CheckIn]]
    user_vocab: dict[str, int]
    poi_vocab: dict[str, int]
    dropped: list[str] = field(default_factory=list)

    @property
    def user_count(self) -> int:
        return len(self.user_vocab)

    @property
    def poi_count(self) -> int:
        return len(self.poi_vocab)

    def sequences(self) -> list[Sequence]:
        out = []
        for u, idx in self.user_vocab.items():
            full = self.train[u] + self.test[u]
            local = [c.local_time for c in full]
            out.append(Sequence(
                user=idx,
                pois=np.array([self.poi_vocab[c.poi_id] for c in full], dtype=np.int64),
                times=np.array([c.timestamp for c in full], dtype=np.float64),
                lat=np.array([c.lat for c in full], dtype=np.float64),
                lon=np.array([c.lon for c in full], dtype=np.float64),
                weekday=np.array([t.weekday() for t in local], dtype=np.int64),
                hour=np.array([t.hour for t in local], dtype=np.int64),
                minute=np.array([t.minute for t in local], dtype=np.int64),
                n_train=len(self.train[u]),
            ))
        return out


def train_size(n: int, train_fraction: float = 0.8) -> int:
    return math.ceil(Fraction(str(train_fraction)) * n)


def split_chronological(trajs: dict[str, list[CheckIn]], train_fraction: float = 0.8,
                        min_checkins: int = MIN_CHECKINS) -> SplitCorpus:
    """Per-user chronological prefix/suffix split.

    Users with fewer than ``min_checkins`` check-ins are dropped and listed
    in ``dropped``.
    """
    train, test, dropped = {}, {}, []
    for u, seq in trajs.items():
        if len(seq) < min_checkins:
            dropped.append(u)
            continue
        k = train_size(len(seq), train_fraction)
        train[u], test[u] = list(seq[:k]), list(seq[k:])
    if dropped:
        log.info("dropped %d user(s) with fewer than %d check-ins", len(dropped), min_checkins)
    user_vocab = {u: i for i, u in enumerate(train)}
    pois = sorted({c.poi_id for u in train for c in train[u] + test[u]}, key=_id_key)
    return SplitCorpus(train, test, user_vocab, {p: i for i, p in enumerate(pois)}, dropped)


def load_corpus(path, train_fraction: float = 0.8, report: IngestReport | None = None) -> SplitCorpus:
    return split_chronological(trajectories(ingest(path, report)), train_fraction)


# -- analyses -----------------------------------------------------------------


@dataclass
class ReturningHistogram:
    lag_hours: np.ndarray
    probability: np.ndarray
    daytime: np.ndarray
    nighttime: np.ndarray

    def to_csv(self, path, split: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag_hours", "probability"] + (["daytime", "nighttime"] if split else []))
            for i, lag in enumerate(self.lag_hours):
                row = [repr(float(lag)), repr(float(self.probability[i]))]
                if split:
                    row += [repr(float(self.daytime[i])), repr(float(self.nighttime[i]))]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ReturningHistogram":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows]) if rows and k in rows[0] else np.zeros(len(rows))
        return cls(col("lag_hours"), col("probability"), col("daytime"), col("nighttime"))


def is_daytime(hour: int) -> bool:
    return DAYTIME[0] <= hour < DAYTIME[1]


def returning_probability(checkins, bin_width_hours: float = 1.0, max_lag_hours: float = 168.0) -> ReturningHistogram:
    """Lag histogram of same-user, same-POI revisits.

    Every ordered pair (earlier, later) with lag <= ``max_lag_hours`` adds one
    count to bin ``floor(lag / bin_width)``; counts are divided by the total
    number of check-ins. The daytime / nighttime columns split pairs by the
    local hour of the earlier check-in and sum to the overall column.
    """
    checkins = list(checkins)
    nbins = int(math.floor(max_lag_hours / bin_width_hours)) + 1
    day = np.zeros(nbins, dtype=np.int64)
    night = np.zeros(nbins, dtype=np.int64)
    groups: dict[tuple[str, str], list[CheckIn]] = defaultdict(list)
    for c in checkins:
        groups[(c.user_id, c.poi_id)].append(c)
    for visits in groups.values():
        if len(visits) < 2:
            continue
        visits.sort(key=lambda c: c.utc_time)
        t = np.array([c.timestamp for c in visits]) / 3600.0
        daytime = np.array([is_daytime(c.local_time.hour) for c in visits])
        lag = t[None, :] - t[:, None]
        later = np.triu(np.ones_like(lag, dtype=bool), k=1) & (lag <= max_lag_hours)
        i, j = np.nonzero(later)
        bins = np.floor(lag[i, j] / bin_width_hours).astype(np.int64)
        np.add.at(day, bins[daytime[i]], 1)
        np.add.at(night, bins[~daytime[i]], 1)
    total = max(len(checkins), 1)
    lags = np.arange(nbins) * bin_width_hours
    return ReturningHistogram(lags, (day + night) / total, day / total, night / total)


@dataclass
class CorpusStats:
    users: int
    pois: int
    checkins: int
    first: datetime | None
    last: datetime | None
    median_gap_hours: float | None

    @property
    def span_days(self) -> float | None:
        if self.first is None:
            return None
        return (self.last - self.first).total_seconds() / 86400.0

    def rows(self):
        fmt = lambda t: "" if t is None else format_time(t)
        gap = "" if self.median_gap_hours is None else repr(self.median_gap_hours)
        span = "" if self.span_days is None else repr(self.span_days)
        return [("users", self.users), ("pois", self.pois), ("checkins", self.checkins),
                ("first_checkin", fmt(self.first)), ("last_checkin", fmt(self.last)),
                ("span_days", span), ("median_gap_hours", gap)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "value"])
            w.writerows(self.rows())


def corpus_stats(checkins) -> CorpusStats:
    checkins = list(checkins)
    trajs = trajectories(checkins)
    gaps = []
    for seq in trajs.values():
        t = np.array([c.timestamp for c in seq])
        gaps.extend(np.diff(t) / 3600.0)
    times = [c.utc_time for c in checkins]
    return CorpusStats(
        users=len(trajs),
        pois=len({c.poi_id for c in checkins}),
        checkins=len(checkins),
        first=min(times) if times else None,
        last=max(times) if times else None,
        median_gap_hours=float(np.median(gaps)) if gaps else None,
    )
