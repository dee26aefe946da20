"""Ranking metrics, per-timestamp / per-period breakdowns and bandwidth reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import DAYTIME

ACC_LEVELS = (1, 5, 10)
PERIODS = ("daytime", "nighttime", "weekday", "weekend")


class EvaluationError(ValueError):
    pass


def rank_of_truth(scores, truth) -> np.ndarray | int:
    """1-based rank of ``truth`` under descending score, ties by ascending id.

    ``scores`` may be one vector (then ``truth`` is an int) or a 2-D batch
    with one truth per row.
    """
    s = np.asarray(getattr(scores, "logits", scores), dtype=np.float64)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    t = np.atleast_1d(np.asarray(truth, dtype=np.int64))
    if len(t) != len(s):
        raise EvaluationError(f"{len(t)} truths for {len(s)} score vectors")
    if t.min(initial=0) < 0 or t.max(initial=0) >= s.shape[1]:
        raise EvaluationError(f"truth id outside [0, {s.shape[1]})")
    st = s[np.arange(len(s)), t][:, None]
    ids = np.arange(s.shape[1])[None, :]
    ranks = 1 + (s > st).sum(axis=1) + ((s == st) & (ids < t[:, None])).sum(axis=1)
    return int(ranks[0]) if single else ranks


def metrics_from_ranks(ranks) -> tuple[dict[int, float], float]:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise EvaluationError("no predictions to score")
    acc = {k: float(np.mean(r <= k)) for k in ACC_LEVELS}
    return acc, float(np.mean(1.0 / r))


@dataclass
class EvaluationReport:
    acc: dict[int, float]
    mrr: float
    prediction_count: int
    per_timestamp: dict[int, tuple[float, int]]
    per_period: dict[str, tuple[float, float]]
    sigma: dict[int, float] = field(default_factory=dict)
    variant: str = ""
    cell: str = ""

    def write_metrics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "cell", "acc1", "acc5", "acc10", "mrr"])
            w.writerow([self.variant, self.cell] + [repr(self.acc[k]) for k in ACC_LEVELS] + [repr(self.mrr)])

    def write_per_timestamp(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "mrr", "count", "sigma"])
            for n in sorted(self.per_timestamp):
                mrr, count = self.per_timestamp[n]
                sig = self.sigma.get(n)
                w.writerow([n, repr(mrr), count, "" if sig is None else repr(sig)])


def read_metrics(path) -> dict:
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return {"variant": row["variant"], "cell": row["cell"],
            "acc": {k: float(row[f"acc{k}"]) for k in ACC_LEVELS}, "mrr": float(row["mrr"])}


def read_per_timestamp(path) -> tuple[dict[int, tuple[float, int]], dict[int, float]]:
    per, sig = {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            n = int(row["n"])
            per[n] = (float(row["mrr"]), int(row["count"]))
            if row["sigma"]:
                sig[n] = float(row["sigma"])
    return per, sig


def _period_masks(hour, weekday) -> dict[str, np.ndarray]:
    day = (hour >= DAYTIME[0]) & (hour < DAYTIME[1])
    weekend = weekday >= 5
    return {"daytime": day, "nighttime": ~day, "weekday": ~weekend, "weekend": weekend}


def _query_sigma(model, slots) -> np.ndarray | None:
    bws = model.bandwidths() if hasattr(model, "bandwidths") else {}
    if list(bws) != [""]:
        return None
    bw, _ = bws[""]
    return bw.sigma(slots)


def evaluate(model, seqs) -> EvaluationReport:
    """Score every test check-in with teacher-forced history.

    Check-in ``i`` of a user (``i >= n_train``) is predicted from check-ins
    ``0..i-1`` with its own time as the query; breakdowns key on the query
    slot and its local hour / weekday.
    """
    cfg = model.cfg
    ranks, slots, hours, wdays = [], [], [], []
    for s in seqs:
        lo = max(s.n_train, 1)
        if len(s) <= lo:
            continue
        logits = model.forward(s, len(s)).logits[lo - 1:]
        ranks.append(rank_of_truth(logits, s.pois[lo:]))
        slots.append(s.slots(cfg.scheme)[lo:])
        hours.append(s.hour[lo:])
        wdays.append(s.weekday[lo:])
    if not ranks:
        raise EvaluationError("test split is empty: nothing to evaluate")
    ranks = np.concatenate(ranks)
    slots = np.concatenate(slots)
    hours = np.concatenate(hours)
    wdays = np.concatenate(wdays)
    acc, mrr = metrics_from_ranks(ranks)
    recip = 1.0 / ranks

    per_ts = {}
    for n in np.unique(slots):
        sel = slots == n
        per_ts[int(n)] = (float(recip[sel].mean()), int(sel.sum()))

    sig = _query_sigma(model, slots)
    sigma_by_slot = {}
    if sig is not None:
        sigma_by_slot = {int(n): float(v) for n, v in zip(slots, sig)}
    per_period = {}
    for name, mask in _period_masks(hours, wdays).items():
        if not mask.any():
            per_period[name] = (float("nan"), float("nan"))
            continue
        ms = float(sig[mask].mean()) if sig is not None else float("nan")
        per_period[name] = (float(recip[mask].mean()), ms)
    return EvaluationReport(acc, mrr, int(len(ranks)), per_ts, per_period, sigma_by_slot,
                            cfg.variant, cfg.cell)


@dataclass
class BandwidthReport:
    sigma: np.ndarray
    scheme: object
    hourly_weekday: dict[int, float]
    hourly_weekend: dict[int, float]
    period_means: dict[str, float]

    def hour_range_mean(self, lo: int, hi: int) -> float:
        """Mean σ over all slots whose local hour lies in ``[lo, hi)``."""
        sel = [n for n in range(len(self.sigma)) if (h := self.scheme.hour_of_day(n)) is not None and lo <= h < hi]
        if not sel:
            raise EvaluationError(f"no slot covers hours {lo}-{hi}")
        return float(np.mean(self.sigma[sel]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "sigma"])
            for n, s in enumerate(self.sigma):
                w.writerow([n, repr(float(s))])


def read_bandwidths(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["sigma"]) for r in rows])


def bandwidth_report(bandwidths, scheme) -> BandwidthReport:
    """Effective σ per slot with hour-of-day and period averages.

    ``bandwidths`` is a :class:`~replaynet.temporal.Bandwidths` or a plain
    σ vector; ``None`` (a run without smoothing) is an error.
    """
    if bandwidths is None:
        raise EvaluationError("this run has no smoothed timestamp embedding, so it has no learnt bandwidths")
    sigma = bandwidths.sigma() if hasattr(bandwidths, "sigma") else np.asarray(bandwidths, dtype=np.float64)
    if len(sigma) != scheme.timestamp_count:
        raise EvaluationError(f"{len(sigma)} bandwidths for {scheme.timestamp_count} timestamps")
    T = len(sigma)
    hours = [scheme.hour_of_day(n) for n in range(T)]
    weekend = [scheme.is_weekend(n) for n in range(T)]

    def mean_where(pred):
        sel = [n for n in range(T) if pred(n)]
        return float(np.mean(sigma[sel])) if sel else float("nan")

    hw, he = {}, {}
    if hours[0] is not None:
        for h in range(24):
            if any(w is not True for w in weekend):
                hw[h] = mean_where(lambda n: hours[n] == h and weekend[n] is not True)
            if any(w is True for w in weekend):
                he[h] = mean_where(lambda n: hours[n] == h and weekend[n] is True)
    periods = {}
    if hours[0] is not None:
        periods["daytime"] = mean_where(lambda n: DAYTIME[0] <= hours[n] < DAYTIME[1])
        periods["nighttime"] = mean_where(lambda n: not DAYTIME[0] <= hours[n] < DAYTIME[1])
    if weekend[0] is not None:
        periods["weekday"] = mean_where(lambda n: not weekend[n])
        periods["weekend"] = mean_where(lambda n: weekend[n])
    return BandwidthReport(np.asarray(sigma, dtype=np.float64), scheme, hw, he, periods)


def model_bandwidth_reports(model) -> dict[str, BandwidthReport]:
    """One report per bandwidth vector of ``model`` (two for multi-granularity)."""
    bws = model.bandwidths()
    if not bws:
        raise EvaluationError(f"variant {model.cfg.variant!r} has no smoothed timestamp embedding, "
                              "so it has no learnt bandwidths")
    return {tag: bandwidth_report(bw, sch) for tag, (bw, sch) in bws.items()}
