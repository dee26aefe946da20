"""The REPLAY model, its ablation variants, loss and training loop.

Forward pass for step ``i`` of a user's sequence::

    x_i   = [poi_emb[p_i] ; s(t_i)]              (s omitted without STE)
    h_i   = cell(x_i, h_{i-1})
    H_i   = flashback-weighted mean of h_j over the current window
    z_i   = [H_i ; user_emb[u] ; q(t_{i+1})]      (q omitted without query time)
    p     = softmax(W z_i + b)

``s`` is the smoothed timestamp embedding; ``q`` is the smoothed embedding of
the query (next check-in) time, or a plain timestamp-embedding lookup when
smoothing is switched off. A user's whole sequence is processed in one pass;
the hidden state runs across training windows while gradients and flashback
look-back stop at window boundaries.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .flashback import FlashbackConfig, build_taps
from .numerics import OptimizerConfig, ParameterStore, TrainingError, adam_step, rng_for, uniform_init
from .recurrent import CELL_KINDS, RecurrentPass, init_cell
from .temporal import (
    DAY_OF_WEEK,
    HOUR_OF_DAY,
    RAW_FOR_UNIT_SIGMA,
    Bandwidths,
    RawLookup,
    SmoothedLookup,
    TimestampScheme,
)

log = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-12)

VARIANTS = {
    "replay": dict(use_ste=True, use_query_time=True),
    "noste": dict(use_ste=False, use_query_time=True),
    "noqt": dict(use_ste=True, use_query_time=False),
    "multig": dict(use_ste=True, use_query_time=True, multi_granularity=True),
    "fixedb": dict(use_ste=True, use_query_time=True, fixed_bandwidth=1.0),
    "flashback": dict(use_ste=False, use_query_time=False),
}


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    poi_count: int
    user_count: int
    embed_dim: int = 10
    cell: str = "vanilla"
    scheme: TimestampScheme = field(default_factory=TimestampScheme)
    flashback: FlashbackConfig = field(default_factory=FlashbackConfig)
    use_ste: bool = True
    use_query_time: bool = True
    fixed_bandwidth: float | None = None
    multi_granularity: bool = False
    segment: int = 20

    def __post_init__(self):
        if self.cell not in CELL_KINDS:
            raise ValueError(f"unknown cell {self.cell!r}; expected one of {CELL_KINDS}")
        if self.poi_count < 1 or self.user_count < 1:
            raise ValueError("poi_count and user_count must be positive")
        if self.fixed_bandwidth is not None and not self.use_ste:
            raise ValueError("a fixed bandwidth only makes sense with smoothed timestamp embeddings")
        if self.multi_granularity and not self.use_ste:
            raise ValueError("multi-granularity embeddings require use_ste")
        if self.segment < 1:
            raise ValueError("segment must be at least 1")

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim

    @property
    def time_dim(self) -> int:
        return 2 * self.embed_dim if self.multi_granularity else self.embed_dim

    @property
    def uses_time_table(self) -> bool:
        return self.use_ste or self.use_query_time

    @classmethod
    def for_variant(cls, variant: str, fixed_bandwidth: float | None = None, **kw) -> "ModelConfig":
        """Config for a named variant; ``kw`` sets the non-flag fields."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        flags = dict(use_ste=False, use_query_time=False, fixed_bandwidth=None, multi_granularity=False)
        flags.update(VARIANTS[variant])
        if variant == "fixedb" and fixed_bandwidth is not None:
            flags["fixed_bandwidth"] = fixed_bandwidth
        return cls(**kw, **flags)

    @property
    def variant(self) -> str:
        if self.multi_granularity:
            return "multig"
        if self.fixed_bandwidth is not None:
            return "fixedb"
        return {(True, True): "replay", (False, True): "noste",
                (True, False): "noqt", (False, False): "flashback"}[(self.use_ste, self.use_query_time)]


@dataclass
class PredictionScores:
    logits: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


class _MultiLookup:
    def __init__(self, parts):
        self.parts = parts
        self.widths = [p.table.value.shape[1] for p in parts]

    def rows(self, positions):
        return np.hstack([p.rows(positions) for p in self.parts])

    def backward(self, positions, dS):
        start = 0
        for p, w in zip(self.parts, self.widths):
            p.backward(positions, dS[:, start:start + w])
            start += w


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _head_loss(logp, targets):
    """Per-step negative log-likelihood with the 1e-12 probability floor."""
    picked = logp[np.arange(len(targets)), targets]
    return -np.maximum(picked, LOG_FLOOR), picked > LOG_FLOOR


class _Pass:
    """Cached activations of one sequence forward pass."""

    __slots__ = ("seq", "n", "lookup", "rnn", "taps", "Z", "logits", "logp", "targets", "step_loss", "live")


class _SequenceModel:
    """Machinery shared by REPLAY and the dedicated Flashback network."""

    cfg: ModelConfig
    params: ParameterStore

    def __init__(self):
        self._taps = {}

    def taps_for(self, seq, n):
        key = (seq.user, n, float(seq.times[0]), float(seq.times[n - 1]))
        taps = self._taps.get(key)
        if taps is None:
            m = n - 1
            taps = build_taps(seq.times[:m], seq.lat[:m], seq.lon[:m], self.cfg.flashback, self.cfg.segment)
            self._taps[key] = taps
        return taps

    def _check_ids(self, seq, n):
        if n < 2:
            raise InputError(f"user {seq.user}: need at least two check-ins to predict, got {n}")
        if not 0 <= seq.user < self.cfg.user_count:
            raise InputError(f"user id {seq.user} outside [0, {self.cfg.user_count})")
        p = seq.pois[:n]
        if p.min() < 0 or p.max() >= self.cfg.poi_count:
            raise InputError(f"user {seq.user}: POI id outside [0, {self.cfg.poi_count})")

    def _finish(self, ps, agg, extra):
        head_W = self.params["head.W"].value
        m = ps.n - 1
        parts = [agg, np.broadcast_to(self.params["user_emb"].value[ps.seq.user], (m, self.cfg.embed_dim))]
        ps.Z = np.hstack(parts + extra)
        ps.logits = ps.Z @ head_W.T + self.params["head.b"].value
        ps.logp = _log_softmax(ps.logits)
        ps.targets = ps.seq.pois[1:ps.n]
        ps.step_loss, ps.live = _head_loss(ps.logp, ps.targets)

    def _head_backward(self, ps, scale):
        m = ps.n - 1
        dlogits = np.exp(ps.logp)
        dlogits[np.arange(m), ps.targets] -= 1.0
        dlogits *= (scale / m) * ps.live[:, None]
        W = self.params["head.W"]
        W.grad += dlogits.T @ ps.Z
        self.params["head.b"].grad += dlogits.sum(axis=0)
        dZ = dlogits @ W.value
        H, d = self.cfg.hidden_dim, self.cfg.embed_dim
        self.params["user_emb"].grad[ps.seq.user] += dZ[:, H:H + d].sum(axis=0)
        return dZ[:, :H], dZ[:, H + d:]

    def sequence_loss(self, seq, n=None, grad=False, scale=1.0, starts=None):
        """Mean next-POI cross-entropy over the first ``n`` check-ins.

        With ``grad`` the gradient of ``scale * loss`` is accumulated into the
        parameter store.
        """
        n = len(seq) if n is None else n
        ps = self.forward(seq, n, starts)
        loss = float(ps.step_loss.mean())
        if grad:
            self.backward(ps, scale)
        return loss

    def window_starts(self, seqs, train_only=True) -> dict:
        """Carried window-start states per user, for :meth:`corpus_loss` ``starts``."""
        out = {}
        for s in seqs:
            n = s.n_train if train_only else len(s)
            if n >= 2:
                out[s.user] = self.forward(s, n).rnn.window_starts()
        return out

    def corpus_loss(self, seqs, grad=False, train_only=True, starts=None):
        """Mean over users of each user's mean step loss.

        ``starts`` (from :meth:`window_starts`) freezes the states carried
        into each training window, turning the truncated-BPTT objective into
        a plain function of the parameters.
        """
        seqs = [s for s in seqs if (s.n_train if train_only else len(s)) >= 2]
        if not seqs:
            raise InputError("no sequence has a prediction step")
        scale = 1.0 / len(seqs)
        total = 0.0
        for s in seqs:
            st = None if starts is None else starts[s.user]
            total += self.sequence_loss(s, s.n_train if train_only else None, grad=grad, scale=scale, starts=st)
        return total * scale

    def predict(self, seq, n=None) -> PredictionScores:
        """Scores for every prediction step of the first ``n`` check-ins."""
        n = len(seq) if n is None else n
        return PredictionScores(self.forward(seq, n).logits)

    def predict_next(self, seq, i: int) -> PredictionScores:
        """Scores for check-in ``i + 1`` given history ``0..i`` and its time as query."""
        return PredictionScores(self.forward(seq, i + 2).logits[-1])


class ReplayModel(_SequenceModel):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        self.params = ParameterStore()
        self._init_params()

    def _init_params(self):
        c, p, d = self.cfg, self.params, self.cfg.embed_dim
        p.add("poi_emb", uniform_init(self.seed, "poi_emb", (c.poi_count, d)))
        p.add("user_emb", uniform_init(self.seed, "user_emb", (c.user_count, d)))
        if c.multi_granularity:
            for tag, sch in (("hour", HOUR_OF_DAY), ("dow", DAY_OF_WEEK)):
                p.add(f"time_emb.{tag}", uniform_init(self.seed, f"time_emb.{tag}", (sch.timestamp_count, d)))
                p.add(f"bandwidth.{tag}", np.full(sch.timestamp_count, RAW_FOR_UNIT_SIGMA))
        elif c.uses_time_table:
            T = c.scheme.timestamp_count
            p.add("time_emb", uniform_init(self.seed, "time_emb", (T, d)))
            if c.use_ste:
                p.add("bandwidth", np.full(T, RAW_FOR_UNIT_SIGMA))
        in_dim = d + (c.time_dim if c.use_ste else 0)
        init_cell(p, c.cell, in_dim, c.hidden_dim, self.seed)
        head_in = c.hidden_dim + d + (c.time_dim if c.use_query_time else 0)
        p.add("head.W", uniform_init(self.seed, "head.W", (c.poi_count, head_in)))
        p.add("head.b", np.zeros(c.poi_count))

    def bandwidths(self) -> dict[str, tuple[Bandwidths, TimestampScheme]]:
        """Bandwidth vectors with their schemes; empty without smoothing."""
        c = self.cfg
        if not c.use_ste:
            return {}
        if c.multi_granularity:
            return {
                "hour": (Bandwidths(self.params["bandwidth.hour"], c.fixed_bandwidth), HOUR_OF_DAY),
                "dow": (Bandwidths(self.params["bandwidth.dow"], c.fixed_bandwidth), DAY_OF_WEEK),
            }
        return {"": (Bandwidths(self.params["bandwidth"], c.fixed_bandwidth), c.scheme)}

    def _lookup(self, seq, n):
        c = self.cfg
        if not c.uses_time_table:
            return None
        wd, hr, mi = seq.weekday[:n], seq.hour[:n], seq.minute[:n]
        if c.multi_granularity:
            bws = self.bandwidths()
            return _MultiLookup([
                SmoothedLookup(sch.index(wd, hr, mi), bw, self.params[f"time_emb.{tag}"], sch)
                for tag, (bw, sch) in bws.items()
            ])
        slots = np.asarray(c.scheme.index(wd, hr, mi), dtype=np.int64)
        if c.use_ste:
            bw, _ = self.bandwidths()[""]
            return SmoothedLookup(slots, bw, self.params["time_emb"], c.scheme)
        return RawLookup(slots, self.params["time_emb"])

    def forward(self, seq, n, starts=None) -> _Pass:
        self._check_ids(seq, n)
        c = self.cfg
        m = n - 1
        ps = _Pass()
        ps.seq, ps.n = seq, n
        ps.lookup = self._lookup(seq, n)
        steps = np.arange(m)
        X = self.params["poi_emb"].value[seq.pois[:m]]
        if c.use_ste:
            X = np.hstack([X, ps.lookup.rows(steps)])
        ps.rnn = RecurrentPass(c.cell, self.params, X, c.segment, starts=starts)
        ps.taps = self.taps_for(seq, n)
        agg = ps.taps.aggregate(ps.rnn.hs)
        extra = [ps.lookup.rows(steps + 1)] if c.use_query_time else []
        self._finish(ps, agg, extra)
        return ps

    def backward(self, ps: _Pass, scale: float = 1.0):
        c = self.cfg
        m = ps.n - 1
        steps = np.arange(m)
        dagg, dq = self._head_backward(ps, scale)
        if c.use_query_time:
            ps.lookup.backward(steps + 1, dq)
        dX = ps.rnn.backward(ps.taps.backward(dagg))
        d = c.embed_dim
        np.add.at(self.params["poi_emb"].grad, ps.seq.pois[:m], dX[:, :d])
        if c.use_ste:
            ps.lookup.backward(steps, dX[:, d:])


class FlashbackNet(_SequenceModel):
    """Plain Flashback: POI embeddings into the flashback RNN, user embedding at the head.

    Kept as its own code path so that REPLAY with both smoothing and query
    time switched off can be checked against it.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = replace(cfg, use_ste=False, use_query_time=False, fixed_bandwidth=None, multi_granularity=False)
        self.seed = seed
        c, d = self.cfg, self.cfg.embed_dim
        self.params = ParameterStore()
        self.params.add("poi_emb", uniform_init(seed, "poi_emb", (c.poi_count, d)))
        self.params.add("user_emb", uniform_init(seed, "user_emb", (c.user_count, d)))
        init_cell(self.params, c.cell, d, c.hidden_dim, seed)
        self.params.add("head.W", uniform_init(seed, "head.W", (c.poi_count, c.hidden_dim + d)))
        self.params.add("head.b", np.zeros(c.poi_count))

    def bandwidths(self):
        return {}

    def forward(self, seq, n, starts=None) -> _Pass:
        self._check_ids(seq, n)
        ps = _Pass()
        ps.seq, ps.n, ps.lookup = seq, n, None
        X = self.params["poi_emb"].value[seq.pois[:n - 1]]
        ps.rnn = RecurrentPass(self.cfg.cell, self.params, X, self.cfg.segment, starts=starts)
        ps.taps = self.taps_for(seq, n)
        self._finish(ps, ps.taps.aggregate(ps.rnn.hs), [])
        return ps

    def backward(self, ps: _Pass, scale: float = 1.0):
        dagg, _ = self._head_backward(ps, scale)
        dX = ps.rnn.backward(ps.taps.backward(dagg))
        np.add.at(self.params["poi_emb"].grad, ps.seq.pois[:ps.n - 1], dX)


def build_model(cfg: ModelConfig, seed: int = 0, dedicated_flashback: bool = False):
    if dedicated_flashback:
        return FlashbackNet(cfg, seed)
    return ReplayModel(cfg, seed)


# -- training -----------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    steps: int
    users: int


class Trainer:
    """Stateful training loop: one Adam step per user (all of its windows)."""

    def __init__(self, model, optim: OptimizerConfig | None = None, seed: int = 0):
        self.model = model
        self.optim = optim or OptimizerConfig()
        self.seed = seed
        self.step = 0
        self.epoch = 0

    def train_epoch(self, seqs) -> EpochStats:
        seqs = [s for s in seqs if s.n_train >= 2]
        order = rng_for(self.seed, "shuffle", self.epoch).permutation(len(seqs))
        params = self.model.params
        losses = []
        steps = 0
        for k in order:
            s = seqs[k]
            ps = self.model.forward(s, s.n_train)
            loss = float(ps.step_loss.mean())
            if not math.isfinite(loss):
                bad = int(np.flatnonzero(~np.isfinite(ps.step_loss))[0])
                raise TrainingError(
                    f"non-finite loss in epoch {self.epoch}, user {s.user}, window {bad // self.model.cfg.segment}"
                )
            self.model.backward(ps)
            self.step += 1
            adam_step(params, self.optim, self.step)
            losses.append(loss)
            steps += s.n_train - 1
        self.epoch += 1
        mean = float(np.mean(losses)) if losses else float("nan")
        return EpochStats(self.epoch, mean, steps, len(losses))

    def fit(self, seqs, epochs: int, callback=None) -> list[EpochStats]:
        history = []
        for _ in range(epochs):
            st = self.train_epoch(seqs)
            history.append(st)
            log.info("epoch %d loss %.6f", st.epoch, st.mean_loss)
            if callback is not None:
                callback(st)
        return history


def train_epoch(model, seqs, optim: OptimizerConfig, epoch: int = 0, seed: int = 0, step: int = 0) -> EpochStats:
    """Functional wrapper around :meth:`Trainer.train_epoch`."""
    tr = Trainer(model, optim, seed)
    tr.epoch, tr.step = epoch, step
    return tr.train_epoch(seqs)
