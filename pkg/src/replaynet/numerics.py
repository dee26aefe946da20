"""Dense linear algebra, parameter storage, Adam, and gradient verification.

Every learnable tensor lives in a :class:`ParamTensor` that carries its own
gradient buffer and Adam moments. A :class:`ParameterStore` is an ordered
name -> tensor mapping; model code reads ``store[name].value`` and accumulates
into ``store[name].grad``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class DeterminismError(RuntimeError):
    pass


def matmul(a, b):
    """Matrix product of two 2-D float64 arrays with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def derive_seed(seed: int, *labels) -> int:
    """Stable 63-bit sub-seed for ``labels`` under ``seed``.

    Streams are keyed by name, so adding a new consumer never shifts the
    numbers another consumer sees.
    """
    key = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


@dataclass
class ParamTensor:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


class ParameterStore(dict):
    """Ordered mapping of tensor name to :class:`ParamTensor`."""

    def add(self, name: str, value) -> ParamTensor:
        if name in self:
            raise KeyError(f"parameter {name!r} already exists")
        p = ParamTensor(value)
        self[name] = p
        return p

    def zero_grad(self):
        for p in self.values():
            p.zero_grad()

    def size(self) -> int:
        return sum(p.value.size for p in self.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.items()}


def uniform_init(seed: int, name: str, shape, scale: float = 0.1) -> np.ndarray:
    return rng_for(seed, "init", name).uniform(-scale, scale, size=shape)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in (0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in (0, 1), got {self.beta2}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        # lr = 0 is accepted: it is the documented way to freeze a run
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")


def adam_step(params: ParameterStore | Iterable, cfg: OptimizerConfig, step_index: int):
    """One bias-corrected Adam update over every tensor, then zero the grads.

    ``step_index`` is 1-based. Tensors are validated before anything is
    written, so a non-finite gradient leaves the whole store untouched.
    """
    if step_index < 1:
        raise ValueError("step_index is 1-based")
    items = list(params.items()) if isinstance(params, dict) else [(str(i), p) for i, p in enumerate(params)]
    for name, p in items:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in tensor {name!r}")

    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** step_index
    bc2 = 1.0 - b2 ** step_index
    for _, p in items:
        g = p.grad
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        p.value -= cfg.learning_rate * (p.m / bc1) / (np.sqrt(p.v / bc2) + cfg.epsilon)
        p.zero_grad()


def finite_diff_check(
    loss_fn: Callable[[ParameterStore], float],
    params: ParameterStore,
    h: float = 1e-5,
    sample_count: int = 20,
    seed: int = 0,
    per_tensor: bool = False,
    names: Iterable[str] | None = None,
    richardson: bool = False,
    return_details: bool = False,
):
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return the scalar loss and leave the analytic
    gradient accumulated in ``params[*].grad`` (grads are zeroed here before
    each call). ``sample_count`` scalar entries are drawn at random from the
    whole store, or from every tensor separately when ``per_tensor`` is set.

    With ``richardson`` the numeric derivative is the extrapolated
    combination ``(4 D(h/2) - D(h)) / 3`` of two central differences, which
    removes the O(h^2) truncation term and so tolerates the larger ``h``
    needed to keep rounding noise below tiny gradients.

    Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, 1e-8)`` over the sampled entries.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    params.zero_grad()
    base = float(loss_fn(params))
    analytic = {k: p.grad.copy() for k, p in params.items()}
    params.zero_grad()
    again = float(loss_fn(params))
    params.zero_grad()
    if base != again:
        raise DeterminismError(f"loss_fn returned {base!r} then {again!r} at identical parameters")

    rng = np.random.default_rng(seed)
    chosen = list(names) if names is not None else list(params)
    picks: list[tuple[str, int]] = []
    if per_tensor:
        for k in chosen:
            n = params[k].value.size
            for flat in rng.choice(n, size=min(sample_count, n), replace=False):
                picks.append((k, int(flat)))
    else:
        sizes = np.array([params[k].value.size for k in chosen])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        for flat in rng.choice(total, size=min(sample_count, total), replace=False):
            t = int(np.searchsorted(offsets, flat, side="right") - 1)
            picks.append((chosen[t], int(flat - offsets[t])))

    def central(x, flat, step):
        orig = x[flat]
        x[flat] = orig + step
        plus = float(loss_fn(params))
        x[flat] = orig - step
        minus = float(loss_fn(params))
        x[flat] = orig
        params.zero_grad()
        return (plus - minus) / (2.0 * step)

    worst = 0.0
    details = []
    for k, flat in picks:
        x = params[k].value.reshape(-1)
        numeric = central(x, flat, h)
        if richardson:
            numeric = (4.0 * central(x, flat, h / 2.0) - numeric) / 3.0
        a = float(analytic[k].reshape(-1)[flat])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        details.append((k, flat, a, numeric, err))
        worst = max(worst, err)
    if not math.isfinite(worst):
        worst = math.inf
    return (worst, details) if return_details else worst
