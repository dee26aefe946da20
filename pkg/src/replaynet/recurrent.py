"""Vanilla / GRU / LSTM cells with exact backpropagation through time.

The step-by-step recurrence is the hot loop of training and runs in the
compiled ``_kernels`` extension when it is importable; otherwise (or with
``REPLAYNET_PURE_PYTHON=1``) the numpy fallback in ``_kernels_py`` is used.
Input projections, biases and weight-gradient reductions over the input are
batched in numpy around the kernel calls.

GRU convention: ``h = (1 - z) * h_prev + z * n`` with
``n = tanh(W_xn x + b_n + r * (W_hn h_prev))``; driving ``z`` to zero keeps
the previous state.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .numerics import ParameterStore, uniform_init

try:
    if os.environ.get("REPLAYNET_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _backend
    BACKEND = "compiled"
except ImportError:
    _backend = _kernels_py
    BACKEND = "python"

CELL_KINDS = ("vanilla", "gru", "lstm")
_CODES = {"vanilla": 0, "gru": 1, "lstm": 2}
_GATES = {"vanilla": 1, "gru": 3, "lstm": 4}


class ConfigurationError(ValueError):
    pass


def kernels(name: str | None = None):
    """Kernel module by name ("compiled" / "python"); the active one by default."""
    if name is None:
        return _backend
    if name == "python":
        return _kernels_py
    from . import _kernels
    return _kernels


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray | None = None


def gate_count(kind: str) -> int:
    if kind not in _GATES:
        raise ConfigurationError(f"unknown cell kind {kind!r}; expected one of {CELL_KINDS}")
    return _GATES[kind]


def init_cell(params: ParameterStore, kind: str, input_dim: int, hidden_dim: int, seed: int, prefix="rnn"):
    g = gate_count(kind)
    params.add(f"{prefix}.Wx", uniform_init(seed, f"{prefix}.Wx", (g * hidden_dim, input_dim)))
    params.add(f"{prefix}.Wh", uniform_init(seed, f"{prefix}.Wh", (g * hidden_dim, hidden_dim)))
    b = np.zeros(g * hidden_dim)
    if kind == "lstm":
        b[hidden_dim:2 * hidden_dim] = 1.0
    params.add(f"{prefix}.b", b)


def _weights(params, prefix):
    return params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]


def _check_shapes(kind, Wx, Wh, b, input_dim):
    g = gate_count(kind)
    H = Wh.shape[1]
    if Wh.shape != (g * H, H) or Wx.shape != (g * H, input_dim) or b.shape != (g * H,):
        raise ConfigurationError(
            f"{kind} cell weights Wx{Wx.shape} Wh{Wh.shape} b{b.shape} do not fit "
            f"input width {input_dim} and {g} gate block(s)"
        )


def cell_forward(kind: str, x, prev: HiddenState, params: ParameterStore, prefix="rnn") -> HiddenState:
    """Single step of the recurrence (reference / inspection use)."""
    Wx, Wh, b = (p.value for p in _weights(params, prefix))
    x = np.asarray(x, dtype=np.float64)
    _check_shapes(kind, Wx, Wh, b, x.shape[0])
    H = Wh.shape[1]
    c0 = prev.c if prev.c is not None else np.zeros(H)
    hs, cs, _, _ = _backend.rnn_forward(
        _CODES[kind], np.ascontiguousarray((Wx @ x + b)[None, :]), Wh,
        np.ascontiguousarray(prev.h, dtype=np.float64), np.ascontiguousarray(c0, dtype=np.float64),
    )
    return HiddenState(hs[0], cs[0].copy() if kind == "lstm" else None)


class RecurrentPass:
    """Forward over a whole sequence and its truncated backward.

    ``segment`` is the training-window length: the hidden state flows across
    window boundaries in the forward pass, gradients do not. Passing
    ``starts`` (one state per window) pins every window's initial state to a
    constant instead, which makes the truncated objective an ordinary
    function of the weights (used for finite-difference checks).
    """

    def __init__(self, kind: str, params: ParameterStore, X: np.ndarray, segment: int,
                 h0=None, c0=None, starts: list[HiddenState] | None = None, prefix="rnn", backend=None):
        gate_count(kind)
        self.kind = kind
        self.code = _CODES[kind]
        self.params = params
        self.prefix = prefix
        self.segment = int(segment)
        self.k = backend or _backend
        Wx, Wh, b = (p.value for p in _weights(params, prefix))
        _check_shapes(kind, Wx, Wh, b, X.shape[1])
        H = Wh.shape[1]
        self.X = X
        self.h0 = np.zeros(H) if h0 is None else np.ascontiguousarray(h0, dtype=np.float64)
        self.c0 = np.zeros(H) if c0 is None else np.ascontiguousarray(c0, dtype=np.float64)
        xproj = np.ascontiguousarray(X @ Wx.T + b)
        self.starts = starts
        if starts is None:
            self.hs, self.cs, self.gates, self.aux = self.k.rnn_forward(self.code, xproj, Wh, self.h0, self.c0)
            return
        n = len(X)
        if len(starts) != -(-n // self.segment):
            raise RuntimeError(f"{len(starts)} window start states for {n} steps of segment {self.segment}")
        parts = []
        for w, st in enumerate(starts):
            sl = slice(w * self.segment, min(n, (w + 1) * self.segment))
            c = st.c if st.c is not None else np.zeros(H)
            parts.append(self.k.rnn_forward(self.code, np.ascontiguousarray(xproj[sl]), Wh,
                                            np.ascontiguousarray(st.h), np.ascontiguousarray(c)))
        self.hs, self.cs, self.gates, self.aux = (np.concatenate([p[i] for p in parts]) for i in range(4))

    @property
    def final_state(self) -> HiddenState:
        if len(self.hs) == 0:
            return HiddenState(self.h0, self.c0 if self.kind == "lstm" else None)
        return HiddenState(self.hs[-1].copy(), self.cs[-1].copy() if self.kind == "lstm" else None)

    def window_starts(self) -> list[HiddenState]:
        """Initial state of every window as seen by this (carried) forward pass."""
        out = []
        for t in range(0, len(self.hs), self.segment):
            if t == 0:
                out.append(HiddenState(self.h0.copy(), self.c0.copy() if self.kind == "lstm" else None))
            else:
                out.append(HiddenState(self.hs[t - 1].copy(), self.cs[t - 1].copy() if self.kind == "lstm" else None))
        return out

    def backward(self, dhs: np.ndarray) -> np.ndarray:
        """Accumulate weight gradients; return the gradient w.r.t. the inputs."""
        if dhs.shape != self.hs.shape:
            raise RuntimeError(f"upstream gradient {dhs.shape} does not match cached states {self.hs.shape}")
        Wx, Wh, b = _weights(self.params, self.prefix)
        dhs = np.ascontiguousarray(dhs)
        if self.starts is None:
            dxp, dWh = self.k.rnn_backward(self.code, dhs, self.hs, self.cs, self.gates, self.aux,
                                           Wh.value, self.h0, self.c0, self.segment)
        else:
            H = Wh.value.shape[1]
            dxp = np.empty((len(self.hs), Wh.value.shape[0]))
            dWh = np.zeros_like(Wh.value)
            for w, st in enumerate(self.starts):
                sl = slice(w * self.segment, min(len(self.hs), (w + 1) * self.segment))
                c = st.c if st.c is not None else np.zeros(H)
                cs = self.cs[sl] if self.kind == "lstm" else self.cs
                aux = self.aux[sl] if self.kind == "gru" else self.aux
                d, dW = self.k.rnn_backward(self.code, np.ascontiguousarray(dhs[sl]), np.ascontiguousarray(self.hs[sl]),
                                            np.ascontiguousarray(cs), np.ascontiguousarray(self.gates[sl]),
                                            np.ascontiguousarray(aux), Wh.value, np.ascontiguousarray(st.h),
                                            np.ascontiguousarray(c), self.segment)
                dxp[sl] = d
                dWh += dW
        Wh.grad += dWh
        Wx.grad += dxp.T @ self.X
        b.grad += dxp.sum(axis=0)
        return dxp @ Wx.value
