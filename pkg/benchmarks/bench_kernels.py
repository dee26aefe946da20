"""Compare the compiled recurrence kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--steps 2000] [--hidden 10] [--repeat 5]

Both backends are checked to produce the same states and gradients before
timing.
"""
import argparse
import time

import numpy as np

from replaynet.recurrent import _CODES, gate_count, kernels


def _inputs(kind, steps, hidden, seed=0):
    rng = np.random.default_rng(seed)
    g = gate_count(kind)
    xproj = rng.normal(0, 0.5, (steps, g * hidden))
    Wh = rng.uniform(-0.3, 0.3, (g * hidden, hidden))
    h0 = rng.normal(0, 0.1, hidden)
    c0 = rng.normal(0, 0.1, hidden)
    dhs = rng.normal(0, 1.0, (steps, hidden))
    return xproj, Wh, h0, c0, dhs


def _run(k, code, xproj, Wh, h0, c0, dhs, segment):
    hs, cs, gates, aux = k.rnn_forward(code, xproj, Wh, h0, c0)
    dx, dW = k.rnn_backward(code, dhs, hs, cs, gates, aux, Wh, h0, c0, segment)
    return hs, dx, dW


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--hidden", type=int, default=10)
    ap.add_argument("--segment", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        compiled = kernels("compiled")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return
    python = kernels("python")
    print(f"{'cell':8s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max diff':>10s}")
    for kind in ("vanilla", "gru", "lstm"):
        code = _CODES[kind]
        xs = _inputs(kind, args.steps, args.hidden)
        ref = _run(python, code, *xs, args.segment)
        fast = _run(compiled, code, *xs, args.segment)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, fast))
        tp = _best(lambda: _run(python, code, *xs, args.segment), args.repeat)
        tc = _best(lambda: _run(compiled, code, *xs, args.segment), args.repeat)
        print(f"{kind:8s} {tp * 1e3:10.2f} {tc * 1e3:12.2f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
