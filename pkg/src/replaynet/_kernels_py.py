"""Pure-Python (numpy) recurrence kernels.

Same contract as the compiled ``_kernels`` module; used when the extension is
not built or ``REPLAYNET_PURE_PYTHON`` is set.

Cell codes: 0 vanilla, 1 GRU, 2 LSTM. ``xproj`` holds ``W_x x + b`` for every
step, gate blocks stacked along the columns (GRU: r, z, n; LSTM: i, f, g, o).
"""
import numpy as np

VANILLA, GRU, LSTM = 0, 1, 2


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def rnn_forward(kind, xproj, Wh, h0, c0):
    n, gh = xproj.shape
    H = Wh.shape[1]
    hs = np.empty((n, H))
    cs = np.zeros((n, H)) if kind == LSTM else np.zeros((0, H))
    gates = np.empty((n, gh))
    aux = np.empty((n, H)) if kind == GRU else np.zeros((0, H))
    h = np.array(h0, dtype=np.float64)
    c = np.array(c0, dtype=np.float64)
    for t in range(n):
        if kind == VANILLA:
            h = np.tanh(xproj[t] + Wh @ h)
            gates[t] = h
        elif kind == GRU:
            rec = Wh @ h
            r = _sig(xproj[t, :H] + rec[:H])
            z = _sig(xproj[t, H:2 * H] + rec[H:2 * H])
            hn = rec[2 * H:]
            cand = np.tanh(xproj[t, 2 * H:] + r * hn)
            h = (1.0 - z) * h + z * cand
            gates[t, :H] = r
            gates[t, H:2 * H] = z
            gates[t, 2 * H:] = cand
            aux[t] = hn
        else:
            a = xproj[t] + Wh @ h
            i = _sig(a[:H])
            f = _sig(a[H:2 * H])
            g = np.tanh(a[2 * H:3 * H])
            o = _sig(a[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates[t] = np.concatenate([i, f, g, o])
            cs[t] = c
        hs[t] = h
    return hs, cs, gates, aux


def rnn_backward(kind, dhs, hs, cs, gates, aux, Wh, h0, c0, segment):
    n, H = hs.shape
    gh = Wh.shape[0]
    dx = np.zeros((n, gh))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(n - 1, -1, -1):
        hp = hs[t - 1] if t > 0 else h0
        dh = dhs[t] + dh_next
        if kind == VANILLA:
            h = gates[t]
            da = dh * (1.0 - h * h)
            dx[t] = da
            dWh += np.outer(da, hp)
            dh_next = Wh.T @ da
        elif kind == GRU:
            r = gates[t, :H]
            z = gates[t, H:2 * H]
            cand = gates[t, 2 * H:]
            hn = aux[t]
            dz = dh * (cand - hp)
            dcand = dh * z
            dan = dcand * (1.0 - cand * cand)
            dr = dan * hn
            dhn = dan * r
            dar = dr * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dx[t, :H] = dar
            dx[t, H:2 * H] = daz
            dx[t, 2 * H:] = dan
            drec = np.concatenate([dar, daz, dhn])
            dWh += np.outer(drec, hp)
            dh_next = dh * (1.0 - z) + Wh.T @ drec
        else:
            cp = cs[t - 1] if t > 0 else c0
            i = gates[t, :H]
            f = gates[t, H:2 * H]
            g = gates[t, 2 * H:3 * H]
            o = gates[t, 3 * H:]
            tc = np.tanh(cs[t])
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cp
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            dx[t] = da
            dWh += np.outer(da, hp)
            dh_next = Wh.T @ da
            dc_next = dc * f
        if t % segment == 0:
            dh_next = np.zeros(H)
            dc_next = np.zeros(H)
    return dx, dWh
