import numpy as np
import pytest

from replaynet import recurrent
from replaynet.numerics import ParameterStore, finite_diff_check, uniform_init
from replaynet.recurrent import (
    CELL_KINDS,
    ConfigurationError,
    HiddenState,
    RecurrentPass,
    cell_forward,
    init_cell,
    kernels,
)


def _sig(x):
    return 1 / (1 + np.exp(-x))


def _oracle_step(kind, x, h, c, Wx, Wh, b):
    H = len(h)
    if kind == "vanilla":
        return np.tanh(Wx @ x + Wh @ h + b), None
    if kind == "gru":
        gx, gh = Wx @ x + b, Wh @ h
        r = _sig(gx[:H] + gh[:H])
        z = _sig(gx[H:2 * H] + gh[H:2 * H])
        n = np.tanh(gx[2 * H:] + r * gh[2 * H:])
        return (1 - z) * h + z * n, None
    a = Wx @ x + Wh @ h + b
    i, f, g, o = _sig(a[:H]), _sig(a[H:2 * H]), np.tanh(a[2 * H:3 * H]), _sig(a[3 * H:])
    c = f * c + i * g
    return o * np.tanh(c), c


def _cell(kind, d_in=3, H=4, seed=0):
    ps = ParameterStore()
    init_cell(ps, kind, d_in, H, seed)
    rng = np.random.default_rng(seed)
    for k in ps:
        ps[k].value[...] = rng.normal(0, 0.4, ps[k].value.shape)
    return ps


def test_backend_selected():
    assert recurrent.BACKEND in ("compiled", "python")


def test_lstm_forget_bias_init():
    ps = ParameterStore()
    init_cell(ps, "lstm", 3, 4, 0)
    b = ps["rnn.b"].value
    assert np.all(b[4:8] == 1.0) and not b[:4].any() and not b[8:].any()
    assert np.all(np.abs(ps["rnn.Wx"].value) <= 0.1)


def test_unknown_cell_and_bad_shapes():
    with pytest.raises(ConfigurationError):
        init_cell(ParameterStore(), "tree", 3, 4, 0)
    ps = _cell("gru")
    with pytest.raises(ConfigurationError):
        cell_forward("gru", np.zeros(5), HiddenState(np.zeros(4)), ps)
    with pytest.raises(ConfigurationError):
        cell_forward("lstm", np.zeros(3), HiddenState(np.zeros(4), np.zeros(4)), ps)


def test_vanilla_zero_weights():
    ps = ParameterStore()
    init_cell(ps, "vanilla", 3, 4, 0)
    for p in ps.values():
        p.value[...] = 0
    assert not cell_forward("vanilla", np.ones(3), HiddenState(np.ones(4)), ps).h.any()


def test_vanilla_scalar():
    ps = ParameterStore()
    ps.add("rnn.Wx", np.array([[1.0]]))
    ps.add("rnn.Wh", np.array([[0.0]]))
    ps.add("rnn.b", np.array([0.0]))
    h = cell_forward("vanilla", np.array([0.5]), HiddenState(np.array([0.7])), ps).h
    assert h[0] == pytest.approx(0.462117, abs=1e-6)


def test_gru_closed_update_gate_keeps_state():
    ps = _cell("gru")
    ps["rnn.b"].value[4:8] = -50.0
    prev = np.array([0.3, -0.5, 0.9, 0.1])
    h = cell_forward("gru", np.array([1.0, -1.0, 0.5]), HiddenState(prev), ps).h
    assert np.max(np.abs(h - prev)) < 1e-12


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_cell_matches_oracle_over_sequence(kind):
    ps = _cell(kind)
    Wx, Wh, b = (ps[k].value for k in ("rnn.Wx", "rnn.Wh", "rnn.b"))
    rng = np.random.default_rng(1)
    X = rng.normal(size=(9, 3))
    h, c = rng.normal(0, 0.3, 4), rng.normal(0, 0.3, 4)
    rp = RecurrentPass(kind, ps, X, segment=4, h0=h, c0=c)
    for t in range(9):
        h, c = _oracle_step(kind, X[t], h, c, Wx, Wh, b)
        assert np.max(np.abs(rp.hs[t] - h)) < 1e-14
    assert np.all(np.abs(rp.hs) < 1)


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_backends_agree(kind):
    try:
        compiled = kernels("compiled")
    except ImportError:
        pytest.skip("compiled extension not built")
    ps = _cell(kind, d_in=5, H=6, seed=2)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(47, 5))
    G = rng.normal(size=(47, 6))
    out = {}
    for name, k in (("py", kernels("python")), ("c", compiled)):
        ps.zero_grad()
        rp = RecurrentPass(kind, ps, X, segment=20, backend=k)
        dX = rp.backward(G)
        out[name] = (rp.hs, dX, ps["rnn.Wh"].grad.copy(), ps["rnn.Wx"].grad.copy())
    for a, b in zip(out["py"], out["c"]):
        assert np.max(np.abs(a - b)) < 1e-12


def test_vanilla_one_step_gradient_by_hand():
    ps = ParameterStore()
    ps.add("rnn.Wx", np.array([[0.8]]))
    ps.add("rnn.Wh", np.array([[0.3]]))
    ps.add("rnn.b", np.array([0.1]))
    x = 0.5
    rp = RecurrentPass("vanilla", ps, np.array([[x]]), segment=20)
    h = rp.hs[0, 0]
    rp.backward(np.array([[2.0]]))
    assert ps["rnn.Wx"].grad[0, 0] == pytest.approx(2.0 * (1 - h * h) * x, abs=1e-15)
    assert ps["rnn.Wh"].grad[0, 0] == 0.0  # h_prev is zero


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_zero_upstream_gives_zero_grads(kind):
    ps = _cell(kind)
    rp = RecurrentPass(kind, ps, np.random.default_rng(0).normal(size=(5, 3)), segment=20)
    dX = rp.backward(np.zeros_like(rp.hs))
    assert not dX.any() and not any(p.grad.any() for p in ps.values())


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_window_gradients_finite_differences(kind):
    ps = _cell(kind)
    rng = np.random.default_rng(7)
    ps.add("x", rng.normal(size=(20, 3)))
    G = rng.normal(size=(20, 4))

    def loss(p):
        rp = RecurrentPass(kind, p, p["x"].value, segment=20)
        p["x"].grad += rp.backward(G * np.cos(rp.hs))
        return float(np.sum(np.sin(rp.hs) * G))

    assert finite_diff_check(loss, ps, sample_count=15, per_tensor=True) < 1e-4


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_truncation_and_pinned_starts(kind):
    ps = _cell(kind)
    rng = np.random.default_rng(8)
    X = rng.normal(size=(10, 3))
    carried = RecurrentPass(kind, ps, X, segment=4)
    starts = carried.window_starts()
    assert len(starts) == 3
    pinned = RecurrentPass(kind, ps, X, segment=4, starts=starts)
    assert np.max(np.abs(pinned.hs - carried.hs)) < 1e-15
    # a loss on the last window only does not reach earlier windows' inputs
    G = np.zeros((10, 4))
    G[9] = 1.0
    dX = carried.backward(G)
    assert not dX[:8].any() and dX[8:].any()
    ps.zero_grad()
    assert np.array_equal(pinned.backward(G), dX)


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_pinned_starts_make_truncated_loss_exact(kind):
    ps = _cell(kind)
    rng = np.random.default_rng(9)
    ps.add("x", rng.normal(size=(13, 3)))
    G = rng.normal(size=(13, 4))
    starts = RecurrentPass(kind, ps, ps["x"].value, segment=5).window_starts()

    def loss(p):
        rp = RecurrentPass(kind, p, p["x"].value, segment=5, starts=starts)
        p["x"].grad += rp.backward(G)
        return float(np.sum(rp.hs * G))

    assert finite_diff_check(loss, ps, sample_count=15, per_tensor=True) < 1e-4


def test_cache_mismatch_is_an_error():
    ps = _cell("vanilla")
    rp = RecurrentPass("vanilla", ps, np.zeros((4, 3)), segment=20)
    with pytest.raises(RuntimeError):
        rp.backward(np.zeros((3, 4)))
    with pytest.raises(RuntimeError):
        RecurrentPass("vanilla", ps, np.zeros((4, 3)), segment=2, starts=[HiddenState(np.zeros(4))])


def test_forward_is_deterministic():
    ps = _cell("lstm")
    X = np.random.default_rng(0).normal(size=(30, 3))
    a = RecurrentPass("lstm", ps, X, segment=20).hs
    b = RecurrentPass("lstm", ps, X, segment=20).hs
    assert a.tobytes() == b.tobytes()
