import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hglance.errors import ChecksumMismatch, CheckpointFormatError, EmptyInput, ShapeMismatch
from hglance.nn import MLP, ParameterStore, Tape, Tensor, adam_step, checkpoint, grad_check, sgd_step
from hglance.nn import tensor as T

from oracles import numeric_gradient


def tape_grads(fn, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)
    return out, [leaf.grad for leaf in leaves]


def max_rel(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# -- linear ------------------------------------------------------------------


def test_linear_identity():
    y = T.linear(np.array([[1.0, 0.0]]), np.eye(2), np.zeros(2))
    assert y.data.tolist() == [[1.0, 0.0]]


def test_linear_hand_sum():
    y = T.linear(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
    assert y.data.tolist() == [[4.0]]


def test_linear_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        T.linear(np.ones((2, 3)), np.ones((2, 2)), np.zeros(2))


def test_linear_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    weights = rng.normal(size=(3, 2))

    def f(x_, W_, b_):
        return T.total(T.mul(T.linear(x_, W_, b_), weights))

    _, (gx, gW, gb) = tape_grads(f, x, W, b)
    scalar = lambda: float(((x @ W + b) * weights).sum())
    for analytic, arr in ((gx, x), (gW, W), (gb, b)):
        assert max_rel(analytic, numeric_gradient(scalar, arr, h=1e-5)) < 1e-6


# -- activations -------------------------------------------------------------


def test_activation_values():
    assert T.activation(np.array(0.0), "tanh").data == 0.0
    assert T.activation(np.array(0.0), "sigmoid").data == 0.5
    assert T.activation(np.array(-3.0), "relu").data == 0.0


def test_relu_gradient_zero_when_inactive():
    _, (g,) = tape_grads(lambda x: T.relu(x), np.array(-3.0))
    assert g == 0.0


def test_sigmoid_gradient_at_zero():
    _, (g,) = tape_grads(lambda x: T.sigmoid(x), np.array(0.0))
    h = 1e-5
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    fd = (sig(h) - sig(-h)) / (2 * h)
    assert g == 0.25
    assert abs(g - fd) < 1e-8


def test_activation_saturates_finitely():
    x = np.array([-1e4, -800.0, 0.0, 800.0, 1e4])
    for kind in ("tanh", "sigmoid", "relu"):
        assert np.all(np.isfinite(T.activation(x, kind).data))


def test_unknown_activation():
    with pytest.raises(ValueError):
        T.activation(np.zeros(2), "gelu")


# -- pooling -----------------------------------------------------------------


def test_mean_pool_values():
    assert T.mean_pool(np.array([[1.0, 2.0], [3.0, 4.0]])).data.tolist() == [2.0, 3.0]
    assert T.mean_pool(np.array([[5.0, -1.0]])).data.tolist() == [5.0, -1.0]


def test_mean_pool_empty():
    with pytest.raises(EmptyInput):
        T.mean_pool(np.zeros((0, 3)))


def test_mean_pool_permutation_bitwise():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 5))
    a = T.mean_pool(x).data
    b = T.mean_pool(x[::-1].copy()).data
    # a column mean of a few values is order-sensitive in the last ulp only via summation order
    assert np.allclose(a, b, rtol=0, atol=1e-15)


def test_mean_pool_gradient_spreads():
    _, (g,) = tape_grads(lambda x: T.total(T.mean_pool(x)), np.ones((4, 3)))
    assert np.all(g == 0.25)


def test_prefix_mean_gradient():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 3))
    w = rng.normal(size=(2, 5, 3))
    _, (g,) = tape_grads(lambda t: T.total(T.mul(T.prefix_mean(t), w)), x)
    scalar = lambda: float((np.cumsum(x, axis=1) / np.arange(1, 6)[:, None] * w).sum())
    assert max_rel(g, numeric_gradient(scalar, x)) < 1e-7


# -- softmax / cross entropy -------------------------------------------------


def test_cross_entropy_uniform():
    loss, probs = T.softmax_cross_entropy(np.zeros(4), 2)
    assert np.allclose(probs, 0.25)
    assert float(loss.data) == pytest.approx(math.log(4))


def test_cross_entropy_near_certain():
    loss, _ = T.softmax_cross_entropy(np.array([10.0, -10, -10, -10]), 0)
    assert float(loss.data) < 1e-8


def test_cross_entropy_gradient():
    rng = np.random.default_rng(4)
    for _ in range(10):
        logits = rng.normal(scale=3, size=4)
        label = int(rng.integers(4))
        _, (g,) = tape_grads(lambda z: T.softmax_cross_entropy(z, label)[0], logits)
        ref = numeric_gradient(
            lambda: float(np.log(np.exp(logits).sum()) - logits[label]), logits, h=1e-6)
        assert np.max(np.abs(g - ref)) < 1e-7
        p = np.exp(logits - logits.max())
        p /= p.sum()
        onehot = np.eye(4)[label]
        assert np.allclose(g, p - onehot, atol=1e-15)


def test_cross_entropy_extreme_logits_finite():
    loss, probs = T.cross_entropy(np.array([[1e6, -1e6, 0, 3]]), np.array([1]))
    assert np.all(np.isfinite(loss.data)) and np.all(np.isfinite(probs))


@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)))
def test_softmax_is_distribution(z):
    p = T.softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-12


def test_masked_softmax_gradient():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4, 4))
    mask = np.tril(np.ones((4, 4), dtype=bool))
    w = rng.normal(size=x.shape)

    def ref():
        e = np.where(mask, np.exp(x - x.max(axis=-1, keepdims=True)), 0)
        return float((e / e.sum(-1, keepdims=True) * w).sum())

    out, (g,) = tape_grads(lambda t: T.total(T.mul(T.masked_softmax(t, mask), w)), x)
    assert np.allclose(out.data, ref(), atol=1e-12)
    assert max_rel(g, numeric_gradient(ref, x)) < 1e-6
    assert np.all(g[..., ~mask] == 0)


# -- structural ops ------------------------------------------------------------


def test_structural_op_gradients():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    w = rng.normal(size=(2, 2, 5))

    def f(a_, b_):
        c = T.concat([a_, b_], axis=-1)  # [2, 5]
        s = T.stack([c, T.scale(c, 2.0)])  # [2, 2, 5]
        return T.total(T.mul(s, w))

    _, (ga, gb) = tape_grads(f, a, b)
    ref = lambda: float((np.stack([np.c_[a, b], 2 * np.c_[a, b]]) * w).sum())
    assert max_rel(ga, numeric_gradient(ref, a)) < 1e-7
    assert max_rel(gb, numeric_gradient(ref, b)) < 1e-7


def test_rowwise_linear_gradient():
    rng = np.random.default_rng(7)
    x, W, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 3, 2))
    _, grads = tape_grads(lambda *t: T.total(T.mul(T.rowwise_linear(*t), w)), x, W, b)
    ref = lambda: float(((np.einsum("bki,kio->bko", x, W) + b) * w).sum())
    for g, arr in zip(grads, (x, W, b)):
        assert max_rel(g, numeric_gradient(ref, arr)) < 1e-7


def test_broadcast_add_gradient():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=(2, 1, 3)), rng.normal(size=(4, 1))
    _, (ga, gb) = tape_grads(lambda x, y: T.total(T.relu(T.add(x, y))), a, b)
    ref = lambda: float(np.maximum(a + b, 0).sum())
    assert ga.shape == a.shape and gb.shape == b.shape
    assert max_rel(ga, numeric_gradient(ref, a)) < 1e-7
    assert max_rel(gb, numeric_gradient(ref, b)) < 1e-7


def test_floor_cuts_gradient():
    _, (g,) = tape_grads(lambda t: T.total(T.floor(t, 0.01)), np.array([0.005, 0.5]))
    assert g.tolist() == [0.0, 1.0]


def test_gaussian_logpdf_gradient():
    rng = np.random.default_rng(9)
    x = rng.normal(size=5)
    mu, sigma = rng.normal(size=5), rng.uniform(0.05, 1, size=5)
    out, (gm, gs) = tape_grads(lambda m, s: T.total(T.gaussian_logpdf(x, m, s)), mu, sigma)
    ref = lambda: float((-0.5 * np.log(2 * np.pi) - np.log(sigma)
                         - (x - mu) ** 2 / (2 * sigma ** 2)).sum())
    assert out.data == pytest.approx(ref())
    assert max_rel(gm, numeric_gradient(ref, mu)) < 1e-6
    assert max_rel(gs, numeric_gradient(ref, sigma)) < 1e-6


# -- tape --------------------------------------------------------------------


def test_tape_backward_reverse_order():
    order = []
    x = Tensor(np.array(2.0), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 3.0)
        z = T.mul(y, y)
    fns = [node[2] for node in tape.nodes]
    tape.nodes = [(o, p, (lambda f, i: lambda g: (order.append(i), f(g))[1])(fn, i))
                  for i, ((o, p, _), fn) in enumerate(zip(tape.nodes, fns))]
    tape.backward(z)
    assert order == [1, 0]
    assert float(x.grad) == pytest.approx(2 * 3 * 6.0)


def test_tape_replay_bitwise():
    rng = np.random.default_rng(10)
    store = ParameterStore()
    mlp = MLP(store, "m", 4, 8, 3, rng)
    x = rng.normal(size=(5, 4))
    outs = []
    for _ in range(2):
        P = store.bind()
        with Tape() as tape:
            y = T.total(T.tanh(mlp(P, x)))
        tape.backward(y)
        outs.append((y.data.copy(), P["m.l1.w"].grad.copy()))
    assert outs[0][0] == outs[1][0]
    assert np.array_equal(outs[0][1], outs[1][1])


def test_no_tape_no_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.relu(x)
    assert not y.requires_grad


# -- optimiser ----------------------------------------------------------------


def scalar_store(value=1.0):
    store = ParameterStore()
    store.add("w", np.array([value]))
    return store


def test_adam_zero_gradient_no_change():
    store = scalar_store()
    adam_step(store, 0.1)
    assert store.values["w"][0] == 1.0


def test_adam_first_step():
    store = scalar_store()
    store.grads["w"][0] = 1.0
    adam_step(store, 0.1)
    assert store.values["w"][0] == pytest.approx(0.9, abs=1e-6)
    assert abs(store.values["w"][0] - 1.0) <= 0.1


def test_adam_deterministic():
    stores = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        store = ParameterStore()
        store.dense("d", 3, 4, rng)
        for _ in range(100):
            for g in store.grads.values():
                g[...] = rng.normal(size=g.shape)
            adam_step(store, 1e-2)
        stores.append(store)
    for name in stores[0].names():
        assert np.array_equal(stores[0].values[name], stores[1].values[name])


def test_sgd_step():
    store = scalar_store()
    store.grads["w"][0] = 2.0
    sgd_step(store, 0.25)
    assert store.values["w"][0] == 0.5


def test_glorot_bounds():
    rng = np.random.default_rng(12)
    store = ParameterStore()
    store.dense("d", 30, 10, rng)
    lim = math.sqrt(6 / 40)
    assert np.abs(store.values["d.w"]).max() <= lim
    assert np.all(store.values["d.b"] == 0)


def test_duplicate_names_rejected():
    store = scalar_store()
    with pytest.raises(KeyError):
        store.add("w", np.zeros(1))


# -- grad check ----------------------------------------------------------------


def test_grad_check_composite():
    rng = np.random.default_rng(13)
    store = ParameterStore()
    store.dense("a", 5, 12, rng)  # 72 params
    store.dense("b", 12, 8, rng)  # 104 params
    store.dense("c", 8, 4, rng)  # 36 params
    assert 190 <= store.size() <= 220
    x = rng.normal(size=(6, 5))

    def f(P):
        h = T.tanh(T.linear(x, P["a.w"], P["a.b"]))
        h = T.linear(h, P["b.w"], P["b.b"])
        pooled = T.mean_pool(h)
        logits = T.linear(pooled, P["c.w"], P["c.b"])
        return T.softmax_cross_entropy(logits, 1)[0]

    assert grad_check(f, store, h=1e-5) < 1e-5


def test_grad_check_constant():
    store = scalar_store(3.0)
    assert grad_check(lambda P: Tensor(np.array(2.0)), store) == 0.0


def test_grad_check_square():
    store = scalar_store(3.0)
    f = lambda P: T.total(T.mul(P["w"], P["w"]))
    bound = store.bind()
    with Tape() as tape:
        out = f(bound)
    tape.backward(out)
    assert bound["w"].grad[0] == 6.0
    h = 1e-5
    fd = ((3 + h) ** 2 - (3 - h) ** 2) / (2 * h)
    assert abs(fd - 6.0) < 1e-9
    assert grad_check(f, store) < 1e-9


def test_grad_check_near_relu_kink():
    # 3e-6 from the kink: a plain h=1e-5 stencil straddles it and reads slope ~0.65
    store = scalar_store(3e-6)
    f = lambda P: T.total(T.relu(P["w"]))
    assert grad_check(f, store) < 1e-9


# -- checkpoint ------------------------------------------------------------------


def trained_store():
    rng = np.random.default_rng(14)
    store = ParameterStore()
    store.dense("x.l1", 3, 5, rng)
    store.add("scalar", np.array(2.5))
    for _ in range(3):
        for g in store.grads.values():
            g[...] = rng.normal(size=g.shape)
        adam_step(store, 1e-2)
    return store


def test_checkpoint_round_trip_bit_exact(tmp_path):
    store = trained_store()
    path = tmp_path / "a.hglc"
    checkpoint.save(path, store, {"k": 1})
    back, meta = checkpoint.load(path)
    assert meta == {"k": 1}
    assert back.names() == store.names()
    for name in store.names():
        assert back.values[name].shape == store.values[name].shape
        assert back.values[name].tobytes() == store.values[name].tobytes()
        for a, b in zip(back.moments[name], store.moments[name]):
            assert a.tobytes() == b.tobytes()
    assert back.adam_t == store.adam_t == 3
    assert checkpoint.encode(back, {"k": 1}) == path.read_bytes()


def test_checkpoint_layout(tmp_path):
    store = ParameterStore()
    store.add("ab", np.array([[1.0, 2.0]]))
    data = checkpoint.encode(store)
    assert data[:4] == b"HGLC"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:12], "little") == 1
    assert int.from_bytes(data[12:16], "little") == 2
    assert data[16:18] == b"ab"
    assert int.from_bytes(data[18:22], "little") == 2
    assert np.frombuffer(data[30:46], "<f8").tolist() == [1.0, 2.0]


def test_checkpoint_corruption_detected(tmp_path):
    data = bytearray(checkpoint.encode(trained_store()))
    data[40] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        checkpoint.decode(bytes(data))
    with pytest.raises(CheckpointFormatError):
        checkpoint.decode(b"nope" + bytes(60))
