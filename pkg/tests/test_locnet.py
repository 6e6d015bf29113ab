import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hglance import locnet
from hglance.errors import OrderViolation, SigmaTooSmall
from hglance.locnet import LocationNet, conditioning, xi_mu, xi_sigma
from hglance.nn import ParameterStore, Tape, grad_check
from hglance.nn import tensor as T

from oracles import five_point, log_normal

D_REP = 8


@pytest.fixture(scope="module")
def net():
    store = ParameterStore()
    return store, LocationNet(store, np.random.default_rng(0), d_rep=D_REP, hidden=10)


def zero_store():
    store = ParameterStore()
    net = LocationNet(store, np.random.default_rng(0), d_rep=D_REP, hidden=10)
    for v in store.values.values():
        v[...] = 0.0
    return store, net


# -- xi closed forms -------------------------------------------------------------


def test_xi_examples():
    assert xi_mu(0.3, 0.3, 0.2) == 0.0
    assert xi_mu(0.5, 0.0, 1.0) == 0.5
    assert xi_sigma(0.1, 0.1, 0.5) == -2.0
    assert xi_sigma(0.7, 0.4, 0.3) == pytest.approx(0.0, abs=1e-12)


def test_xi_sigma_floor():
    with pytest.raises(SigmaTooSmall):
        xi_mu(0, 0, 0.001)
    with pytest.raises(SigmaTooSmall):
        xi_sigma(0, 0, 0.005)


def test_xi_against_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        mu = rng.uniform(-1, 1)
        sigma = rng.uniform(0.01, 1)
        x = mu + sigma * rng.normal()
        # fourth-order stencil with a step scaled to sigma keeps both truncation
        # and round-off well under the bound even at sigma = 0.01
        h = 1e-3 * sigma
        d_mu = five_point(lambda m: log_normal(x, m, sigma), mu, h)
        d_sigma = five_point(lambda s: log_normal(x, mu, s), sigma, h)
        assert abs(xi_mu(x, mu, sigma) - d_mu) < 1e-7
        assert abs(xi_sigma(x, mu, sigma) - d_sigma) < 1e-7


# -- masking -------------------------------------------------------------------


def test_masked_input_first_component():
    cond = np.arange(D_REP, dtype=float)
    inp = LocationNet.masked_input(cond, np.array([0.4, 0.1, 0.2, 0.3]), 0).data
    assert np.array_equal(inp[:D_REP], cond)
    assert np.all(inp[D_REP:] == 0)


def test_masked_input_last_component():
    inp = LocationNet.masked_input(np.zeros(D_REP), np.array([0.4, 0.1, 0.2, 0.3]), 3).data
    assert inp[D_REP:D_REP + 4].tolist() == [0.4, 0.1, 0.2, 0.0]
    assert inp[D_REP + 4:].tolist() == [1, 1, 1, 0]


def test_masked_slots_bitwise_invariant(net):
    store, ln = net
    rng = np.random.default_rng(2)
    rep = rng.normal(size=(3, D_REP))
    fixed = rng.uniform(-1, 1, size=4)
    for c in range(4):
        ref = ln.predict_params(store.values, rep, list(fixed[:c]) + [0.0] * (4 - c), c)
        for fill in (np.nan, 1e6, -0.3):
            part = list(fixed[:c]) + [fill] * (4 - c)
            assert ln.predict_params(store.values, rep, part, c) == ref


def test_batched_heads_masking_bitwise(net):
    store, ln = net
    rng = np.random.default_rng(3)
    cond = rng.normal(size=(5, D_REP))
    acts = rng.uniform(-1, 1, size=(5, 4))
    mu, sigma = ln.distribution(store.values, cond, acts)
    for c in range(4):
        noisy = acts.copy()
        noisy[:, c:] = rng.normal(size=noisy[:, c:].shape) * 100
        mu2, sigma2 = ln.distribution(store.values, cond, noisy)
        assert np.array_equal(mu.data[:, c], mu2.data[:, c])
        assert np.array_equal(sigma.data[:, c], sigma2.data[:, c])


def test_order_violation(net):
    store, ln = net
    rep = np.zeros((1, D_REP))
    with pytest.raises(OrderViolation):
        ln.predict_params(store.values, rep, [0.1, 0.2], 1)
    with pytest.raises(OrderViolation):
        ln.predict_params(store.values, rep, [0.1, None, 0.0, 0.0], 2)
    ln.predict_params(store.values, rep, [0.1], 1)


def test_component_names(net):
    store, ln = net
    rep = np.zeros((1, D_REP))
    assert ln.predict_params(store.values, rep, [], "py") == ln.predict_params(store.values, rep, [], 0)


# -- parameters and sampling -------------------------------------------------------


@given(st.floats(-5, 5), st.integers(0, 3))
def test_param_ranges(scale, c):
    store = ParameterStore()
    ln = LocationNet(store, np.random.default_rng(4), d_rep=D_REP, hidden=10)
    rep = np.full((2, D_REP), scale)
    mu, sigma = ln.predict_params(store.values, rep, [0.5] * c, c)
    assert -1 < mu < 1 and 0.01 <= sigma < 1
    assert (mu, sigma) == ln.predict_params(store.values, rep, [0.5] * c, c)


@given(st.floats(-1e6, 1e6), st.integers(0, 3))
def test_param_ranges_saturated(scale, c):
    # far out, tanh and sigmoid round to exactly 1.0 in float64
    store = ParameterStore()
    ln = LocationNet(store, np.random.default_rng(4), d_rep=D_REP, hidden=10)
    mu, sigma = ln.predict_params(store.values, np.full((2, D_REP), scale), [0.5] * c, c)
    assert -1 <= mu <= 1 and 0.01 <= sigma <= 1
    assert np.isfinite(mu) and np.isfinite(sigma)


def test_zero_weights():
    store, ln = zero_store()
    for c in range(4):
        assert ln.predict_params(store.values, np.ones((2, D_REP)), [0.2] * c, c) == (0.0, 0.5)


def test_fixed_start_policy():
    store = ParameterStore()
    ln = LocationNet(store, np.random.default_rng(0), d_rep=D_REP, hidden=8,
                     init_mu=(0.0, 0.0, 0.0, 0.8), init_sigma=0.2)
    rng = np.random.default_rng(1)
    for c in range(4):
        mu, sigma = ln.predict_params(store.values, rng.normal(size=(3, D_REP)), [0.3] * c, c)
        assert mu == pytest.approx((0.0, 0.0, 0.0, 0.8)[c], abs=1e-15)
        assert sigma == pytest.approx(0.2, abs=1e-15)


def test_fixed_start_policy_ranges():
    with pytest.raises(ValueError):
        LocationNet(ParameterStore(), np.random.default_rng(0), init_mu=(0, 0, 0, 1.0))
    with pytest.raises(ValueError):
        LocationNet(ParameterStore(), np.random.default_rng(0), init_sigma=0.005)


def test_first_probe_conditioning_is_zero():
    rep = np.arange(12, dtype=float).reshape(3, 4)
    cond = conditioning(rep).data
    assert np.all(cond[0] == 0)
    assert np.array_equal(cond[2], rep[:2].mean(axis=0))
    assert np.array_equal(locnet.pooled(rep[:0], 4), np.zeros(4))


def force(store, mu, sigma):
    """Zero weights with biases that produce constant ``mu`` and ``sigma``."""
    for c in locnet.COMPONENTS:
        store.values[f"locnet.{c}.mu.b"][:] = np.arctanh(mu)
        store.values[f"locnet.{c}.sigma.b"][:] = np.log(sigma / (1 - sigma)) if sigma > 0.01 else -50


def test_sigma_floor_tail_bound():
    store, ln = zero_store()
    force(store, 0.0, 0.0)
    rng = np.random.default_rng(5)
    cond = np.zeros((20_000, D_REP))
    out = ln.sample(store.values, cond, rng.standard_normal((20_000, 4)))
    assert np.all(out["sigma"] == 0.01)
    assert np.mean(np.abs(out["action"]) <= 0.05, axis=0).min() > 0.99


def test_monte_carlo_moments():
    store, ln = zero_store()
    force(store, 0.3, 0.2)
    rng = np.random.default_rng(6)
    out = ln.sample(store.values, np.zeros((10_000, D_REP)), rng.standard_normal((10_000, 4)))
    # moments of the raw, unclipped draws
    py = out["raw"][:, 0]
    assert abs(py.mean() - 0.3) < 0.01
    assert abs(py.std() - 0.2) < 0.01


def test_sample_action_deterministic(net):
    store, ln = net
    rep = np.random.default_rng(7).normal(size=(2, D_REP))
    a = ln.sample_action(store.values, rep, np.random.default_rng(8))
    b = ln.sample_action(store.values, rep, np.random.default_rng(8))
    for key in a:
        assert np.array_equal(a[key], b[key])
    assert np.all(np.abs(a["action"]) <= 1)


def test_sample_conditions_on_earlier_components(net):
    store, ln = net
    cond = np.zeros((1, D_REP))
    noise = np.zeros((1, 4))
    out = ln.sample(store.values, cond, noise)
    mu, _ = ln.distribution(store.values, cond, out["action"])
    assert np.array_equal(mu.data, out["mu"])


def test_greedy_returns_mu(net):
    store, ln = net
    out = ln.sample(store.values, np.ones((3, D_REP)), np.ones((3, 4)) * 5, greedy=True)
    assert np.array_equal(out["raw"], out["mu"])


# -- chain rule ------------------------------------------------------------------


def test_surrogate_gradient_matches_finite_differences(net):
    store, ln = net
    rng = np.random.default_rng(9)
    cond = rng.normal(size=(6, D_REP))
    raw = rng.uniform(-1.2, 1.2, size=(6, 4))
    actions = np.clip(raw, -1, 1)
    adv = rng.normal(size=6)

    def f(P):
        logp, _, _ = ln.log_prob(P, cond, actions, raw)
        return T.total(T.mul(logp, adv))

    assert grad_check(f, store) < 1e-4


def test_log_prob_backward_uses_xi(net):
    store, ln = net
    rng = np.random.default_rng(10)
    cond = rng.normal(size=(1, D_REP))
    raw = rng.uniform(-1, 1, size=(1, 4))
    mu = T.Tensor(np.array([[0.1, -0.2, 0.3, 0.4]]), requires_grad=True)
    sigma = T.Tensor(np.array([[0.5, 0.2, 0.3, 0.9]]), requires_grad=True)
    with Tape() as tape:
        out = T.total(T.gaussian_logpdf(raw, mu, sigma))
    tape.backward(out)
    for c in range(4):
        x, m, s = raw[0, c], mu.data[0, c], sigma.data[0, c]
        assert mu.grad[0, c] == pytest.approx(xi_mu(x, m, s), rel=1e-12)
        assert sigma.grad[0, c] == pytest.approx(xi_sigma(x, m, s), rel=1e-12, abs=1e-12)
