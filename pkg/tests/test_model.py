import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from p4sim import model as mdl
from oracles import central_fd, naive_distill_loss, rel_err

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def random_instance(rng, C=None, d=None, n=None):
    C = C or int(rng.integers(2, 6))
    d = d or int(rng.integers(1, 21))
    n = n or int(rng.integers(1, 6))
    theta = mdl.LinearModel(C, d, rng.normal(size=C * d + C))
    phi = mdl.LinearModel(C, d, rng.normal(size=C * d + C))
    x = rng.normal(size=(n, d))
    y = rng.integers(0, C, size=n)
    return theta, phi, x, y


# -- known answers -----------------------------------------------------------

def test_forward_zero_model_is_uniform():
    m = mdl.LinearModel.zeros(10, 3)
    np.testing.assert_allclose(mdl.forward(m, np.ones(3)), np.full(10, 0.1))


def test_softmax_known_value():
    np.testing.assert_allclose(mdl.softmax(np.array([math.log(3), 0.0])), [0.75, 0.25])


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        mdl.forward(mdl.LinearModel.zeros(3, 4), np.ones(5))


def test_cross_entropy_values():
    assert mdl.cross_entropy(np.full(10, 0.1), 7) == pytest.approx(2.302585, abs=1e-6)
    assert mdl.cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert mdl.cross_entropy(np.array([0.75, 0.25]), 1) == pytest.approx(1.386294, abs=1e-6)
    # clamped rather than infinite
    assert mdl.cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        mdl.cross_entropy(np.array([0.5, 0.5]), 2)


def test_kl_values():
    assert mdl.kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert mdl.kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.143841, abs=1e-6)
    with pytest.raises(ValueError):
        mdl.kl_divergence([0.5, 0.5], [1.0])


def test_sgd_step_arithmetic():
    m = mdl.LinearModel(1, 1, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(mdl.sgd_step(m, np.array([1.0, -1.0]), 1.0).params, [0.0, 3.0])
    assert mdl.sgd_step(m, np.zeros(2), 0.7).params.tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        mdl.sgd_step(m, np.zeros(3), 1.0)


def test_two_steps_equal_one_double_step():
    rng = np.random.default_rng(0)
    m = mdl.LinearModel(3, 2, rng.normal(size=9))
    g = rng.normal(size=9)
    twice = mdl.sgd_step(mdl.sgd_step(m, g, 0.25), g, 0.25)
    np.testing.assert_allclose(twice.params, mdl.sgd_step(m, g, 0.5).params, atol=1e-15)


def test_flatten_roundtrip_and_layout():
    W = np.arange(6.0).reshape(2, 3)
    m = mdl.LinearModel.from_parts(W, [7.0, 8.0])
    assert m.n_params == 8
    np.testing.assert_array_equal(m.flatten(), [0, 1, 2, 3, 4, 5, 7, 8])
    back = m.unflatten(m.flatten())
    np.testing.assert_array_equal(back.weights, W)
    with pytest.raises(ValueError):
        mdl.LinearModel(2, 3, np.zeros(7))
    with pytest.raises(ValueError):
        mdl.LinearModel(1, 1, np.array([np.nan, 0.0]))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        mdl.LossWeights(alpha=1.5)
    with pytest.raises(ValueError):
        mdl.LossWeights(temperature=0.0)


def test_empty_batch_rejected():
    m = mdl.LinearModel.zeros(2, 2)
    with pytest.raises(ValueError):
        mdl.proxy_loss_grad(m, m, np.zeros((0, 2)), np.zeros(0, dtype=int), mdl.LossWeights())


# -- gradients against finite differences ------------------------------------

def test_loss_matches_naive_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        theta, phi, x, y = random_instance(rng)
        lw = mdl.LossWeights(alpha=float(rng.uniform()), beta=float(rng.uniform()),
                             temperature=float(rng.uniform(0.5, 3)))
        C, d = theta.num_classes, theta.dim
        ref = naive_distill_loss(theta.params, phi.params, C, d, x, y, lw.alpha, lw.temperature)
        assert mdl.proxy_loss(theta, phi, x, y, lw) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("temperature", [1.0, 2.5])
def test_proxy_grad_finite_differences(temperature):
    rng = np.random.default_rng(2)
    for _ in range(15):
        theta, phi, x, y = random_instance(rng)
        lw = mdl.LossWeights(alpha=float(rng.uniform()), temperature=temperature)
        per_sample = mdl.proxy_loss_grad(theta, phi, x, y, lw)
        assert per_sample.shape == (len(y), theta.n_params)
        fd = central_fd(lambda p: mdl.proxy_loss(theta.unflatten(p), phi, x, y, lw), theta.params)
        assert rel_err(per_sample.mean(axis=0), fd) < 1e-4
        # each row is the gradient of its own sample's loss
        i = int(rng.integers(len(y)))
        fd_i = central_fd(lambda p: mdl.proxy_loss(theta.unflatten(p), phi, x[i:i + 1], y[i:i + 1], lw),
                          theta.params)
        assert rel_err(per_sample[i], fd_i) < 1e-4


def test_local_grad_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(15):
        theta, phi, x, y = random_instance(rng)
        lw = mdl.LossWeights(beta=float(rng.uniform()))
        g = mdl.local_loss_grad(phi, theta, x, y, lw)
        fd = central_fd(lambda p: mdl.local_loss(phi.unflatten(p), theta, x, y, lw), phi.params)
        assert rel_err(g, fd) < 1e-4


def test_pure_kl_at_equal_models():
    rng = np.random.default_rng(4)
    theta, _, x, y = random_instance(rng, C=4, d=5, n=3)
    lw = mdl.LossWeights(alpha=1.0, beta=1.0)
    assert mdl.proxy_loss(theta, theta, x, y, lw) == pytest.approx(0.0, abs=1e-12)
    g = mdl.proxy_loss_grad(theta, theta, x, y, lw).mean(axis=0)
    fd = central_fd(lambda p: mdl.proxy_loss(theta.unflatten(p), theta, x, y, lw), theta.params)
    # KL has a minimum at p = q, so both vanish
    assert np.abs(g).max() < 1e-12 and np.abs(fd).max() < 1e-8
    gl = mdl.local_loss_grad(theta, theta, x, y, lw)
    assert np.abs(gl).max() < 1e-12


def test_alpha_zero_is_cross_entropy():
    rng = np.random.default_rng(5)
    theta, phi, x, y = random_instance(rng)
    a = mdl.proxy_loss_grad(theta, phi, x, y, mdl.LossWeights(alpha=0.0))
    b = mdl.proxy_loss_grad(theta, theta.unflatten(np.zeros(theta.n_params)), x, y,
                            mdl.LossWeights(alpha=0.0))
    np.testing.assert_array_equal(a, b)
    c = mdl.local_loss_grad(phi, theta, x, y, mdl.LossWeights(beta=0.0))
    np.testing.assert_allclose(c, mdl.proxy_loss_grad(phi, theta, x, y, mdl.LossWeights(alpha=0.0)).mean(0),
                               atol=1e-14)


# -- properties --------------------------------------------------------------

@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e4, 1e4)))
def test_softmax_is_a_distribution(z):
    p = mdl.softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9


@given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(mdl.softmax(z + c), mdl.softmax(z), atol=1e-12)


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_kl_nonnegative(a, b):
    p, q = mdl.softmax(a), mdl.softmax(b)
    assert mdl.kl_divergence(p, q) >= -1e-12
    assert mdl.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_bias_shift_leaves_forward_unchanged(C, d, seed):
    rng = np.random.default_rng(seed)
    m = mdl.LinearModel(C, d, rng.normal(size=C * d + C))
    shifted = m.unflatten(np.concatenate([m.params[:C * d], m.params[C * d:] + 3.7]))
    x = rng.normal(size=(4, d))
    np.testing.assert_allclose(mdl.forward(shifted, x), mdl.forward(m, x), atol=1e-12)
