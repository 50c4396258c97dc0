import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmcnn.nn import (
    Adam,
    Conv1D,
    Dense,
    Flatten,
    MaxPool2,
    MissingCacheError,
    ReLU,
    Tensor,
    grad_check,
    softmax,
    softmax_cross_entropy,
)


def naive_conv(x, W, b):
    B, C, L = x.shape
    F, _, k = W.shape
    out = np.zeros((B, F, L - k + 1))
    for n in range(B):
        for f in range(F):
            for t in range(L - k + 1):
                acc = b[f]
                for c in range(C):
                    for j in range(k):
                        acc += W[f, c, j] * x[n, c, t + j]
                out[n, f, t] = acc
    return out


def layer_check(layer, x, h=1e-6):
    """Grad-check a layer on loss = sum(out * R) for a fixed random R."""
    rng = np.random.default_rng(0)
    out = layer.forward(x)
    R = rng.normal(size=out.shape)
    for p in layer.params():
        p.zero_grad()
    dx = layer.backward(R)

    def loss():
        return float(np.sum(layer.forward(x) * R))

    arrays = [x] + [p.data for p in layer.params()]
    analytic = [dx] + [p.grad.copy() for p in layer.params()]
    return grad_check(loss, arrays, analytic, h=h)


def test_conv_output_length():
    conv = Conv1D(4, 50, 8, np.random.default_rng(0))
    assert conv.forward(np.zeros((1, 4, 128))).shape == (1, 50, 121)


def test_conv_identity_kernel():
    conv = Conv1D(1, 1, 8)
    conv.W.data[0, 0, 0] = 1.0
    x = np.random.default_rng(1).normal(size=(1, 1, 128))
    np.testing.assert_array_equal(conv.forward(x)[0, 0], x[0, 0, :121])


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(2)
    conv = Conv1D(2, 3, 4, rng)
    conv.b.data[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 12))
    np.testing.assert_allclose(conv.forward(x), naive_conv(x, conv.W.data, conv.b.data), atol=1e-12)


def test_conv_shape_errors():
    conv = Conv1D(2, 3, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 3, 12)))
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 2, 3)))


@pytest.mark.parametrize("make,shape", [
    (lambda r: Conv1D(2, 3, 4, r), (2, 2, 12)),
    (lambda r: Dense(6, 4, r), (3, 6)),
    (lambda r: MaxPool2(), (2, 3, 9)),
    (lambda r: ReLU(), (3, 7)),
    (lambda r: Flatten(), (2, 3, 4)),
])
def test_layer_gradients(make, shape):
    rng = np.random.default_rng(3)
    layer = make(rng)
    x = rng.normal(size=shape)
    rep = layer_check(layer, x)
    assert rep.max_rel_error < 1e-5, rep


def test_dense_gradient_tight():
    rng = np.random.default_rng(4)
    rep = layer_check(Dense(5, 3, rng), rng.normal(size=(4, 5)))
    assert rep.max_rel_error < 1e-7


def test_relu_backward_zeroes_negative():
    r = ReLU()
    x = np.array([[-2.0, -0.1, 0.5, 3.0]])
    r.forward(x)
    np.testing.assert_array_equal(r.backward(np.ones_like(x)), [[0, 0, 1, 1]])


def test_softmax_xent_gradient_closed_form():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(1, 8))
    loss, p, d = softmax_cross_entropy(z, np.array([3]))
    onehot = np.eye(8)[3]
    np.testing.assert_array_equal(d[0], p[0] - onehot)
    assert loss == pytest.approx(-np.log(p[0, 3]), abs=1e-14)


def test_softmax_xent_grad_check():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(4, 5))
    y = np.array([0, 4, 2, 2])
    _, _, d = softmax_cross_entropy(z, y)
    rep = grad_check(lambda: softmax_cross_entropy(z, y)[0], [z], [d])
    assert rep.max_rel_error < 1e-7


def test_uniform_prediction_loss_is_log_c():
    for c in (2, 8, 11):
        loss, _, _ = softmax_cross_entropy(np.zeros((3, c)), np.zeros(3, dtype=int))
        assert loss == pytest.approx(np.log(c), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_positive_and_normalized(z):
    p = softmax(z)
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_maxpool_examples():
    mp = MaxPool2()
    np.testing.assert_array_equal(mp.forward(np.array([[[1.0, 3, 2, 5]]])), [[[3, 5]]])
    assert mp.forward(np.zeros((1, 1, 121))).shape == (1, 1, 60)
    np.testing.assert_array_equal(mp.forward(np.full((2, 3, 10), 7.0)), np.full((2, 3, 5), 7.0))


def test_maxpool_tie_goes_to_first_index():
    mp = MaxPool2()
    mp.forward(np.array([[[2.0, 2.0, 1.0, 1.0, 9.0]]]))
    np.testing.assert_array_equal(mp.backward(np.array([[[1.0, 1.0]]])), [[[1, 0, 1, 0, 0]]])


def test_backward_without_forward():
    with pytest.raises(MissingCacheError):
        Dense(2, 2, np.random.default_rng(0)).backward(np.zeros((1, 2)))


def _quadratic_adam(lr, g=None, steps=1, x0=1.0):
    x = Tensor(np.array([x0]))
    opt = Adam([x], lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        x.grad[:] = 2 * x.data if g is None else g
        opt.step()
    return x.data[0]


def test_adam_zero_gradient_no_move():
    x = Tensor(np.array([1.5, -2.0]))
    opt = Adam([x])
    for _ in range(10):
        opt.zero_grad()
        opt.step()
    np.testing.assert_array_equal(x.data, [1.5, -2.0])


@pytest.mark.parametrize("g", [3.0, -0.02])
def test_adam_first_step_is_lr(g):
    assert _quadratic_adam(1e-3, g=g, x0=0.0) == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


def test_adam_converges_on_square():
    assert abs(_quadratic_adam(0.1, steps=500)) < 1e-3


def test_grad_check_flags_corruption():
    rng = np.random.default_rng(7)
    layer = Dense(4, 3, rng)
    x = rng.normal(size=(2, 4))
    R = rng.normal(size=(2, 3))
    layer.forward(x)
    layer.backward(R)
    good = layer.W.grad.copy()
    bad = good.copy()
    bad.flat[5] += 1e-3

    def loss():
        return float(np.sum(layer.forward(x) * R))

    assert grad_check(loss, [layer.W.data], [good]).passed
    rep = grad_check(loss, [layer.W.data], [bad])
    assert not rep.passed
    assert rep.worst == (0, 5)


def test_five_point_stencil_is_exact_on_quartics():
    # the five-point rule cancels through the h^4 term, so a degree-4 polynomial has no truncation error
    x = np.array([0.7, -1.3])

    def loss():
        return float(np.sum(x ** 4 - 2 * x ** 3))

    analytic = 4 * x ** 3 - 6 * x ** 2
    rep = grad_check(loss, [x], [analytic], h=1e-2, stencil=4)
    assert rep.max_rel_error < 1e-10
    assert not grad_check(loss, [x], [analytic], h=1e-2).passed
    with pytest.raises(ValueError):
        grad_check(loss, [x], [analytic], stencil=3)
