import numpy as np
import pytest

from cmcnn.channel import constant_offset
from cmcnn.classifier import CNN, CNNConfig, Cascade
from cmcnn.correction import CorrectionModule, derotate, to_channels, to_complex
from cmcnn.iq import FRAME_LEN, IQFrame, modulate, random_bits
from cmcnn.nn import Adam, grad_check, softmax_cross_entropy


def random_frames(rng, B, L=FRAME_LEN):
    return to_channels(rng.normal(size=(B, L)) + 1j * rng.normal(size=(B, L)))


def trained_like_cm(K=1, ablation="both", length=FRAME_LEN, seed=0):
    """CM with a non-zero output layer so every gradient path is exercised."""
    rng = np.random.default_rng(seed)
    cm = CorrectionModule(K, hidden=6, ablation=ablation, rng=rng, length=length)
    cm.out.W.data[:] = rng.normal(scale=0.3, size=cm.out.W.data.shape)
    cm.out.b.data[:] = rng.normal(scale=0.3, size=cm.out.b.data.shape)
    return cm


def test_derotate_zero_is_identity():
    f = IQFrame(np.exp(1j * np.arange(FRAME_LEN)))
    np.testing.assert_array_equal(derotate(f, 0.0, 0.0).samples, f.samples)


def test_derotate_inverts_constant_offset():
    rng = np.random.default_rng(1)
    f = modulate("QPSK", random_bits("QPSK", rng), seed=2)
    w, p = 0.013, 2.1
    y = derotate(f.with_samples(constant_offset(f.samples, w, p)), w, p)
    np.testing.assert_allclose(y.samples, f.samples, atol=1e-12)
    np.testing.assert_allclose(np.abs(derotate(f, w, p).samples), np.abs(f.samples), atol=1e-12)


def test_derotate_round_trip_negated():
    rng = np.random.default_rng(2)
    f = IQFrame(rng.normal(size=FRAME_LEN) + 1j * rng.normal(size=FRAME_LEN))
    back = derotate(derotate(f, 0.4, -1.3), -0.4, 1.3)
    np.testing.assert_allclose(back.samples, f.samples, atol=1e-12)


def test_channel_layout_round_trip():
    z = np.random.default_rng(3).normal(size=(5, FRAME_LEN)) * (1 + 2j)
    assert to_channels(z).shape == (5, 2, FRAME_LEN)
    np.testing.assert_array_equal(to_complex(to_channels(z)), z)


def test_zero_output_layer_gives_zero_offsets():
    cm = CorrectionModule(K=2, rng=np.random.default_rng(0))
    om, ph = cm.estimate_offsets(random_frames(np.random.default_rng(4), 3))
    assert om.shape == ph.shape == (3, 2)
    assert np.all(om == 0) and np.all(ph == 0)


def test_cm_output_shape_and_passthrough():
    x = random_frames(np.random.default_rng(5), 3)
    cm = CorrectionModule(K=1, rng=np.random.default_rng(0))
    y = cm.forward(x)
    assert y.shape == (3, 4, FRAME_LEN)
    np.testing.assert_array_equal(y[:, 0:2], x)
    # zero-initialized output layer: the k=1 pair is an exact copy
    np.testing.assert_array_equal(y[:, 2:4], x)


def test_cm_k3_shape():
    cm = CorrectionModule(K=3, rng=np.random.default_rng(0))
    assert cm.forward(random_frames(np.random.default_rng(0), 2)).shape == (2, 8, FRAME_LEN)


def test_cm_channels_match_derotate():
    rng = np.random.default_rng(6)
    x = random_frames(rng, 2)
    cm = trained_like_cm()
    y = cm.forward(x)
    om, ph = cm.last_offsets
    for b in range(2):
        ref = derotate(IQFrame(to_complex(x[b])), om[b, 0], ph[b, 0]).samples
        np.testing.assert_allclose(to_complex(y[b, 2:4]), ref, atol=1e-12)


@pytest.mark.parametrize("ablation,zeroed", [("freq_only", 1), ("phase_only", 0)])
def test_ablation_masks(ablation, zeroed):
    cm = trained_like_cm(ablation=ablation)
    cm.forward(random_frames(np.random.default_rng(7), 4))
    assert np.all(cm.last_offsets[zeroed] == 0)
    assert np.all(cm.last_offsets[1 - zeroed] != 0)


def test_rejects_none_ablation():
    with pytest.raises(ValueError):
        CorrectionModule(ablation="none")


def test_offsets_lipschitz_in_input():
    rng = np.random.default_rng(8)
    cm = trained_like_cm()
    x = random_frames(rng, 1)
    base = np.concatenate(cm.estimate_offsets(x), axis=1)
    for eps in (1e-3, 1e-5):
        x2 = x.copy()
        x2[0, 0, 17] += eps
        diff = np.abs(np.concatenate(cm.estimate_offsets(x2), axis=1) - base).max()
        assert diff < 100 * eps


def _fd_offsets(cm, x, R, offsets):
    """Numeric d(sum(y*R))/d(omega, phi) with the FCN bypassed."""
    om, ph = offsets
    h = 1e-6
    out = []
    for arr in (om, ph):
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = np.sum(cm.forward(x, (om, ph)) * R)
            arr[i] = old - h
            dn = np.sum(cm.forward(x, (om, ph)) * R)
            arr[i] = old
            g[i] = (up - dn) / (2 * h)
        out.append(g)
    return out


def test_offset_partials_finite_difference():
    rng = np.random.default_rng(9)
    cm = trained_like_cm(K=2)
    x = random_frames(rng, 3)
    R = rng.normal(size=(3, 6, FRAME_LEN))
    cm.forward(x)
    om, ph = (a.copy() for a in cm.last_offsets)
    # analytic partials, one example at a time: the output-layer bias gradient
    # equals dL/d(raw output), and omega = omega_scale * raw
    analytic_om = np.zeros_like(om)
    analytic_ph = np.zeros_like(ph)
    for b in range(3):
        for p in cm.params():
            p.zero_grad()
        cm.forward(x[b:b + 1])
        cm.backward(R[b:b + 1])
        g = cm.out.b.grad
        analytic_om[b] = g[0::2] / cm.omega_scale
        analytic_ph[b] = g[1::2]
    num_om, num_ph = _fd_offsets(cm, x, R, (om, ph))
    for a, n in ((analytic_om, num_om), (analytic_ph, num_ph)):
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        assert rel.max() < 1e-6


def test_full_jacobian_on_toy_frame():
    L = 8
    rng = np.random.default_rng(10)
    cm = trained_like_cm(length=L)
    x = random_frames(rng, 1, L)
    y = cm.forward(x)
    n_out, n_in = y.size, x.size
    J_num = np.zeros((n_out, n_in))
    h = 1e-6
    for j in range(n_in):
        xp, xm = x.copy(), x.copy()
        xp.flat[j] += h
        xm.flat[j] -= h
        J_num[:, j] = (cm.forward(xp).ravel() - cm.forward(xm).ravel()) / (2 * h)
    J = np.zeros((n_out, n_in))
    for i in range(n_out):
        e = np.zeros(n_out)
        e[i] = 1.0
        cm.forward(x)
        J[i] = cm.backward(e.reshape(y.shape)).ravel()
    np.testing.assert_allclose(J, J_num, atol=1e-8)
    # the k=0 block is exactly the identity
    np.testing.assert_array_equal(J[:n_in], np.eye(n_in))


def test_zero_upstream_on_corrected_channels_gives_zero_fcn_grads():
    rng = np.random.default_rng(11)
    cm = trained_like_cm()
    x = random_frames(rng, 2)
    dy = np.zeros((2, 4, FRAME_LEN))
    dy[:, 0:2] = rng.normal(size=(2, 2, FRAME_LEN))
    for p in cm.params():
        p.zero_grad()
    cm.forward(x)
    dx = cm.backward(dy)
    for p in cm.params():
        assert np.all(p.grad == 0), p.name
    np.testing.assert_array_equal(dx, dy[:, 0:2])


def test_oracle_offsets_skip_fcn_gradients():
    rng = np.random.default_rng(12)
    cm = trained_like_cm()
    x = random_frames(rng, 2)
    for p in cm.params():
        p.zero_grad()
    cm.forward(x, (np.full(2, 0.01), np.full(2, 0.5)))
    cm.backward(rng.normal(size=(2, 4, FRAME_LEN)))
    assert all(np.all(p.grad == 0) for p in cm.params())


def tiny_cascade(seed=0):
    cfg = CNNConfig("negative", in_channels=4, filters_per_layer=2, kernel=3, dense_width=5, length=24, n_classes=3)
    return Cascade(CNN(cfg, seed), trained_like_cm(length=24, seed=seed))


def test_cascade_end_to_end_grad_check():
    rng = np.random.default_rng(13)
    model = tiny_cascade()
    x = random_frames(rng, 2, 24)
    labels = np.array([0, 2])

    def loss():
        return softmax_cross_entropy(model.forward(x), labels)[0]

    for p in model.params():
        p.zero_grad()
    _, _, d = softmax_cross_entropy(model.forward(x), labels)
    dx = model.backward(d)
    arrays = [x] + [p.data for p in model.params()]
    analytic = [dx] + [p.grad.copy() for p in model.params()]
    rep = grad_check(loss, arrays, analytic)
    assert rep.max_rel_error < 1e-4, rep


def test_initial_loss_matches_duplicated_channel_baseline():
    rng = np.random.default_rng(14)
    cfg = CNNConfig("non_negative", in_channels=4)
    x = random_frames(rng, 16)
    labels = rng.integers(0, 8, size=16)
    cascade = Cascade(CNN(cfg, seed=3), CorrectionModule(rng=np.random.default_rng(1)))
    plain = CNN(cfg, seed=3)
    dup = np.concatenate([x, x], axis=1)
    a = softmax_cross_entropy(cascade.forward(x), labels)[0]
    b = softmax_cross_entropy(plain.forward(dup), labels)[0]
    assert a == b


def test_fcn_regresses_constant_cfo():
    """Capacity check: the estimator alone can learn tone frequencies."""
    rng = np.random.default_rng(15)
    n = np.arange(FRAME_LEN)

    def batch(size):
        w = rng.uniform(0.05, 0.25, size=size)
        return to_channels(np.exp(1j * (w[:, None] * n + rng.uniform(0, 2 * np.pi, size)[:, None]))), w

    cm = CorrectionModule(K=1, hidden=80, ablation="freq_only", rng=np.random.default_rng(0))
    opt = Adam(cm.params(), lr=3e-3)
    for _ in range(1500):
        x, w = batch(64)
        opt.zero_grad()
        om, _ = cm.estimate_offsets(x)
        err = om[:, 0] - w
        dout = np.zeros((64, 2))
        dout[:, 0] = 2 * err / 64 * cm.omega_scale
        cm.hidden.backward(cm.act.backward(cm.out.backward(dout)))
        opt.step()
    x, w = batch(500)
    om, _ = cm.estimate_offsets(x)
    rel = np.abs(om[:, 0] - w) / w
    print(f"FCN tone regression: mean rel err {rel.mean():.4f}, max {rel.max():.4f}")
    assert rel.mean() < 0.10
