import numpy as np
import pytest

from probdg.exceptions import ShapeMismatch
from probdg.gradcheck import finite_difference, rel_error
from probdg.net import SgdConfig, SgdState, TinyNet, poly_lr, sgd_step
from probdg.tensor_io import make_rng


def _net(rng, slope=0.01, in_ch=3):
    net = TinyNet.init(rng, in_ch=in_ch, num_classes=3, slope=slope)
    for k in ("stem_b", "block_b", "head_b"):
        net.params[k] = rng.standard_normal(net.params[k].shape) * 0.1
    return net


def test_shapes(rng):
    net = TinyNet.init(rng, in_ch=3, num_classes=3)
    feats, logits, _ = net.forward(rng.standard_normal((1, 3, 32, 32)))
    assert feats.shape == (1, 8, 16, 16)
    assert logits.shape == (1, 3, 32, 32)


def test_zero_weights_zero_logits(rng):
    net = TinyNet.init(rng, in_ch=1)
    net.params = {k: np.zeros_like(v) for k, v in net.params.items()}
    _, logits, _ = net.forward(rng.standard_normal((2, 1, 8, 8)))
    assert np.all(logits == 0)


def test_superposition_with_identity_activation(rng):
    net = TinyNet.init(rng, in_ch=2, slope=1.0)
    a, b = rng.standard_normal((2, 1, 2, 8, 8))
    la = net.forward(a)[1]
    lb = net.forward(b)[1]
    lab = net.forward(2.0 * a - 3.0 * b)[1]
    np.testing.assert_allclose(lab, 2.0 * la - 3.0 * lb, atol=1e-12)


def test_backward_finite_differences():
    rng = make_rng(4)
    net = _net(rng, in_ch=2)
    x = rng.standard_normal((2, 2, 6, 6))
    g_logit = rng.standard_normal((2, 3, 6, 6))
    g_feat = rng.standard_normal((2, 8, 3, 3))

    def scalar():
        f, lg, _ = net.forward(x)
        return float(np.sum(lg * g_logit) + np.sum(f * g_feat))

    _, _, cache = net.forward(x)
    grads = net.backward(cache, g_logit, g_feat)
    for name, p in net.params.items():
        assert rel_error(grads[name], finite_difference(scalar, p)) < 1e-5, name


def test_zero_upstream_and_additivity(rng):
    net = _net(rng)
    x = rng.standard_normal((1, 3, 8, 8))
    _, _, cache = net.forward(x)
    zero = net.backward(cache, np.zeros((1, 3, 8, 8)), np.zeros((1, 8, 4, 4)))
    assert all(np.all(g == 0) for g in zero.values())
    ga, gb = rng.standard_normal((2, 1, 3, 8, 8))
    fa, fb = rng.standard_normal((2, 1, 8, 4, 4))
    a = net.backward(cache, ga, fa)
    b = net.backward(cache, gb, fb)
    ab = net.backward(cache, ga + gb, fa + fb)
    for k in ab:
        np.testing.assert_allclose(ab[k], a[k] + b[k], atol=1e-12)


def test_input_and_cache_validation(rng):
    net = TinyNet.init(rng, in_ch=1)
    with pytest.raises(ShapeMismatch):
        net.forward(rng.standard_normal((1, 2, 8, 8)))
    with pytest.raises(ShapeMismatch):
        net.backward({}, None, None)


def test_sgd_plain_step():
    params = {"w": np.array([1.0, 2.0])}
    sgd_step(params, {"w": np.array([0.5, -1.0])}, SgdConfig(lr=1.0, momentum=0.0), SgdState(), 10)
    np.testing.assert_array_equal(params["w"], [0.5, 3.0])


def test_sgd_zero_grad_decays_momentum():
    cfg = SgdConfig(lr=0.1, momentum=0.5)
    state = SgdState(velocity={"w": np.array([2.0])})
    params = {"w": np.array([1.0])}
    sgd_step(params, {"w": np.array([0.0])}, cfg, state, 10)
    assert state.velocity["w"][0] == 1.0
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 1.0)
    params = {"w": np.array([1.0])}
    sgd_step(params, {"w": np.array([0.0])}, cfg, SgdState(), 10)
    assert params["w"][0] == 1.0


def test_sgd_two_steps_scalar_trace():
    cfg = SgdConfig(lr=0.3, momentum=0.9, power=0.9)
    total = 4
    p, v = 2.0, 0.0
    expected = []
    for t, g in enumerate([0.5, -0.25]):
        v = 0.9 * v + g
        p = p - 0.3 * (1 - t / total) ** 0.9 * v
        expected.append(p)
    params, state = {"w": np.array([2.0])}, SgdState()
    for g, want in zip([0.5, -0.25], expected):
        sgd_step(params, {"w": np.array([g])}, cfg, state, total)
        assert params["w"][0] == want
    assert poly_lr(1.0, 0, 10) == 1.0 and poly_lr(1.0, 10, 10) == 0.0
