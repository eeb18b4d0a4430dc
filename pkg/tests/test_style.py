import numpy as np
import pytest

from probdg.exceptions import ConfigError, DegenerateSpatial
from probdg.gradcheck import finite_difference, rel_error
from probdg.style import StyleConfig, StyleDraw, apply_style, apply_style_backward, sample_style, style_perturb
from probdg.tensor_io import make_rng


def test_mix_zero_is_identity(rng):
    x = rng.standard_normal((3, 8, 8)) * 2 + 1
    out = style_perturb(x, StyleConfig(perturb_prob=1.0, mix=0.0), rng)
    assert np.abs(out - x).max() < 1e-12


def test_full_replacement_hits_sampled_statistics(rng):
    x = rng.standard_normal((4, 16, 16)) * 3 - 2
    cfg = StyleConfig(perturb_prob=1.0, mix=1.0, eps=1e-6)
    draw = sample_style(4, cfg, rng)
    out = apply_style(x, draw, cfg)
    np.testing.assert_allclose(out.mean(axis=(1, 2)), draw.mean, atol=1e-9)
    np.testing.assert_allclose(out.std(axis=(1, 2)), draw.std, atol=1e-9)


def test_constant_channel_no_nan(rng):
    x = np.full((2, 4, 4), 0.7)
    cfg = StyleConfig(perturb_prob=1.0, mix=0.6)
    draw = StyleDraw(True, np.array([0.2, 0.9]), np.array([0.5, 0.5]))
    out = apply_style(x, draw, cfg)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[0], 0.6 * 0.2 + 0.4 * 0.7)
    np.testing.assert_allclose(out[1], 0.6 * 0.9 + 0.4 * 0.7)


def test_rank_preserved(rng):
    x = rng.standard_normal((2, 5, 5))
    out = style_perturb(x, StyleConfig(perturb_prob=1.0, mix=0.5), rng)
    for c in range(2):
        assert np.array_equal(np.argsort(x[c].ravel()), np.argsort(out[c].ravel()))


def test_probability_zero_and_determinism(rng):
    x = rng.standard_normal((2, 4, 4))
    assert np.array_equal(style_perturb(x, StyleConfig(perturb_prob=0.0), rng), x)
    a = style_perturb(x, StyleConfig(perturb_prob=0.5), make_rng(5))
    b = style_perturb(x, StyleConfig(perturb_prob=0.5), make_rng(5))
    assert np.array_equal(a, b)


def test_errors():
    with pytest.raises(DegenerateSpatial):
        style_perturb(np.zeros((1, 1, 1)), StyleConfig(), make_rng(0))
    with pytest.raises(ConfigError):
        StyleConfig(mix=1.5)
    with pytest.raises(ConfigError):
        StyleConfig(perturb_prob=-0.1)


@pytest.mark.parametrize("mix", [0.0, 0.4, 1.0])
def test_backward_finite_differences(mix, rng):
    x = rng.standard_normal((3, 5, 4))
    w = rng.standard_normal((3, 5, 4))
    cfg = StyleConfig(perturb_prob=1.0, mix=mix)
    draw = StyleDraw(True, rng.uniform(0, 1, 3), rng.uniform(0.1, 1, 3))
    grad = apply_style_backward(x, draw, cfg, w)
    num = finite_difference(lambda: float(np.sum(w * apply_style(x, draw, cfg))), x)
    assert rel_error(grad, num) < 1e-6
