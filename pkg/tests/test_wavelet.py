import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probdg.exceptions import ShapeMismatch, ZeroSpatialDim
from probdg.gradcheck import finite_difference, rel_error
from probdg.tensor_io import make_rng
from probdg.verify import WAVELET_SHAPES, haar_matrix_oracle
from probdg.wavelet import (
    BANDS,
    GateParams,
    WaveletPyramid,
    dwt2,
    idwt2,
    init_gates,
    wesp_apply,
    wesp_fuse,
)


def test_constant_image():
    p = dwt2(np.full((1, 2, 2), 3.0))
    assert p.ll[0, 0, 0] == pytest.approx(6.0)
    assert p.lh[0, 0, 0] == 0 and p.hl[0, 0, 0] == 0 and p.hh[0, 0, 0] == 0


def test_hand_example_and_matrix_oracle(rng):
    p = dwt2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    got = [p.ll.item(), p.lh.item(), p.hl.item(), p.hh.item()]
    np.testing.assert_allclose(got, [5.0, -2.0, -1.0, 0.0], atol=1e-14)
    for _ in range(10):
        x = rng.standard_normal((6, 8))
        ref = haar_matrix_oracle(x)
        p = dwt2(x[None])
        for band, r in zip((p.ll, p.lh, p.hl, p.hh), ref):
            np.testing.assert_allclose(band[0], r, atol=1e-14)


@pytest.mark.parametrize("shape", WAVELET_SHAPES)
def test_perfect_reconstruction(shape, rng):
    x = rng.standard_normal(shape)
    assert np.abs(idwt2(dwt2(x)) - x).max() < 1e-12


def test_energy_and_linearity(rng):
    x, y = rng.standard_normal((2, 3, 8, 8))
    p = dwt2(x)
    assert abs(np.sum(x * x) - p.energy()) / np.sum(x * x) < 1e-10
    q = dwt2(2.5 * x - 0.7 * y)
    py = dwt2(y)
    for band in ("ll", "lh", "hl", "hh"):
        np.testing.assert_allclose(q.band(band), 2.5 * p.band(band) - 0.7 * py.band(band), atol=1e-12)


def test_inverse_of_zero_and_constant():
    z = np.zeros((2, 3, 3))
    assert np.array_equal(idwt2(WaveletPyramid(z, z, z, z)), np.zeros((2, 6, 6)))
    ll = np.array([[[2.0 * 1.5]]])
    zero = np.zeros_like(ll)
    np.testing.assert_allclose(idwt2(WaveletPyramid(ll, zero, zero, zero)), np.full((1, 2, 2), 1.5))


def test_batched_input_matches_per_sample(rng):
    x = rng.standard_normal((3, 2, 6, 4))
    p = dwt2(x)
    for i in range(3):
        np.testing.assert_array_equal(p.hl[i], dwt2(x[i]).hl)


def test_errors():
    with pytest.raises(ZeroSpatialDim):
        dwt2(np.zeros((1, 0, 4)))
    with pytest.raises(ShapeMismatch):
        WaveletPyramid(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 3)), np.zeros((1, 2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_reconstruction_property(c, h, w, seed):
    x = make_rng(seed).standard_normal((c, h, w))
    assert np.abs(idwt2(dwt2(x)) - x).max() < 1e-12


def test_zero_gates_average_in_half_of_source(rng):
    src = dwt2(rng.standard_normal((2, 8, 8)))
    tgt = dwt2(rng.standard_normal((2, 8, 8)))
    fused = wesp_fuse(src, tgt, init_gates(2))
    assert np.array_equal(fused.ll, tgt.ll)
    for band in BANDS:
        np.testing.assert_allclose(fused.band(band), tgt.band(band) + 0.5 * src.band(band), atol=1e-15)
    same = wesp_fuse(tgt, tgt, init_gates(2))
    for band in BANDS:
        np.testing.assert_allclose(same.band(band), 1.5 * tgt.band(band), atol=1e-15)


def test_zero_source_high_bands_leave_target(rng):
    tgt = dwt2(rng.standard_normal((2, 6, 6)))
    ll = rng.standard_normal((2, 3, 3))
    z = np.zeros_like(ll)
    src = WaveletPyramid(ll, z, z, z)
    gates = {b: GateParams(rng.standard_normal((2, 4, 3, 3)), rng.standard_normal(2)) for b in BANDS}
    fused = wesp_fuse(src, tgt, gates)
    for band in ("ll",) + BANDS:
        np.testing.assert_array_equal(fused.band(band), tgt.band(band))


def test_closed_gates_return_styled(rng):
    f = rng.standard_normal((2, 6, 6))
    gates = {b: GateParams(np.zeros((2, 4, 3, 3)), np.full(2, -40.0)) for b in BANDS}
    out, _ = wesp_apply(f, f, gates)
    assert np.abs(out - f).max() < 1e-6


def test_constant_source_keeps_styled_high_frequencies(rng):
    f_sty = rng.standard_normal((1, 8, 8))
    gates = {b: GateParams(rng.standard_normal((1, 2, 3, 3)), rng.standard_normal(1)) for b in BANDS}
    out, _ = wesp_apply(np.full((1, 8, 8), 0.3), f_sty, gates)
    po, ps = dwt2(out), dwt2(f_sty)
    for band in ("ll",) + BANDS:
        np.testing.assert_allclose(po.band(band), ps.band(band), atol=1e-12)


def test_low_band_untouched_and_gate_bounded(rng):
    for _ in range(20):
        f_src, f_sty = rng.standard_normal((2, 3, 8, 8))
        gates = {b: GateParams(rng.standard_normal((3, 6, 3, 3)), rng.standard_normal(3)) for b in BANDS}
        out, _ = wesp_apply(f_src, f_sty, gates)
        po, ps, pt = dwt2(out), dwt2(f_src), dwt2(f_sty)
        assert np.abs(po.ll - pt.ll).max() < 1e-10
        for band in BANDS:
            assert np.linalg.norm(po.band(band) - pt.band(band)) <= np.linalg.norm(ps.band(band)) + 1e-12


def test_zero_init_fusion_moves_toward_source(rng):
    for _ in range(20):
        f_src, f_sty = rng.standard_normal((2, 2, 8, 8))
        out, _ = wesp_apply(f_src, f_sty, init_gates(2))
        po, ps, pt = dwt2(out), dwt2(f_src), dwt2(f_sty)
        for band in BANDS:
            s = ps.band(band).ravel()
            before = np.corrcoef(s, pt.band(band).ravel())[0, 1]
            after = np.corrcoef(s, po.band(band).ravel())[0, 1]
            assert after >= before


@pytest.mark.parametrize("shape", [(2, 4, 4), (2, 5, 3), (2, 3, 4, 4)])
def test_wesp_backward_finite_differences(shape, rng):
    c = shape[-3]
    f_src, f_sty, w = (rng.standard_normal(shape) for _ in range(3))
    gates = {b: GateParams(rng.standard_normal((c, 2 * c, 3, 3)) * 0.5, rng.standard_normal(c) * 0.5)
             for b in BANDS}

    def scalar():
        return float(np.sum(w * wesp_apply(f_src, f_sty, gates)[0]))

    _, back = wesp_apply(f_src, f_sty, gates)
    d_src, d_sty, d_gates = back(w)
    assert rel_error(d_src, finite_difference(scalar, f_src)) < 1e-6
    assert rel_error(d_sty, finite_difference(scalar, f_sty)) < 1e-6
    for b in BANDS:
        assert rel_error(d_gates[b].kernel, finite_difference(scalar, gates[b].kernel)) < 1e-6
        assert rel_error(d_gates[b].bias, finite_difference(scalar, gates[b].bias)) < 1e-6
