"""Single-level orthonormal Haar DWT and gated high-frequency fusion.

Sub-band naming: the first letter is the filter along the width axis, the
second along the height axis. For ``[[1, 2], [3, 4]]`` this gives
``LL=5, LH=-2, HL=-1, HH=0``.

All transforms act on the last two axes, so ``[C, H, W]`` and ``[B, C, H, W]``
inputs both work.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._conv import conv2d_backward, conv2d_forward
from .exceptions import ShapeMismatch, ZeroSpatialDim

BANDS = ("lh", "hl", "hh")
_R2 = np.sqrt(0.5)


@dataclass
class WaveletPyramid:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    pad: tuple = (0, 0)

    def __post_init__(self):
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise ShapeMismatch(f"sub-bands disagree in shape: {shapes}")

    def band(self, name):
        return getattr(self, name)

    def energy(self):
        return sum(float(np.sum(b * b)) for b in (self.ll, self.lh, self.hl, self.hh))


def _pad_even(x):
    h, w = x.shape[-2:]
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return x, (0, 0)
    width = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(x, width, mode=mode), (ph, pw)


def _pad_even_adjoint(g, shape, pad):
    """Adjoint of :func:`_pad_even` (folds the padded row/column back)."""
    ph, pw = pad
    h, w = shape[-2:]
    g = g.copy()
    reflect = min(h, w) > 1
    if pw:
        src = w - 2 if reflect else w - 1
        g[..., :, src] += g[..., :, w]
        g = g[..., :, :w]
    if ph:
        src = h - 2 if reflect else h - 1
        g[..., src, :] += g[..., h, :]
        g = g[..., :h, :]
    return g


def _analysis(x):
    a, b = x[..., :, 0::2], x[..., :, 1::2]
    lo_w, hi_w = (a + b) * _R2, (a - b) * _R2
    ll = (lo_w[..., 0::2, :] + lo_w[..., 1::2, :]) * _R2
    lh = (lo_w[..., 0::2, :] - lo_w[..., 1::2, :]) * _R2
    hl = (hi_w[..., 0::2, :] + hi_w[..., 1::2, :]) * _R2
    hh = (hi_w[..., 0::2, :] - hi_w[..., 1::2, :]) * _R2
    return ll, lh, hl, hh


def _synthesis(ll, lh, hl, hh):
    *lead, h2, w2 = ll.shape
    lo_w = np.empty((*lead, 2 * h2, w2))
    hi_w = np.empty((*lead, 2 * h2, w2))
    lo_w[..., 0::2, :] = (ll + lh) * _R2
    lo_w[..., 1::2, :] = (ll - lh) * _R2
    hi_w[..., 0::2, :] = (hl + hh) * _R2
    hi_w[..., 1::2, :] = (hl - hh) * _R2
    x = np.empty((*lead, 2 * h2, 2 * w2))
    x[..., 0::2] = (lo_w + hi_w) * _R2
    x[..., 1::2] = (lo_w - hi_w) * _R2
    return x


def dwt2(x):
    """Haar analysis of ``x``; odd sizes are reflect-padded by one row/column."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or 0 in x.shape[-2:]:
        raise ZeroSpatialDim(f"cannot transform shape {x.shape}")
    xp, pad = _pad_even(x)
    return WaveletPyramid(*_analysis(xp), pad=pad)


def idwt2(p):
    """Exact inverse of :func:`dwt2`, cropping any padding it recorded."""
    x = _synthesis(p.ll, p.lh, p.hl, p.hh)
    ph, pw = p.pad
    h, w = x.shape[-2:]
    return x[..., :h - ph, :w - pw]


def _dwt2_adjoint(p, shape):
    # orthonormal analysis: adjoint is synthesis, then fold the padding
    return _pad_even_adjoint(_synthesis(p.ll, p.lh, p.hl, p.hh), shape, p.pad)


def _idwt2_adjoint(g, pad):
    ph, pw = pad
    if ph or pw:
        width = [(0, 0)] * (g.ndim - 2) + [(0, ph), (0, pw)]
        g = np.pad(g, width)
    return _analysis(g)


@dataclass
class GateParams:
    """3x3 convolution mapping ``[tgt, src]`` (2C channels) to a C-channel gate."""

    kernel: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, channels):
        return cls(np.zeros((channels, 2 * channels, 3, 3)), np.zeros(channels))


def init_gates(channels):
    return {band: GateParams.zeros(channels) for band in BANDS}


def _as_batch(x):
    return (x[None], True) if x.ndim == 3 else (x, False)


def _fuse_band(tgt, src, gate):
    t, squeeze = _as_batch(tgt)
    s, _ = _as_batch(src)
    z, cache = conv2d_forward(np.concatenate([t, s], axis=1), gate.kernel, gate.bias)
    sig = expit(z)
    out = t + s * sig
    return (out[0] if squeeze else out), (t, s, sig, cache, squeeze)


def _fuse_band_backward(g, saved):
    t, s, sig, cache, squeeze = saved
    g, _ = _as_batch(g)
    dz = g * s * sig * (1.0 - sig)
    dcat, dk, db = conv2d_backward(dz, cache)
    c = t.shape[1]
    dt = g + dcat[:, :c]
    ds = g * sig + dcat[:, c:]
    if squeeze:
        dt, ds = dt[0], ds[0]
    return dt, ds, GateParams(dk, db)


def wesp_fuse(src, tgt, gates):
    """Inject the source pyramid's high-frequency bands into the target's.

    ``LL`` is taken from ``tgt``; each of LH/HL/HH becomes
    ``tgt + src * sigmoid(conv3x3([tgt, src]))`` with its own gate.
    """
    if src.ll.shape != tgt.ll.shape:
        raise ShapeMismatch(f"pyramids differ: {src.ll.shape} vs {tgt.ll.shape}")
    fused = {band: _fuse_band(tgt.band(band), src.band(band), gates[band])[0] for band in BANDS}
    return WaveletPyramid(tgt.ll, pad=tgt.pad, **fused)


def wesp_apply(f_src, f_styled, gates):
    """Structure-preserving fusion in feature space.

    Returns the fused tensor and a backward closure mapping an upstream
    gradient to ``(d_src, d_styled, d_gates)``.
    """
    f_src = np.asarray(f_src, dtype=np.float64)
    f_styled = np.asarray(f_styled, dtype=np.float64)
    if f_src.shape != f_styled.shape:
        raise ShapeMismatch(f"source {f_src.shape} vs styled {f_styled.shape}")
    ps, pt = dwt2(f_src), dwt2(f_styled)
    fused, saved = {}, {}
    for band in BANDS:
        fused[band], saved[band] = _fuse_band(pt.band(band), ps.band(band), gates[band])
    out = idwt2(WaveletPyramid(pt.ll, pad=pt.pad, **fused))

    def backward(grad_out):
        g_ll, *g_hf = _idwt2_adjoint(np.asarray(grad_out, dtype=np.float64), pt.pad)
        g_src = {"ll": np.zeros_like(g_ll)}
        g_tgt = {"ll": g_ll}
        d_gates = {}
        for band, g in zip(BANDS, g_hf):
            g_tgt[band], g_src[band], d_gates[band] = _fuse_band_backward(g, saved[band])
        d_src = _dwt2_adjoint(WaveletPyramid(pad=ps.pad, **g_src), f_src.shape)
        d_styled = _dwt2_adjoint(WaveletPyramid(pad=pt.pad, **g_tgt), f_styled.shape)
        return d_src, d_styled, d_gates

    return out, backward
