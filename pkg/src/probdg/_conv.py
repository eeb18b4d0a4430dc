"""Batched 2-D convolution with explicit backward, via im2col."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, weight, bias, stride=1, pad=1):
    """``x`` is ``[B, Cin, H, W]``, ``weight`` is ``[Cout, Cin, kh, kw]``.

    Returns the output ``[B, Cout, Ho, Wo]`` and a cache for :func:`conv2d_backward`.
    """
    b, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, weight, stride, pad, ho, wo)
    return np.ascontiguousarray(out), cache


def conv2d_backward(grad_out, cache, need_input=True):
    """Gradients w.r.t. input, weight and bias."""
    cols, xshape, weight, stride, pad, ho, wo = cache
    b, cin, h, w = xshape
    cout, _, kh, kw = weight.shape
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    dweight = (g2.T @ cols).reshape(weight.shape)
    dbias = g2.sum(axis=0)
    if not need_input:
        return None, dweight, dbias
    w_khw = weight.transpose(2, 3, 1, 0).reshape(-1, cout)
    dcols = (g2 @ w_khw.T).reshape(b, ho, wo, kh, kw, cin)
    dcols = np.ascontiguousarray(dcols.transpose(3, 4, 0, 5, 1, 2))
    dxp = np.zeros((b, cin, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return np.ascontiguousarray(dx), dweight, dbias
