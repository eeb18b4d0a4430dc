"""Dice and cross-entropy segmentation losses with analytic gradients.

Logits are ``[K, H, W]`` or batched ``[B, K, H, W]``; sums run over every
non-class axis, so a batch is scored as one large image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import EmptyDomainList, ShapeMismatch


def _class_axis(logits):
    return 0 if logits.ndim == 3 else 1


def _one_hot(target, k, axis):
    oh = np.eye(k)[target]  # class axis last
    return np.moveaxis(oh, -1, axis)


def _check(logits, target):
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target).astype(np.intp)
    axis = _class_axis(logits)
    expected = logits.shape[:axis] + logits.shape[axis + 1:]
    if target.shape != expected:
        raise ShapeMismatch(f"target {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= logits.shape[axis]):
        raise ShapeMismatch("target class index outside logits' class axis")
    return logits, target, axis


def softmax_backward(p, grad_p, axis):
    return p * (grad_p - np.sum(p * grad_p, axis=axis, keepdims=True))


def dice_loss(logits, target, smooth=1.0, include_background=True):
    """Soft multi-class Dice loss ``1 - mean_k dice_k`` on softmax probabilities."""
    if not smooth > 0:
        raise ValueError("smooth must be positive")
    logits, target, axis = _check(logits, target)
    k = logits.shape[axis]
    p = softmax(logits, axis=axis)
    t = _one_hot(target, k, axis)
    red = tuple(i for i in range(logits.ndim) if i != axis)
    inter = np.sum(p * t, axis=red)
    psum = np.sum(p, axis=red)
    tsum = np.sum(t, axis=red)
    den = psum + tsum + smooth
    dice = (2.0 * inter + smooth) / den
    classes = np.arange(k) if include_background else np.arange(1, k)
    loss = 1.0 - float(np.mean(dice[classes]))
    shape = [1] * logits.ndim
    shape[axis] = k
    w = np.zeros(k)
    w[classes] = -1.0 / classes.size
    a = (w * 2.0 / den).reshape(shape)
    b = (w * (2.0 * inter + smooth) / den ** 2).reshape(shape)
    grad_p = a * t - b
    return loss, softmax_backward(p, grad_p, axis)


def ce_loss(logits, target):
    """Pixel-averaged softmax cross entropy; gradient is ``(softmax - onehot) / P``."""
    logits, target, axis = _check(logits, target)
    k = logits.shape[axis]
    logp = log_softmax(logits, axis=axis)
    t = _one_hot(target, k, axis)
    npix = target.size
    loss = -float(np.sum(logp * t)) / npix
    return loss, (np.exp(logp) - t) / npix


@dataclass
class LossReport:
    seg_s: float
    seg_t: float
    contrast: float
    total: float
    per_domain: list = field(default_factory=list)

    def to_dict(self):
        return {
            "seg_s": self.seg_s,
            "seg_t": self.seg_t,
            "contrast": self.contrast,
            "total": self.total,
            "per_domain": [list(map(float, d)) for d in self.per_domain],
        }


def total_loss(per_domain, contrast_weight=1.0):
    """Average over domains of ``seg_s + seg_t + contrast_weight * contrast``."""
    per_domain = [tuple(map(float, terms)) for terms in per_domain]
    if not per_domain:
        raise EmptyDomainList("total_loss needs at least one domain")
    d = len(per_domain)
    seg_s = sum(t[0] for t in per_domain) / d
    seg_t = sum(t[1] for t in per_domain) / d
    contrast = sum(t[2] for t in per_domain) / d
    total = sum(t[0] + t[1] + contrast_weight * t[2] for t in per_domain) / d
    return LossReport(seg_s, seg_t, contrast, total, per_domain)
