"""A three-stage convolutional segmenter with hand-written backward passes.

stem   : 3x3 conv (in_ch -> stem_ch) + leaky rectifier, full resolution
block  : 3x3 stride-2 conv (stem_ch -> feat_ch) + leaky rectifier -> feature map
head   : 1x1 conv (feat_ch -> K), then 2x nearest upsampling -> logits

Stages are exposed separately because the training step inserts the style
perturbation and wavelet fusion between stem and block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._conv import conv2d_backward, conv2d_forward
from .exceptions import ConfigError, ShapeMismatch

PARAM_NAMES = ("stem_w", "stem_b", "block_w", "block_b", "head_w", "head_b")


@dataclass
class TinyNet:
    in_ch: int = 1
    num_classes: int = 3
    stem_ch: int = 8
    feat_ch: int = 8
    slope: float = 0.01
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, rng, in_ch=1, num_classes=3, stem_ch=8, feat_ch=8, slope=0.01):
        """He-style fan-in scaled Gaussian weights, zero biases."""
        def he(shape):
            fan_in = int(np.prod(shape[1:]))
            return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

        params = {
            "stem_w": he((stem_ch, in_ch, 3, 3)),
            "stem_b": np.zeros(stem_ch),
            "block_w": he((feat_ch, stem_ch, 3, 3)),
            "block_b": np.zeros(feat_ch),
            "head_w": he((num_classes, feat_ch, 1, 1)),
            "head_b": np.zeros(num_classes),
        }
        return cls(in_ch, num_classes, stem_ch, feat_ch, slope, params)

    def _act(self, z):
        return np.where(z > 0, z, self.slope * z)

    def _act_grad(self, z, g):
        return np.where(z > 0, g, self.slope * g)

    def stem(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"expected [B, {self.in_ch}, H, W], got {x.shape}")
        z, cache = conv2d_forward(x, self.params["stem_w"], self.params["stem_b"])
        return self._act(z), (z, cache)

    def stem_backward(self, saved, g):
        z, cache = saved
        _, dw, db = conv2d_backward(self._act_grad(z, g), cache, need_input=False)
        return {"stem_w": dw, "stem_b": db}

    def block(self, h):
        z, cache = conv2d_forward(h, self.params["block_w"], self.params["block_b"], stride=2)
        return self._act(z), (z, cache)

    def block_backward(self, saved, g):
        z, cache = saved
        dh, dw, db = conv2d_backward(self._act_grad(z, g), cache)
        return dh, {"block_w": dw, "block_b": db}

    def head(self, feats):
        low, cache = conv2d_forward(feats, self.params["head_w"], self.params["head_b"], pad=0)
        return low.repeat(2, axis=2).repeat(2, axis=3), cache

    def head_backward(self, cache, g):
        b, k, h, w = g.shape
        g_low = g.reshape(b, k, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
        dfeat, dw, db = conv2d_backward(g_low, cache)
        return dfeat, {"head_w": dw, "head_b": db}

    def forward(self, x):
        """Return ``(features, logits, cache)`` for ``x`` of shape ``[B, in_ch, H, W]``."""
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ShapeMismatch("spatial dims must be even")
        h, c_stem = self.stem(x)
        feats, c_block = self.block(h)
        logits, c_head = self.head(feats)
        return feats, logits, {"stem": c_stem, "block": c_block, "head": c_head,
                               "shape": x.shape}

    def backward(self, cache, grad_logits=None, grad_features=None):
        """Parameter gradients given upstream gradients on logits and/or features."""
        if cache.get("shape") is None:
            raise ShapeMismatch("cache does not come from TinyNet.forward")
        b, _, hh, ww = cache["shape"]
        fshape = (b, self.feat_ch, hh // 2, ww // 2)
        g_feat = np.zeros(fshape) if grad_features is None else np.asarray(grad_features, dtype=np.float64)
        if g_feat.shape != fshape:
            raise ShapeMismatch(f"feature gradient {g_feat.shape} != {fshape}")
        grads = {}
        if grad_logits is not None:
            g_head, head_grads = self.head_backward(cache["head"], np.asarray(grad_logits, dtype=np.float64))
            grads.update(head_grads)
            g_feat = g_feat + g_head
        else:
            grads["head_w"] = np.zeros_like(self.params["head_w"])
            grads["head_b"] = np.zeros_like(self.params["head_b"])
        g_h, block_grads = self.block_backward(cache["block"], g_feat)
        grads.update(block_grads)
        grads.update(self.stem_backward(cache["stem"], g_h))
        return grads

    def predict(self, x, batch_size=64):
        out = []
        for i in range(0, len(x), batch_size):
            _, logits, _ = self.forward(x[i:i + batch_size])
            out.append(np.argmax(logits, axis=1))
        return np.concatenate(out)


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    power: float = 0.9

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


@dataclass
class SgdState:
    velocity: dict = field(default_factory=dict)
    step: int = 0


def poly_lr(lr, step, total_steps, power=0.9):
    return lr * (1.0 - step / total_steps) ** power


def sgd_step(params, grads, cfg, state, total_steps):
    """Momentum SGD with polynomial learning-rate decay; updates ``params`` in place."""
    lr_t = poly_lr(cfg.lr, state.step, total_steps, cfg.power)
    for name, g in grads.items():
        p = params[name]
        if np.shape(g) != np.shape(p):
            raise ShapeMismatch(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(p)}")
        v = state.velocity.get(name)
        v = g.copy() if v is None else cfg.momentum * v + g
        state.velocity[name] = v
        params[name] = p - lr_t * v
    state.step += 1
    return params
