"""Feature-statistics style perturbation.

Each channel is standardised with its own spatial mean/std and re-styled with
a sampled (mean, std) pair drawn from U(0, 1), optionally interpolated with
the original statistics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DegenerateSpatial


@dataclass(frozen=True)
class StyleConfig:
    perturb_prob: float = 0.5
    eps: float = 1e-6
    mix: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ConfigError("perturb_prob must lie in [0, 1]")
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigError("mix must lie in [0, 1]")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")


@dataclass
class StyleDraw:
    """Random choices for one sample; fixing it makes the transform deterministic."""

    apply: bool
    mean: np.ndarray
    std: np.ndarray


def sample_style(channels, cfg, rng):
    apply = bool(rng.random() < cfg.perturb_prob)
    mean = rng.uniform(0.0, 1.0, size=channels)
    std = rng.uniform(0.0, 1.0, size=channels)
    return StyleDraw(apply, mean, std)


def _stats(x):
    hw = x.shape[-1] * x.shape[-2]
    if hw < 2:
        raise DegenerateSpatial(f"need at least 2 spatial positions, got {hw}")
    m = x.mean(axis=(-2, -1), keepdims=True)
    s = np.sqrt(((x - m) ** 2).mean(axis=(-2, -1), keepdims=True))
    return m, s


def apply_style(x, draw, cfg):
    """Re-style ``x`` of shape ``[C, H, W]`` with a fixed draw."""
    x = np.asarray(x, dtype=np.float64)
    m, s = _stats(x)
    if not draw.apply:
        return x.copy()
    lam = cfg.mix
    tm = draw.mean[:, None, None]
    ts = draw.std[:, None, None]
    # max() rather than s + eps keeps lam=0 an exact identity
    scale = (lam * ts + (1.0 - lam) * s) / np.maximum(s, cfg.eps)
    shift = lam * tm + (1.0 - lam) * m
    return (x - m) * scale + shift


def apply_style_backward(x, draw, cfg, grad_out):
    """Gradient of :func:`apply_style` w.r.t. ``x`` (statistics included)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if not draw.apply:
        return grad_out.copy()
    x = np.asarray(x, dtype=np.float64)
    m, s = _stats(x)
    n = x.shape[-1] * x.shape[-2]
    lam = cfg.mix
    ts = draw.std[:, None, None]
    target = lam * ts + (1.0 - lam) * s
    denom = np.maximum(s, cfg.eps)
    r = target / denom
    live = s > cfg.eps
    dr_ds = np.where(live, ((1.0 - lam) * denom - target) / denom**2, (1.0 - lam) / denom)
    centred = x - m
    g_mean = grad_out.mean(axis=(-2, -1), keepdims=True)
    g_dot = (grad_out * centred).sum(axis=(-2, -1), keepdims=True)
    safe_s = np.where(s > 0, s, 1.0)
    ds_term = np.where(s > 0, g_dot * dr_ds * centred / (n * safe_s), 0.0)
    return grad_out * r - r * g_mean + ds_term + (1.0 - lam) * g_mean


def style_perturb(x, cfg, rng):
    """Randomly re-style ``x``; with probability ``1 - perturb_prob`` return it unchanged."""
    x = np.asarray(x, dtype=np.float64)
    _stats(x)
    return apply_style(x, sample_style(x.shape[0], cfg, rng), cfg)
