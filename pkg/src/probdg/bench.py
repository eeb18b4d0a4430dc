"""Synthetic multi-domain segmentation benchmark and its metrics.

Every domain renders the same nested-ellipse task (background, outer ring,
inner core) through its own intensity offset, contrast, texture and noise,
standing in for images from different scanners.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, ShapeMismatch
from .net import SgdConfig
from .pipeline import ABLATIONS, ablation_config, train
from .style import StyleConfig
from .tensor_io import make_rng

NUM_CLASSES = 3
CLASS_BASE = np.array([-0.5, 0.05, 0.55])
UNDEFINED = math.nan


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    intensity_offset: float = 0.0
    contrast_scale: float = 1.0
    noise_sigma: float = 0.05
    texture_freq: float = 0.1
    texture_amp: float = 0.1

    def __post_init__(self):
        if not self.contrast_scale > 0:
            raise ConfigError("contrast_scale must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


DEFAULT_DOMAINS = (
    DomainSpec(0, intensity_offset=0.0, contrast_scale=1.0, noise_sigma=0.05, texture_freq=0.08),
    DomainSpec(1, intensity_offset=0.3, contrast_scale=0.55, noise_sigma=0.08, texture_freq=0.2),
    DomainSpec(2, intensity_offset=-0.25, contrast_scale=1.4, noise_sigma=0.03, texture_freq=0.05),
    DomainSpec(3, intensity_offset=0.15, contrast_scale=0.8, noise_sigma=0.12, texture_freq=0.3),
)


def _ellipse(yy, xx, cy, cx, a, b, theta):
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def render_labels(size, rng):
    """Nested ellipses: the core shares centre and orientation with the ring, scaled by < 1."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy, cx = rng.uniform(0.38, 0.62, size=2) * size
    a, b = rng.uniform(0.2, 0.34, size=2) * size
    theta = rng.uniform(0.0, np.pi)
    inner = rng.uniform(0.4, 0.7)
    labels = np.zeros((size, size), dtype=np.int64)
    labels[_ellipse(yy, xx, cy, cx, a, b, theta)] = 1
    labels[_ellipse(yy, xx, cy, cx, a * inner, b * inner, theta)] = 2
    return labels


def render_image(labels, spec, rng):
    size = labels.shape[0]
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    img = spec.contrast_scale * CLASS_BASE[labels] + spec.intensity_offset
    if spec.texture_amp:
        phi, phase = rng.uniform(0.0, 2 * np.pi, size=2)
        proj = xx * np.cos(phi) + yy * np.sin(phi)
        img = img + spec.texture_amp * np.sin(2 * np.pi * spec.texture_freq * proj + phase)
    if spec.noise_sigma:
        img = img + spec.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(img, -1.0, 1.0)


def generate_domain(spec, n, rng, size=32):
    """``n`` samples as ``(images [n, 1, size, size], labels [n, size, size])``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    labels = np.stack([render_labels(size, rng) for _ in range(n)])
    images = np.stack([render_image(y, spec, rng) for y in labels])[:, None]
    return images, labels


def dice_metric(pred, gt, k):
    """Dice coefficient of class ``k``; 1.0 when both masks are empty."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p, g = pred == k, gt == k
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


_CROSS = ndimage.generate_binary_structure(2, 1)


def boundary(mask):
    """Mask pixels removed by one 4-connected erosion (outside counts as background)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def asd_metric(pred, gt, k):
    """Symmetric average surface distance of class ``k`` in pixels.

    Mean of the two directed mean boundary-to-boundary distances. Returns
    ``UNDEFINED`` (NaN) when either mask is empty.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    bp, bg = boundary(pred == k), boundary(gt == k)
    if not bp.any() or not bg.any():
        return UNDEFINED
    to_gt = ndimage.distance_transform_edt(~bg)
    to_pred = ndimage.distance_transform_edt(~bp)
    return 0.5 * (float(to_gt[bp].mean()) + float(to_pred[bg].mean()))


def evaluate(pred, gt, num_classes=NUM_CLASSES):
    """Per-class (1..K-1) Dice and ASD averaged over samples.

    ASD ignores samples where it is undefined; their number is reported.
    """
    dice = np.zeros(num_classes - 1)
    asd = np.zeros(num_classes - 1)
    undefined = [0] * (num_classes - 1)
    for j, k in enumerate(range(1, num_classes)):
        d = [dice_metric(p, g, k) for p, g in zip(pred, gt)]
        a = [asd_metric(p, g, k) for p, g in zip(pred, gt)]
        dice[j] = np.mean(d)
        valid = [v for v in a if not math.isnan(v)]
        undefined[j] = len(a) - len(valid)
        asd[j] = np.mean(valid) if valid else UNDEFINED
    return dice, asd, undefined


@dataclass
class BenchConfig:
    domains: tuple = DEFAULT_DOMAINS
    train_per_domain: int = 200
    test_per_domain: int = 50
    image_size: int = 32
    data_seed: int = 1234
    seeds: tuple = (0, 1, 2, 3, 4)
    ablations: tuple = tuple(ABLATIONS)
    held_out: tuple = None
    epochs: int = 8
    batch_size: int = 8
    lr: float = 0.02
    momentum: float = 0.9
    tau: float = 0.5
    smooth: float = 1.0
    include_background: bool = True
    seg_weight: float = 1.0
    contrast_weight: float = 1.0
    stats_source: str = "augmented"
    query_rate: float = 1.0
    model: dict = field(default_factory=dict)
    perturb_prob: float = 0.5
    style_mix: float = 1.0
    threads: int = 1

    def __post_init__(self):
        self.domains = tuple(d if isinstance(d, DomainSpec) else DomainSpec(**d) for d in self.domains)
        if len(self.domains) < 3:
            raise ConfigError("leave-one-domain-out needs at least 3 domains")
        for name in self.ablations:
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ablations = tuple(self.ablations)
        if self.held_out is None:
            self.held_out = tuple(range(len(self.domains)))
        self.held_out = tuple(int(h) for h in self.held_out)

    def to_dict(self):
        out = asdict(self)
        out["domains"] = [asdict(d) for d in self.domains]
        for key in ("seeds", "ablations", "held_out"):
            out[key] = list(out[key])
        out.pop("threads")
        return out


def make_datasets(cfg):
    """Train/test splits for every domain, from one data seed."""
    data = []
    for spec in cfg.domains:
        rng = make_rng(cfg.data_seed * 1000 + spec.domain_id)
        train_set = generate_domain(spec, cfg.train_per_domain, rng, cfg.image_size)
        test_set = generate_domain(spec, cfg.test_per_domain, rng, cfg.image_size)
        data.append((train_set, test_set))
    return data


def _run_one(args):
    cfg, data, ablation, held_out, seed = args
    pcfg = ablation_config(ablation, tau=cfg.tau, smooth=cfg.smooth,
                           include_background=cfg.include_background,
                           seg_weight=cfg.seg_weight, contrast_weight=cfg.contrast_weight,
                           stats_source=cfg.stats_source, query_rate=cfg.query_rate,
                           style=StyleConfig(perturb_prob=cfg.perturb_prob, mix=cfg.style_mix))
    sgd = SgdConfig(lr=cfg.lr, momentum=cfg.momentum, epochs=cfg.epochs,
                    batch_size=cfg.batch_size, seed=seed)
    sources = [data[d][0] for d in range(len(data)) if d != held_out]
    net, _, _, log = train(sources, pcfg, sgd, NUM_CLASSES, model=cfg.model)
    x_t, y_t = data[held_out][1]
    dice, asd, undefined = evaluate(net.predict(x_t), y_t)
    src_x = np.concatenate([data[d][1][0] for d in range(len(data)) if d != held_out])
    src_y = np.concatenate([data[d][1][1] for d in range(len(data)) if d != held_out])
    src_dice, _, _ = evaluate(net.predict(src_x), src_y)
    return {
        "ablation": ablation,
        "held_out": held_out,
        "seed": seed,
        "dice_per_class": [float(v) for v in dice],
        "asd_per_class": [None if math.isnan(v) else float(v) for v in asd],
        "asd_undefined": undefined,
        "source_dice": float(np.mean(src_dice)),
        "final_loss": float(log[-1]["total"]),
    }


def aggregate(rows, ablations, seeds, held_out):
    """Per-ablation summaries: per-seed LODO means, their mean and std, per-domain means."""
    out = {}
    for ab in ablations:
        sub = [r for r in rows if r["ablation"] == ab]
        per_seed = []
        per_seed_src = []
        for s in seeds:
            rs = [r for r in sub if r["seed"] == s]
            per_seed.append(float(np.mean([np.mean(r["dice_per_class"]) for r in rs])))
            per_seed_src.append(float(np.mean([r["source_dice"] for r in rs])))
        per_domain = {}
        for h in held_out:
            rs = [r for r in sub if r["held_out"] == h]
            asd_vals = [v for r in rs for v in r["asd_per_class"] if v is not None]
            per_domain[str(h)] = {
                "dice": float(np.mean([np.mean(r["dice_per_class"]) for r in rs])),
                "dice_per_class": np.mean([r["dice_per_class"] for r in rs], axis=0).tolist(),
                "asd": float(np.mean(asd_vals)) if asd_vals else None,
            }
        asd_all = [v for r in sub for v in r["asd_per_class"] if v is not None]
        out[ab] = {
            "dice_per_seed": per_seed,
            "dice_mean": float(np.mean(per_seed)),
            "dice_std": float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0,
            "source_dice_per_seed": per_seed_src,
            "source_dice_mean": float(np.mean(per_seed_src)),
            "asd_mean": float(np.mean(asd_all)) if asd_all else None,
            "asd_undefined": int(sum(sum(r["asd_undefined"]) for r in sub)),
            "per_domain": per_domain,
        }
    return out


def pooled_std(a, b):
    return math.sqrt(0.5 * (a * a + b * b))


def ablation_ordering(aggs):
    """Check baseline < prl-mean < prl-cov (gaps above pooled seed std) and full >= prl-cov."""
    checks = []
    for lo, hi in (("baseline", "prl-mean"), ("prl-mean", "prl-cov")):
        if lo in aggs and hi in aggs:
            gap = aggs[hi]["dice_mean"] - aggs[lo]["dice_mean"]
            sd = pooled_std(aggs[lo]["dice_std"], aggs[hi]["dice_std"])
            checks.append({"lower": lo, "upper": hi, "gap": gap, "pooled_std": sd,
                           "pass": bool(gap > sd)})
    if "prl-cov" in aggs and "full" in aggs:
        gap = aggs["full"]["dice_mean"] - aggs["prl-cov"]["dice_mean"]
        checks.append({"lower": "prl-cov", "upper": "full", "gap": gap, "pooled_std": None,
                       "pass": bool(gap >= 0.0)})
    return checks


def run_lodo(cfg):
    """Leave-one-domain-out over every (ablation, held-out domain, seed).

    Returns a JSON-ready dict ``{config, rows, aggregates, ordering}``.
    """
    data = make_datasets(cfg)
    jobs = [(cfg, data, ab, h, s) for ab in cfg.ablations for h in cfg.held_out for s in cfg.seeds]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(job) for job in jobs]
    aggs = aggregate(rows, cfg.ablations, cfg.seeds, cfg.held_out)
    return {"config": cfg.to_dict(), "rows": rows, "aggregates": aggs,
            "ordering": ablation_ordering(aggs)}


def results_table(results):
    """Human-readable table: one row per held-out domain plus the average, per ablation."""
    lines = []
    for ab, agg in results["aggregates"].items():
        lines.append(f"[{ab}]")
        lines.append(f"{'held-out':>9} {'dice':>8} {'asd':>8}")
        for h, v in agg["per_domain"].items():
            asd = "n/a" if v["asd"] is None else f"{v['asd']:.3f}"
            lines.append(f"{h:>9} {100 * v['dice']:8.2f} {asd:>8}")
        asd = "n/a" if agg["asd_mean"] is None else f"{agg['asd_mean']:.3f}"
        lines.append(f"{'avg':>9} {100 * agg['dice_mean']:8.2f} {asd:>8}  "
                     f"(seed std {100 * agg['dice_std']:.2f})")
    return "\n".join(lines)
