"""Two-branch training step and the estimator that wraps the training loop.

For each source domain the batch goes through the stem, is re-styled (and,
optionally, structure-repaired with the wavelet gates), and both branches run
through block and head. Both branches are supervised with Dice + CE on the
same labels; the source-branch feature pixels are contrasted against the
running Gaussian prototypes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .contrastive import ContrastiveConfig, contrast_loss
from .exceptions import AllPixelsUnusable, ConfigError, NonFiniteLoss, ShapeMismatch
from .losses import ce_loss, dice_loss, total_loss
from .net import SgdConfig, SgdState, TinyNet, sgd_step
from .stats import StatsBank
from .style import StyleConfig, apply_style, apply_style_backward, sample_style
from .tensor_io import label_downsample, make_rng
from .wavelet import BANDS, GateParams, init_gates, wesp_apply

PRL_MODES = ("none", "mean", "full")
STATS_SOURCES = ("augmented", "source", "both")


@dataclass(frozen=True)
class PipelineConfig:
    prl: str = "full"
    stats_source: str = "augmented"
    wesp: bool = True
    tau: float = 0.5
    smooth: float = 1.0
    include_background: bool = True
    seg_weight: float = 1.0
    contrast_weight: float = 1.0
    query_rate: float = 1.0
    min_count: int = 1
    normalize_queries: bool = False
    style: StyleConfig = field(default_factory=StyleConfig)

    def __post_init__(self):
        if self.prl not in PRL_MODES:
            raise ConfigError(f"prl must be one of {PRL_MODES}, got {self.prl!r}")
        if self.stats_source not in STATS_SOURCES:
            raise ConfigError(f"stats_source must be one of {STATS_SOURCES}")
        if not 0.0 < self.query_rate <= 1.0:
            raise ConfigError("query_rate must lie in (0, 1]")

    def contrastive(self):
        return ContrastiveConfig(tau=self.tau, min_count=self.min_count,
                                 normalize=self.normalize_queries,
                                 use_covariance=self.prl == "full")


ABLATIONS = {
    "baseline": dict(prl="none", wesp=False),
    "prl-mean": dict(prl="mean", wesp=False),
    "prl-cov": dict(prl="full", wesp=False),
    "full": dict(prl="full", wesp=True),
}


def ablation_config(name, **overrides):
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return PipelineConfig(**{**overrides, **ABLATIONS[name]})


def gate_param_dict(gates):
    return {f"gate_{band}_{part}": getattr(gates[band], part)
            for band in BANDS for part in ("kernel", "bias")}


def gates_from_dict(params):
    return {band: GateParams(params[f"gate_{band}_kernel"], params[f"gate_{band}_bias"])
            for band in BANDS}


def _seg(logits, y, cfg):
    dl, dg = dice_loss(logits, y, cfg.smooth, cfg.include_background)
    cl, cg = ce_loss(logits, y)
    return dl + cl, dg + cg


def _feed_bank(bank, feats, labels):
    for f, y in zip(feats, labels):
        bank.update(f, y)


def pipeline_step(net, gates, batches, draws, bank, cfg, update_bank=True, rng=None):
    """One forward/backward pass over a batch from every source domain.

    Parameters
    ----------
    net : TinyNet
    gates : dict of GateParams, one per high-frequency band (ignored when ``cfg.wesp`` is off)
    batches : list of ``(x, y)`` with ``x`` ``[B, in_ch, H, W]`` and ``y`` ``[B, H, W]``
    draws : list (per domain) of lists (per sample) of StyleDraw
    bank : StatsBank or None
        Updated in place when ``update_bank`` is true and PRL is on.
    cfg : PipelineConfig

    Returns
    -------
    report : LossReport
    grads : dict
        Gradients of the total loss for net parameters and (with WESP) gates.
    """
    n_dom = len(batches)
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    if cfg.wesp:
        grads.update({k: np.zeros_like(v) for k, v in gate_param_dict(gates).items()})
    ccfg = cfg.contrastive()
    terms = []
    for (x, y), dom_draws in zip(batches, draws):
        y = np.asarray(y)
        h_s, stem_cache = net.stem(x)
        h_sty = np.stack([apply_style(h, d, cfg.style) for h, d in zip(h_s, dom_draws)])
        if cfg.wesp:
            h_t, wesp_back = wesp_apply(h_s, h_sty, gates)
        else:
            h_t = h_sty
        f_s, blk_s = net.block(h_s)
        f_t, blk_t = net.block(h_t)
        logit_s, head_s = net.head(f_s)
        logit_t, head_t = net.head(f_t)
        seg_s, g_logit_s = _seg(logit_s, y, cfg)
        seg_t, g_logit_t = _seg(logit_t, y, cfg)
        g_fs = np.zeros_like(f_s)
        con = 0.0
        if cfg.prl != "none":
            y_low = label_downsample(y, f_s.shape[2], f_s.shape[3])
            if update_bank:
                if cfg.stats_source in ("augmented", "both"):
                    _feed_bank(bank, f_t, y_low)
                if cfg.stats_source in ("source", "both"):
                    _feed_bank(bank, f_s, y_low)
            q = f_s.transpose(0, 2, 3, 1).reshape(-1, f_s.shape[1])
            q_lab = y_low.ravel()
            if cfg.query_rate < 1.0:
                keep = rng.random(q.shape[0]) < cfg.query_rate
            else:
                keep = slice(None)
            try:
                con, g_q = contrast_loss(q[keep], q_lab[keep], bank, ccfg)
            except AllPixelsUnusable:
                con, g_q = 0.0, None
            if g_q is not None:
                g_full = np.zeros_like(q)
                g_full[keep] = g_q
                g_fs = g_full.reshape(f_s.shape[0], f_s.shape[2], f_s.shape[3], -1).transpose(0, 3, 1, 2)
                g_fs = g_fs * (cfg.contrast_weight / n_dom)
        terms.append((cfg.seg_weight * seg_s, cfg.seg_weight * seg_t, con))
        w = cfg.seg_weight / n_dom
        dfs, gh = net.head_backward(head_s, w * g_logit_s)
        _acc(grads, gh)
        dft, gh = net.head_backward(head_t, w * g_logit_t)
        _acc(grads, gh)
        d_hs, gb = net.block_backward(blk_s, dfs + g_fs)
        _acc(grads, gb)
        d_ht, gb = net.block_backward(blk_t, dft)
        _acc(grads, gb)
        if cfg.wesp:
            d_src, d_sty, d_gates = wesp_back(d_ht)
            d_hs = d_hs + d_src
            _acc(grads, gate_param_dict(d_gates))
        else:
            d_sty = d_ht
        d_hs = d_hs + np.stack([apply_style_backward(h, d, cfg.style, g)
                                for h, d, g in zip(h_s, dom_draws, d_sty)])
        _acc(grads, net.stem_backward(stem_cache, d_hs))
    report = total_loss(terms, cfg.contrast_weight)
    return report, grads


def _acc(grads, new):
    for k, v in new.items():
        grads[k] += v


def train(domains, cfg, sgd, num_classes=3, model=None, on_epoch=None, on_step=None):
    """Train a TinyNet on a list of source domains ``[(X, Y), ...]``.

    ``model`` holds TinyNet sizes (``stem_ch``, ``feat_ch``, ``slope``).
    Returns ``(net, gates, bank, log)`` where ``log`` holds the mean loss
    terms of every epoch.
    """
    if not domains:
        raise ConfigError("need at least one source domain")
    rng = make_rng(sgd.seed)
    in_ch = domains[0][0].shape[1]
    net = TinyNet.init(rng, in_ch=in_ch, num_classes=num_classes, **(model or {}))
    gates = init_gates(net.stem_ch)
    bank = StatsBank(num_classes, net.feat_ch)
    n_min = min(len(x) for x, _ in domains)
    steps_per_epoch = max(1, -(-n_min // sgd.batch_size))
    total_steps = steps_per_epoch * sgd.epochs
    state = SgdState()
    params = dict(net.params)
    if cfg.wesp:
        params.update(gate_param_dict(gates))
    log = []
    for epoch in range(sgd.epochs):
        orders = [rng.permutation(len(x)) for x, _ in domains]
        sums = np.zeros(4)
        for step in range(steps_per_epoch):
            batches, draws = [], []
            for (x, y), order in zip(domains, orders):
                idx = order[step * sgd.batch_size:(step + 1) * sgd.batch_size]
                if idx.size == 0:
                    idx = order[:sgd.batch_size]
                batches.append((x[idx], y[idx]))
                draws.append([sample_style(net.stem_ch, cfg.style, rng) for _ in idx])
            report, grads = pipeline_step(net, gates, batches, draws, bank, cfg, rng=rng)
            if not np.isfinite(report.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step}: {report.to_dict()}")
            sgd_step(params, grads, sgd, state, total_steps)
            net.params.update({k: params[k] for k in net.params})
            if cfg.wesp:
                gates = gates_from_dict(params)
            sums += (report.seg_s, report.seg_t, report.contrast, report.total)
            if on_step is not None:
                on_step(epoch, step, report)
        mean = sums / steps_per_epoch
        entry = {"epoch": epoch, "seg_s": mean[0], "seg_t": mean[1],
                 "contrast": mean[2], "total": mean[3]}
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return net, gates, bank, log


class ProbSegmenter(BaseEstimator):
    """Domain-generalising segmenter trained on several labelled source domains.

    Parameters
    ----------
    prl : {"none", "mean", "full"}
        Prototype contrastive term: off, means only, or means and covariances.
    wesp : bool
        Repair re-styled stem features with the source's wavelet high bands.
    tau : float
        Contrastive temperature.
    epochs, batch_size, lr, momentum : training schedule (momentum SGD, poly decay).
    stats_source : {"augmented", "source", "both"}
        Which branch's features feed the prototype statistics.
    contrast_weight : float
    perturb_prob, style_mix : style perturbation settings.
    random_state : int
    """

    def __init__(self, prl="full", wesp=True, tau=0.5, epochs=10, batch_size=8,
                 lr=0.01, momentum=0.9, stats_source="augmented", contrast_weight=1.0,
                 perturb_prob=0.5, style_mix=1.0, num_classes=3, random_state=0):
        self.prl = prl
        self.wesp = wesp
        self.tau = tau
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.stats_source = stats_source
        self.contrast_weight = contrast_weight
        self.perturb_prob = perturb_prob
        self.style_mix = style_mix
        self.num_classes = num_classes
        self.random_state = random_state

    def _configs(self):
        cfg = PipelineConfig(prl=self.prl, wesp=self.wesp, tau=self.tau,
                             stats_source=self.stats_source,
                             contrast_weight=self.contrast_weight,
                             style=StyleConfig(perturb_prob=self.perturb_prob, mix=self.style_mix))
        sgd = SgdConfig(lr=self.lr, momentum=self.momentum, epochs=self.epochs,
                        batch_size=self.batch_size, seed=self.random_state)
        return cfg, sgd

    def fit(self, X, y, domains=None):
        """Fit on images ``X`` ``[N, C, H, W]``, labels ``y`` ``[N, H, W]`` and per-sample domain ids."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y).astype(np.int64)
        if X.ndim != 4 or y.shape != (X.shape[0],) + X.shape[2:]:
            raise ShapeMismatch(f"X {X.shape} and y {y.shape} are inconsistent")
        domains = np.zeros(len(X), dtype=np.int64) if domains is None else np.asarray(domains)
        groups = [(X[domains == d], y[domains == d]) for d in np.unique(domains)]
        cfg, sgd = self._configs()
        self.net_, self.gates_, self.bank_, self.loss_log_ = train(groups, cfg, sgd, self.num_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict(np.asarray(X, dtype=np.float64))

    def score(self, X, y):
        """Mean foreground Dice over classes 1..K-1."""
        from .bench import dice_metric

        pred = self.predict(X)
        y = np.asarray(y)
        return float(np.mean([dice_metric(pred, y, k) for k in range(1, self.num_classes)]))
