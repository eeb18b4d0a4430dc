"""Property suites behind the ``verify`` subcommand, and their oracles.

Each check returns ``{"test", "max_rel_err", "threshold", "pass"}``.
"""
from __future__ import annotations

import math
import time

import numpy as np

from . import stats as stats_mod
from .contrastive import (
    ContrastiveConfig,
    contrast_loss,
    mgf_term,
    pixel_loss_closed,
    pixel_loss_mc,
    pixel_loss_mgf_reference,
)
from .gradcheck import finite_difference, rel_error
from .losses import ce_loss, dice_loss
from .net import TinyNet
from .pipeline import PipelineConfig, gate_param_dict, pipeline_step
from .stats import ClassStats, LocalClassSummary, StatsBank, bank_batch_oracle
from .style import StyleConfig, StyleDraw
from .tensor_io import label_downsample, make_rng
from .wavelet import BANDS, GateParams, dwt2, idwt2, wesp_apply

SUITES = ("stats", "wavelet", "contrastive", "gradients", "metrics")


def _check(name, err, threshold, strict=True, **extra):
    ok = err < threshold if strict else err <= threshold
    return {"test": name, "max_rel_err": float(err), "threshold": threshold, "pass": bool(ok), **extra}


# ---------------------------------------------------------------- oracles

def haar_matrix_oracle(x):
    """Single-channel Haar bands by an explicit 4x4 orthonormal matrix per 2x2 block."""
    m = 0.5 * np.array([[1, 1, 1, 1],     # ll
                        [1, 1, -1, -1],   # lh: low along width, high along height
                        [1, -1, 1, -1],   # hl
                        [1, -1, -1, 1]])  # hh
    h, w = x.shape
    blocks = x.reshape(h // 2, 2, w // 2, 2).transpose(0, 2, 1, 3).reshape(h // 2, w // 2, 4)
    out = blocks @ m.T
    return tuple(out[..., i] for i in range(4))


def _boundary_bruteforce(mask):
    h, w = mask.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if a < 0 or b < 0 or a >= h or b >= w or not mask[a, b]:
                    pts.append((i, j))
                    break
    return np.array(pts, dtype=np.int64).reshape(-1, 2)


def asd_bruteforce(pred, gt, k):
    """All-pairs symmetric average surface distance (NaN if a mask is empty)."""
    bp = _boundary_bruteforce(np.asarray(pred) == k)
    bg = _boundary_bruteforce(np.asarray(gt) == k)
    if len(bp) == 0 or len(bg) == 0:
        return math.nan
    d2 = ((bp[:, None, :] - bg[None, :, :]) ** 2).sum(axis=-1)
    return 0.5 * (float(np.sqrt(d2.min(axis=1)).mean()) + float(np.sqrt(d2.min(axis=0)).mean()))


def random_mask_pair(rng, max_size=64):
    h, w = rng.integers(4, max_size + 1, size=2)
    kind = rng.integers(3)
    if kind == 0:
        a = rng.random((h, w)) < rng.uniform(0.1, 0.6)
        b = rng.random((h, w)) < rng.uniform(0.1, 0.6)
    else:
        yy, xx = np.mgrid[0:h, 0:w]

        def blob():
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            ry, rx = rng.uniform(1, h / 2), rng.uniform(1, w / 2)
            return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0

        a, b = blob(), blob()
        if kind == 2:
            b = b | a
    a[rng.integers(h), rng.integers(w)] = True
    b[rng.integers(h), rng.integers(w)] = True
    return a.astype(np.int64), b.astype(np.int64)


def random_psd(rng, dim, max_eig):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    cov = (q * rng.uniform(0.0, max_eig, dim)) @ q.T
    return 0.5 * (cov + cov.T)


def random_bank(rng, num_classes, dim, max_eig=0.2, mean_scale=1.0):
    bank = StatsBank(num_classes, dim)
    bank.counts[:] = rng.integers(1, 100, num_classes)
    bank.means[:] = rng.uniform(-mean_scale, mean_scale, (num_classes, dim))
    for k in range(num_classes):
        bank.covs[k] = random_psd(rng, dim, max_eig)
    return bank


# ---------------------------------------------------------------- suites

def _random_stream(rng):
    c = int(rng.choice([2, 4, 8]))
    k = int(rng.choice([2, 3, 5]))
    n_img = int(rng.integers(1, 17))
    images = []
    for _ in range(n_img):
        h, w = rng.integers(8, 33, size=2)
        feats = rng.standard_normal((c, h, w)) * rng.uniform(0.5, 3.0) + rng.uniform(-2, 2)
        labels = rng.integers(0, k, size=(h, w))
        images.append((feats, labels))
    return c, k, images


def _stream(images, k, c):
    bank = StatsBank(k, c)
    for f, y in images:
        bank.update(f, y, merge_cov_fn=stats_mod.merge_cov)
    return bank


def _bank_diff(a, b):
    return max(float(np.abs(a.means - b.means).max()), float(np.abs(a.covs - b.covs).max()))


def suite_stats(cases=100, seed=0):
    out = []
    prev = ClassStats(2, np.array([1.0]), np.array([[1.0]]))
    local = LocalClassSummary(1, np.array([4.0]), np.array([[0.0]]))
    pooled = stats_mod.merge_cov(prev, local)[0, 0]
    out.append(_check("pooled_variance_{0,2}+{4}=8/3", abs(pooled - 8.0 / 3.0) / (8.0 / 3.0), 1e-12))
    rng = make_rng(seed)
    worst = perm_worst = 0.0
    sym_ok = psd_ok = counts_ok = True
    for _ in range(cases):
        c, k, images = _random_stream(rng)
        streamed = _stream(images, k, c)
        batch = bank_batch_oracle(images, k, c)
        worst = max(worst, _bank_diff(streamed, batch))
        order = rng.permutation(len(images))
        shuffled = _stream([images[i] for i in order], k, c)
        perm_worst = max(perm_worst, _bank_diff(streamed, shuffled))
        sym_ok &= all(np.array_equal(s, s.T) for s in streamed.covs)
        psd_ok &= streamed.check_psd(1e-9)
        expected = np.bincount(np.concatenate([y.ravel() for _, y in images]), minlength=k)
        counts_ok &= bool(np.array_equal(expected, streamed.counts))
    out.append(_check("streaming_vs_batch", worst, 1e-9, cases=cases))
    out.append(_check("permutation_invariance", perm_worst, 1e-9, cases=cases))
    out.append(_check("covariance_exact_symmetry", 0.0 if sym_ok else 1.0, 0.5))
    out.append(_check("covariance_psd_-1e-9_trace", 0.0 if psd_ok else 1.0, 0.5))
    out.append(_check("count_bookkeeping_exact", 0.0 if counts_ok else 1.0, 0.5))
    return out


WAVELET_SHAPES = [(1, 2, 2), (1, 4, 4), (2, 8, 8), (3, 6, 10), (1, 3, 3), (2, 5, 7),
                  (1, 7, 4), (4, 16, 16), (1, 1, 2), (1, 2, 1), (2, 9, 9), (3, 32, 32),
                  (1, 15, 16), (2, 11, 6), (1, 1, 1), (5, 12, 13)]


def suite_wavelet(seed=0):
    rng = make_rng(seed)
    out = []
    p = dwt2(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    got = np.array([p.ll[0, 0, 0], p.lh[0, 0, 0], p.hl[0, 0, 0], p.hh[0, 0, 0]])
    want = np.array([5.0, -2.0, -1.0, 0.0])
    out.append(_check("hand_example_[[1,2],[3,4]]", float(np.abs(got - want).max()), 1e-12))
    recon = 0.0
    for shape in WAVELET_SHAPES:
        x = rng.standard_normal(shape)
        recon = max(recon, float(np.abs(idwt2(dwt2(x)) - x).max()))
    out.append(_check("perfect_reconstruction_16_shapes", recon, 1e-12))
    energy = matrix = lin = 0.0
    for _ in range(20):
        h, w = 2 * rng.integers(1, 17, size=2)
        x = rng.standard_normal((2, h, w))
        y = rng.standard_normal((2, h, w))
        px = dwt2(x)
        energy = max(energy, abs(float(np.sum(x * x)) - px.energy()) / float(np.sum(x * x)))
        ref = haar_matrix_oracle(x[0])
        got = (px.ll[0], px.lh[0], px.hl[0], px.hh[0])
        matrix = max(matrix, max(float(np.abs(a - b).max()) for a, b in zip(got, ref)))
        a, b = rng.standard_normal(2)
        pz, py = dwt2(a * x + b * y), dwt2(y)
        for band in ("ll", "lh", "hl", "hh"):
            lin = max(lin, float(np.abs(pz.band(band) - a * px.band(band) - b * py.band(band)).max()))
    out.append(_check("energy_preservation", energy, 1e-10))
    out.append(_check("matrix_oracle_agreement", matrix, 1e-12))
    out.append(_check("linearity", lin, 1e-12))
    return out


def mgf_mc_rel_errors(seeds=20, n_samples=200_000):
    """Relative gap between ``exp(mgf_term)`` and a sampled ``E[exp(q.x/tau)]``.

    Parameter box: ``|q| <= 3``, ``tau`` in [0.5, 2], covariance spectral norm <= 0.2.
    """
    errs = []
    for seed in range(seeds):
        rng = make_rng(10_000 + seed)
        for dim in (2, 4, 8):
            direction = rng.standard_normal(dim)
            q = direction / np.linalg.norm(direction) * rng.uniform(0.0, 3.0)
            tau = rng.uniform(0.5, 2.0)
            cov = random_psd(rng, dim, 0.2)
            mu = rng.uniform(-1.0, 1.0, dim)
            w, v = np.linalg.eigh(cov)
            x = mu + rng.standard_normal((n_samples, dim)) @ (v * np.sqrt(np.clip(w, 0, None))).T
            sampled = float(np.mean(np.exp(x @ q / tau)))
            exact = math.exp(mgf_term(q, mu, cov, tau))
            errs.append(abs(sampled - exact) / exact)
    return errs


def sigma_zero_collapse_error(cases=50, seed=0):
    """Closed form with all covariances zero vs plain softmax cross entropy."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k, dim = int(rng.integers(2, 6)), int(rng.integers(1, 9))
        bank = random_bank(rng, k, dim)
        bank.covs[:] = 0.0
        tau = rng.uniform(0.1, 2.0)
        q = rng.standard_normal(dim) * 2
        label = int(rng.integers(k))
        logits = bank.means @ q / tau
        ref = -(logits[label] - math.log(math.fsum(np.exp(logits - logits.max()))) - logits.max())
        got = pixel_loss_closed(q, label, bank, ContrastiveConfig(tau=tau))
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    return worst


def mc_loss_rel_errors(seeds=20, n=200_000):
    """Sampled loss with isotropic 0.05 covariance vs its infinite-sample limit."""
    errs = []
    cfg = ContrastiveConfig(tau=1.0)
    for seed in range(seeds):
        rng = make_rng(20_000 + seed)
        bank = random_bank(rng, 3, 4)
        bank.covs[:] = 0.05 * np.eye(4)
        q = rng.standard_normal(4)
        label = int(rng.integers(3))
        mc = pixel_loss_mc(q, label, bank, cfg, n, n, rng)
        ref = pixel_loss_mgf_reference(q, label, bank, cfg)
        errs.append(abs(mc - ref) / ref)
    return errs


def suite_contrastive(seed=0):
    out = []
    errs = mgf_mc_rel_errors()
    out.append(_check("mgf_vs_monte_carlo_2e5_20_seeds", max(errs), 0.02, terms=len(errs)))
    out.append(_check("sigma_zero_softmax_ce_collapse", sigma_zero_collapse_error(), 1e-12))
    out.append(_check("sampled_loss_vs_mgf_limit_0.05I", max(mc_loss_rel_errors()), 0.02))
    rng = make_rng(seed)
    finite = True
    for _ in range(50):
        bank = random_bank(rng, 4, 3, mean_scale=1.0)
        q = rng.standard_normal(3)
        q *= 700.0 / max(abs(q @ bank.means.T).max(), 1e-12)
        cfg = ContrastiveConfig(tau=1.0, use_covariance=False)
        loss, grad = contrast_loss(q[None], np.array([int(rng.integers(4))]), bank, cfg)
        finite &= bool(np.isfinite(loss) and np.all(np.isfinite(grad)))
    out.append(_check("stability_exponent_700", 0.0 if finite else 1.0, 0.5))
    return out


def _contrast_grad_error(rng, cfg=None):
    bank = random_bank(rng, 3, 4)
    q = rng.standard_normal((32, 4))
    labels = rng.integers(0, 3, 32)
    cfg = cfg or ContrastiveConfig(tau=float(rng.uniform(0.5, 1.5)))
    _, grad = contrast_loss(q, labels, bank, cfg)
    num = finite_difference(lambda: contrast_loss(q, labels, bank, cfg)[0], q)
    return rel_error(grad, num)


def _seg_grad_error(rng, which):
    logits = rng.standard_normal((3, 5, 6))
    target = rng.integers(0, 3, (5, 6))
    fn = dice_loss if which == "dice" else ce_loss
    _, grad = fn(logits, target)
    num = finite_difference(lambda: fn(logits, target)[0], logits)
    return rel_error(grad, num)


def _wesp_grad_error(rng):
    f_src = rng.standard_normal((2, 4, 4))
    f_sty = rng.standard_normal((2, 4, 4))
    gates = {b: GateParams(rng.standard_normal((2, 4, 3, 3)) * 0.5, rng.standard_normal(2) * 0.5)
             for b in BANDS}
    w = rng.standard_normal((2, 4, 4))

    def scalar():
        return float(np.sum(w * wesp_apply(f_src, f_sty, gates)[0]))

    _, back = wesp_apply(f_src, f_sty, gates)
    d_src, d_sty, d_gates = back(w)
    errs = [rel_error(d_src, finite_difference(scalar, f_src)),
            rel_error(d_sty, finite_difference(scalar, f_sty))]
    for b in BANDS:
        errs.append(rel_error(d_gates[b].kernel, finite_difference(scalar, gates[b].kernel)))
        errs.append(rel_error(d_gates[b].bias, finite_difference(scalar, gates[b].bias)))
    return max(errs)


def _net_grad_error(rng):
    net = TinyNet.init(rng, in_ch=1, num_classes=3)
    for k in ("stem_b", "block_b", "head_b"):
        net.params[k] = rng.standard_normal(net.params[k].shape) * 0.1
    x = rng.standard_normal((2, 1, 6, 6))
    g_logit = rng.standard_normal((2, 3, 6, 6))
    g_feat = rng.standard_normal((2, 8, 3, 3))

    def scalar():
        f, lg, _ = net.forward(x)
        return float(np.sum(lg * g_logit) + np.sum(f * g_feat))

    _, _, cache = net.forward(x)
    grads = net.backward(cache, g_logit, g_feat)
    return max(rel_error(grads[k], finite_difference(scalar, net.params[k])) for k in net.params)


def pipeline_instance(seed, wesp=True, prl="full", size=8):
    """A 2-domain micro-batch with frozen style draws and bank, away from rectifier kinks."""
    for attempt in range(100):
        rng = make_rng(seed * 1000 + attempt)
        net = TinyNet.init(rng, in_ch=1, num_classes=3)
        for k in ("stem_b", "block_b", "head_b"):
            net.params[k] = rng.standard_normal(net.params[k].shape) * 0.1
        gates = {b: GateParams(rng.standard_normal((8, 16, 3, 3)) * 0.2, rng.standard_normal(8) * 0.2)
                 for b in BANDS}
        batches, draws = [], []
        for _ in range(2):
            x = rng.uniform(-1, 1, (2, 1, size, size))
            y = np.zeros((2, size, size), dtype=np.int64)
            y[:, size // 4: 3 * size // 4, size // 4: 3 * size // 4] = 1
            y[:, size // 2 - 1: size // 2 + 1, size // 2 - 1: size // 2 + 1] = 2
            y[:, size // 2, size // 2] = 2
            # label map at feature resolution must contain all three classes
            y[:, 0:2, 0:2] = 2
            y[:, 2:4, 2:4] = 1
            batches.append((x, y))
            draws.append([StyleDraw(True, rng.uniform(0, 1, 8), rng.uniform(0.2, 1, 8)) for _ in range(2)])
        cfg = PipelineConfig(prl=prl, wesp=wesp, tau=1.0, style=StyleConfig(perturb_prob=1.0, mix=0.7))
        bank = StatsBank(3, 8)
        pipeline_step(net, gates, batches, draws, bank, cfg, update_bank=True)
        if _min_preactivation(net, gates, batches, draws, cfg) > 1e-3:
            return net, gates, batches, draws, bank, cfg
    raise RuntimeError("could not find a kink-free instance")


def _min_preactivation(net, gates, batches, draws, cfg):
    from .style import apply_style

    lo = np.inf
    for (x, _), dd in zip(batches, draws):
        h, (z0, _) = net.stem(x)
        lo = min(lo, np.abs(z0).min())
        hs = np.stack([apply_style(a, d, cfg.style) for a, d in zip(h, dd)])
        ht = wesp_apply(h, hs, gates)[0] if cfg.wesp else hs
        for branch in (h, ht):
            _, (z1, _) = net.block(branch)
            lo = min(lo, np.abs(z1).min())
    return lo


def pipeline_grad_errors(seed=0, wesp=True, prl="full", max_entries=None):
    """Relative error per trainable tensor of the total loss through the whole step."""
    net, gates, batches, draws, bank, cfg = pipeline_instance(seed, wesp, prl)
    _, grads = pipeline_step(net, gates, batches, draws, bank, cfg, update_bank=False)
    params = dict(net.params)
    if wesp:
        params.update(gate_param_dict(gates))

    def scalar():
        return pipeline_step(net, gates, batches, draws, bank, cfg, update_bank=False)[0].total

    rng = make_rng(seed + 77)
    errs = {}
    for name, arr in params.items():
        idx = None
        if max_entries is not None and arr.size > max_entries:
            idx = rng.choice(arr.size, max_entries, replace=False)
        num = finite_difference(scalar, arr, indices=idx)
        ana = grads[name] if idx is None else grads[name].reshape(-1)[idx]
        num = num if idx is None else num.reshape(-1)[idx]
        errs[name] = rel_error(ana, num)
    return errs


def suite_gradients(seed=0, instances=10, max_entries=40):
    rng = make_rng(seed)
    out = []
    out.append(_check("contrast_loss_fd", max(_contrast_grad_error(rng) for _ in range(instances)), 1e-6))
    out.append(_check("dice_loss_fd", max(_seg_grad_error(rng, "dice") for _ in range(instances)), 1e-6))
    out.append(_check("ce_loss_fd", max(_seg_grad_error(rng, "ce") for _ in range(instances)), 1e-8))
    out.append(_check("wesp_apply_fd", max(_wesp_grad_error(rng) for _ in range(3)), 1e-6))
    out.append(_check("tiny_net_backward_fd", max(_net_grad_error(rng) for _ in range(3)), 1e-5))
    errs = pipeline_grad_errors(seed, max_entries=max_entries)
    out.append(_check("pipeline_total_loss_fd", max(errs.values()), 1e-4))
    return out


def suite_metrics(seed=0, pairs=50):
    from .bench import asd_metric

    rng = make_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        a, b = random_mask_pair(rng)
        got, ref = asd_metric(a, b, 1), asd_bruteforce(a, b, 1)
        worst = max(worst, abs(got - ref))
    return [_check("asd_vs_bruteforce_exact", worst, 0.0, strict=False, pairs=pairs)]


_RUNNERS = {
    "stats": suite_stats,
    "wavelet": suite_wavelet,
    "contrastive": suite_contrastive,
    "gradients": suite_gradients,
    "metrics": suite_metrics,
}


def run_suites(names):
    """Run named suites; returns ``(report, all_passed)``."""
    if "all" in names:
        names = SUITES
    report = []
    for name in names:
        t0 = time.perf_counter()
        checks = _RUNNERS[name]()
        elapsed = time.perf_counter() - t0
        for c in checks:
            c["suite"] = name
        report.append({"suite": name, "seconds": round(elapsed, 3), "checks": checks})
    ok = all(c["pass"] for s in report for c in s["checks"])
    return report, ok
