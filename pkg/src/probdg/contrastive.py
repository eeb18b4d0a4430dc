"""Distribution-level pixel contrastive loss against Gaussian prototypes.

Each class prototype is a Gaussian ``N(mu_k, Sigma_k)``. For a query ``q`` the
expected similarity kernel ``E[exp(q.x / tau)]`` has the closed form
``exp(q.mu/tau + q.Sigma.q / (2 tau^2))``, so the loss is a softmax cross
entropy over those exponents. A sampled version over explicit positive and
negative draws is kept as a Monte-Carlo oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import AllPixelsUnusable, ConfigError, EmptyPositive, NoUsableNegatives, ShapeMismatch


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    stop_grad_prototypes: bool = True
    min_count: int = 1
    normalize: bool = False
    use_covariance: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if not self.stop_grad_prototypes:
            # prototypes are only ever changed by the streaming merge
            raise ConfigError("prototype gradients are not supported; keep stop_grad_prototypes=True")


def mgf_term(q, mu, sigma, tau):
    """Log of ``E[exp(q.x / tau)]`` for ``x ~ N(mu, sigma)``."""
    q = np.asarray(q, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != q.shape or sigma.shape != q.shape * 2:
        raise ShapeMismatch(f"q {q.shape}, mu {mu.shape}, sigma {sigma.shape} are inconsistent")
    return float(q @ mu / tau + q @ sigma @ q / (2.0 * tau * tau))


def usable_classes(bank, cfg):
    return np.flatnonzero(bank.counts >= cfg.min_count)


def _classes_for(label, bank, cfg):
    usable = usable_classes(bank, cfg)
    if label not in usable:
        raise EmptyPositive(f"class {label} has no usable prototype")
    negatives = usable[usable != label]
    if negatives.size == 0:
        raise NoUsableNegatives(f"no negative classes available for class {label}")
    return negatives


def _cov(bank, cfg, k):
    return bank.covs[k] if cfg.use_covariance else np.zeros_like(bank.covs[k])


def pixel_loss_closed(q, label, bank, cfg):
    """Closed-form loss of a single query against the bank's prototypes."""
    q = np.asarray(q, dtype=np.float64)
    if cfg.normalize:
        q = q / max(np.linalg.norm(q), 1e-12)
    negatives = _classes_for(label, bank, cfg)
    pos = mgf_term(q, bank.means[label], _cov(bank, cfg, label), cfg.tau)
    neg = [mgf_term(q, bank.means[k], _cov(bank, cfg, k), cfg.tau) for k in negatives]
    return float(logsumexp([pos] + neg) - pos)


def _gaussian_factor(cov):
    # eigenvalue clamp is for drawing samples only; the bank is never touched
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _draw(rng, mean, cov, n):
    factor = _gaussian_factor(cov)
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + z @ factor.T


def pixel_loss_mc(q, label, bank, cfg, m_pos, n_neg, rng):
    """Sampled loss with explicit positive/negative draws from the prototypes.

    Every positive draw is contrasted against the per-class averaged kernel of
    ``n_neg`` negative draws; the result is averaged over ``m_pos`` positives.
    """
    if m_pos < 1 or n_neg < 1:
        raise ValueError("m_pos and n_neg must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    if cfg.normalize:
        q = q / max(np.linalg.norm(q), 1e-12)
    negatives = _classes_for(label, bank, cfg)
    pos = _draw(rng, bank.means[label], _cov(bank, cfg, label), m_pos) @ q / cfg.tau
    neg_log_means = []
    for k in negatives:
        s = _draw(rng, bank.means[k], _cov(bank, cfg, k), n_neg) @ q / cfg.tau
        neg_log_means.append(logsumexp(s) - np.log(n_neg))
    neg_total = logsumexp(neg_log_means)
    denom = np.logaddexp(pos, neg_total)
    return float(np.mean(denom - pos))


def pixel_loss_mgf_reference(q, label, bank, cfg, n_nodes=80):
    """Sampled loss in the limit of infinitely many draws.

    Negative class averages become their closed-form kernels; the expectation
    over positives is a 1-D Gaussian integral in ``s = q.x / tau`` done by
    Gauss-Hermite quadrature.
    """
    q = np.asarray(q, dtype=np.float64)
    negatives = _classes_for(label, bank, cfg)
    neg = logsumexp([mgf_term(q, bank.means[k], _cov(bank, cfg, k), cfg.tau) for k in negatives])
    mean = q @ bank.means[label] / cfg.tau
    sd = np.sqrt(max(q @ _cov(bank, cfg, label) @ q, 0.0)) / cfg.tau
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    s = mean + sd * nodes
    vals = np.logaddexp(s, neg) - s
    return float(weights @ vals / np.sqrt(2.0 * np.pi))


def _normalize_rows(queries):
    norms = np.maximum(np.linalg.norm(queries, axis=1, keepdims=True), 1e-12)
    return queries / norms, norms


def contrast_loss(queries, labels, bank, cfg):
    """Mean pixel loss over usable queries and its gradient w.r.t. every query.

    Parameters
    ----------
    queries : ndarray of shape (P, C)
    labels : ndarray of shape (P,)
    bank : StatsBank
    cfg : ContrastiveConfig

    Returns
    -------
    loss : float
    grad : ndarray of shape (P, C)
        Rows of queries that were excluded (class without a usable
        prototype) receive zero gradient.
    """
    queries = np.asarray(queries, dtype=np.float64)
    labels = np.asarray(labels).astype(np.intp)
    if queries.ndim != 2 or queries.shape[1] != bank.feature_dim or labels.shape != queries.shape[:1]:
        raise ShapeMismatch(f"queries {queries.shape} / labels {labels.shape} vs dim {bank.feature_dim}")
    if queries.shape[0] < 1:
        raise AllPixelsUnusable("empty query set")
    usable = usable_classes(bank, cfg)
    grad = np.zeros_like(queries)
    if usable.size < 2:
        raise AllPixelsUnusable("fewer than two classes have usable prototypes")
    col = np.full(bank.num_classes, -1, dtype=np.intp)
    col[usable] = np.arange(usable.size)
    rows = np.flatnonzero(col[labels] >= 0)
    if rows.size == 0:
        raise AllPixelsUnusable("no query has a usable positive prototype")
    raw = queries[rows]
    q = raw
    if cfg.normalize:
        q, norms = _normalize_rows(raw)
    mu = bank.means[usable] / cfg.tau
    scores = q @ mu.T
    if cfg.use_covariance:
        sig = bank.covs[usable] / (cfg.tau * cfg.tau)
        sig_q = np.einsum("kij,pj->pki", sig, q)
        scores = scores + 0.5 * np.einsum("pki,pi->pk", sig_q, q)
    pos_col = col[labels[rows]]
    lse = logsumexp(scores, axis=1)
    idx = np.arange(rows.size)
    loss = float(np.mean(lse - scores[idx, pos_col]))
    coef = np.exp(scores - lse[:, None])
    coef[idx, pos_col] -= 1.0
    g = coef @ mu
    if cfg.use_covariance:
        g = g + np.einsum("pk,pki->pi", coef, sig_q)
    g /= rows.size
    if cfg.normalize:
        g = (g - q * np.sum(g * q, axis=1, keepdims=True)) / norms
    grad[rows] = g
    return loss, grad
