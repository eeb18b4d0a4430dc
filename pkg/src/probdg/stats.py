"""Streaming class-conditional Gaussian prototypes.

Each class keeps a pixel count, a mean vector and a population covariance.
A new image contributes its own per-class summary which is folded into the
running statistics with the exact pooled merge, so any split of the pixel
stream into images yields the same result as one batch computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map, check_label_map
from .exceptions import ShapeMismatch

_COUNT_LIMIT = np.iinfo(np.int64).max


@dataclass
class ClassStats:
    count: int
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def zeros(cls, dim):
        return cls(0, np.zeros(dim), np.zeros((dim, dim)))


@dataclass
class LocalClassSummary:
    count: int
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class StatsBank:
    """Per-class running statistics for ``num_classes`` classes."""

    num_classes: int
    feature_dim: int
    counts: np.ndarray = field(default=None)
    means: np.ndarray = field(default=None)
    covs: np.ndarray = field(default=None)
    update_count: int = 0

    def __post_init__(self):
        k, c = self.num_classes, self.feature_dim
        if self.counts is None:
            self.counts = np.zeros(k, dtype=np.int64)
        if self.means is None:
            self.means = np.zeros((k, c))
        if self.covs is None:
            self.covs = np.zeros((k, c, c))
        if self.means.shape != (k, c) or self.covs.shape != (k, c, c) or self.counts.shape != (k,):
            raise ShapeMismatch("bank arrays inconsistent with num_classes/feature_dim")

    def __getitem__(self, k):
        return ClassStats(int(self.counts[k]), self.means[k].copy(), self.covs[k].copy())

    def copy(self):
        return StatsBank(self.num_classes, self.feature_dim, self.counts.copy(),
                         self.means.copy(), self.covs.copy(), self.update_count)

    def update(self, features, labels, merge_cov_fn=None):
        """Fold one feature map and its label map into the bank, in place."""
        merge_cov_fn = merge_cov if merge_cov_fn is None else merge_cov_fn
        features = check_feature_map(features)
        if features.shape[0] != self.feature_dim:
            raise ShapeMismatch(
                f"feature dim {features.shape[0]} != bank dim {self.feature_dim}")
        labels = check_label_map(labels, self.num_classes, features.shape[1:])
        flat = features.reshape(self.feature_dim, -1).T
        flat_labels = labels.ravel()
        for k in range(self.num_classes):
            local = _summary_of(flat[flat_labels == k])
            if local is None:
                continue
            prev = self[k]
            if prev.count > _COUNT_LIMIT - local.count:
                raise OverflowError(f"pixel count overflow for class {k}")
            self.means[k] = merge_mean(prev, local)
            self.covs[k] = merge_cov_fn(prev, local)
            self.counts[k] = prev.count + local.count
        self.update_count += 1
        return self

    def traces(self):
        return np.trace(self.covs, axis1=1, axis2=2)

    def check_psd(self, rel_tol=1e-9):
        """True when every covariance is exactly symmetric and PSD up to roundoff."""
        for k in range(self.num_classes):
            cov = self.covs[k]
            if not np.array_equal(cov, cov.T):
                return False
            if self.counts[k] == 0:
                continue
            lo = np.linalg.eigvalsh(cov).min()
            if lo < -rel_tol * max(np.trace(cov), 0.0):
                return False
        return True


def _summary_of(pixels):
    m = pixels.shape[0]
    if m == 0:
        return None
    mean = pixels.mean(axis=0)
    centred = pixels - mean
    cov = centred.T @ centred / m
    return LocalClassSummary(m, mean, 0.5 * (cov + cov.T))


def local_summary(features, labels, k):
    """Mean and population covariance of the class-``k`` pixels of one map.

    Returns ``None`` when the class does not occur.
    """
    features = check_feature_map(features)
    labels = check_label_map(labels, shape=features.shape[1:])
    flat = features.reshape(features.shape[0], -1).T
    return _summary_of(flat[labels.ravel() == k])


def _check_merge(prev, local):
    if np.shape(prev.mean) != np.shape(local.mean):
        raise ShapeMismatch(f"mean dims differ: {np.shape(prev.mean)} vs {np.shape(local.mean)}")
    if prev.count + local.count < 1:
        raise ValueError("merging two empty summaries")


def merge_mean(prev, local):
    """Count-weighted average of the running mean and the new local mean."""
    _check_merge(prev, local)
    n, m = prev.count, local.count
    return (n * np.asarray(prev.mean) + m * np.asarray(local.mean)) / (n + m)


def merge_cov(prev, local):
    """Pooled population covariance of two disjoint pixel sets."""
    _check_merge(prev, local)
    n, m = prev.count, local.count
    delta = np.asarray(prev.mean) - np.asarray(local.mean)
    cross = (n * m) * np.outer(delta, delta) / (n + m) ** 2
    cov = cross + (n * np.asarray(prev.cov) + m * np.asarray(local.cov)) / (n + m)
    return 0.5 * (cov + cov.T)


def bank_update(bank, features, labels):
    """Functional form of :meth:`StatsBank.update`; ``bank`` is left untouched."""
    return bank.copy().update(features, labels)


def bank_batch_oracle(images, num_classes, feature_dim):
    """Per-class statistics over all pixels of all images in one two-pass sweep."""
    bank = StatsBank(num_classes, feature_dim)
    if not images:
        return bank
    feats, labs = [], []
    for features, labels in images:
        features = check_feature_map(features)
        labels = check_label_map(labels, num_classes, features.shape[1:])
        feats.append(features.reshape(feature_dim, -1).T)
        labs.append(labels.ravel())
    feats = np.concatenate(feats)
    labs = np.concatenate(labs)
    for k in range(num_classes):
        pix = feats[labs == k]
        if len(pix) == 0:
            continue
        mean = pix.sum(axis=0) / len(pix)
        centred = pix - mean
        cov = centred.T @ centred / len(pix)
        bank.counts[k] = len(pix)
        bank.means[k] = mean
        bank.covs[k] = 0.5 * (cov + cov.T)
    bank.update_count = len(images)
    return bank


class GaussianPrototypes(BaseEstimator):
    """Estimator wrapper around :class:`StatsBank`.

    ``partial_fit`` folds in one ``[C, H, W]`` feature map with its label map;
    ``fit`` resets and folds in a sequence of them.

    Parameters
    ----------
    num_classes : int
        Number of semantic classes.
    """

    def __init__(self, num_classes=3):
        self.num_classes = num_classes

    def partial_fit(self, features, labels):
        features = check_feature_map(features)
        if not hasattr(self, "bank_"):
            self.bank_ = StatsBank(self.num_classes, features.shape[0])
            self.n_features_in_ = features.shape[0]
        self.bank_.update(features, labels)
        return self

    def fit(self, features, labels):
        if hasattr(self, "bank_"):
            del self.bank_
        for f, y in zip(features, labels):
            self.partial_fit(f, y)
        return self

    @property
    def means_(self):
        check_is_fitted(self, "bank_")
        return self.bank_.means

    @property
    def covariances_(self):
        check_is_fitted(self, "bank_")
        return self.bank_.covs

    @property
    def counts_(self):
        check_is_fitted(self, "bank_")
        return self.bank_.counts
