"""Input checks shared by the numerical modules and estimators."""
import numpy as np

from .exceptions import ClassIndexOutOfRange, ShapeMismatch


def check_feature_map(features, ndim=3):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != ndim:
        raise ShapeMismatch(f"expected a rank-{ndim} feature map, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("feature map contains non-finite values")
    return features


def check_label_map(labels, num_classes=None, shape=None):
    labels = np.asarray(labels)
    if labels.dtype.kind == "f":
        if not np.all(labels == np.round(labels)):
            raise ValueError("label map holds non-integer values")
        labels = labels.astype(np.int64)
    elif labels.dtype.kind not in "iu":
        raise TypeError(f"label map must be integer typed, got {labels.dtype}")
    if shape is not None and labels.shape != tuple(shape):
        raise ShapeMismatch(f"label map shape {labels.shape} != expected {tuple(shape)}")
    if labels.size and labels.min() < 0:
        raise ClassIndexOutOfRange("negative class index in label map")
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        raise ClassIndexOutOfRange(
            f"class index {labels.max()} out of range for {num_classes} classes")
    return labels


def check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")
