"""Central finite differences and relative-error helpers."""
import numpy as np


def finite_difference(func, x, h=1e-5, indices=None):
    """Central-difference gradient of scalar ``func()`` w.r.t. array ``x``.

    ``x`` is perturbed in place and restored; ``func`` must read it each call.
    ``indices`` restricts the check to selected flat positions (others are 0).
    """
    flat = x.reshape(-1)
    grad = np.zeros(flat.shape)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = func()
        flat[i] = old - h
        fm = func()
        flat[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def rel_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
