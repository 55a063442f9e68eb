"""Central finite differences for checking hand-written gradients."""

import numpy as np

DENOM_FLOOR = 1e-6


def central_difference(func, x, h=1e-5):
    """Gradient of scalar ``func`` at flat vector ``x`` by central differences."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        old = x[j]
        x[j] = old + h
        fplus = func(x)
        x[j] = old - h
        fminus = func(x)
        x[j] = old
        grad[j] = (fplus - fminus) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor=DENOM_FLOOR):
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
