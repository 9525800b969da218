"""Shared test utilities: finite-difference oracles and error measures."""

import numpy as np


def finite_difference_grad(f, x, h=1e-5):
    """Central finite differences of scalar f() w.r.t. leaf tensor x.

    f must rebuild its forward pass from x.values on every call; x.values
    is perturbed in place and restored.
    """
    flat = x.values.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().values)
        flat[i] = orig - h
        fm = float(f().values)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.values.shape)


def max_rel_err(a, b, floor=1e-6):
    """Max elementwise relative error with an absolute floor on the scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
