"""Central finite-difference checks for analytic gradients."""

import numpy as np


def numerical_gradient(f, x, h=1e-5):
    """Central differences of a scalar function ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-8):
    """Max-norm relative error ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


def check_gradient(f, grad, x, h=1e-5):
    """Relative error between ``grad(x)`` and central differences of ``f``."""
    return relative_error(grad(x), numerical_gradient(f, x, h))
