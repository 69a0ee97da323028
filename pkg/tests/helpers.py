"""Shared test utilities: finite differences, error norms, random fields."""

import numpy as np


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, perturbing every entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a, b, floor=1e-12):
    """max |a - b| scaled by the larger magnitude of either side."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def random_one_hot(rng, shape, n_classes):
    """One-hot label field of the given leading shape."""
    idx = rng.integers(0, n_classes, size=shape)
    return np.eye(n_classes)[idx]


def random_logits(rng, shape, n_classes, scale=4.0):
    return rng.uniform(-scale, scale, size=shape + (n_classes,))
