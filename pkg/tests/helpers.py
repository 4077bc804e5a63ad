"""Shared test oracles.

The finite-difference gradient here is deliberately independent of the
autodiff engine: it only calls forward evaluations of a loss closure.
"""

import numpy as np


def fd_gradient(loss_fn, arrays, h=1e-3):
    """Central finite-difference gradient of loss_fn w.r.t. each array.

    loss_fn takes the list of float64 arrays and returns a python float.
    Returns one float64 gradient array per input array.
    """
    grads = []
    for idx, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(arrays)
            flat[i] = orig - h
            down = loss_fn(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def fd_gradient_sampled(loss_fn, arrays, coords_per_array=10, h=1e-3, seed=0):
    """Central differences on a fixed-seed coordinate subset per array.

    Returns a list of (flat_indices, fd_values) pairs, one per array.
    """
    rng = np.random.default_rng(seed)
    out = []
    for a in arrays:
        flat = a.reshape(-1)
        n = min(coords_per_array, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        vals = np.zeros(n, dtype=np.float64)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(arrays)
            flat[i] = orig - h
            down = loss_fn(arrays)
            flat[i] = orig
            vals[j] = (up - down) / (2.0 * h)
        out.append((idx, vals))
    return out


def rel_err(a, b, floor=1e-8):
    """Max relative error with an absolute floor for near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
