"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numerical_gradient(f, x: np.ndarray, step: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbed in place.

    ``f`` takes no arguments and must read ``x`` by reference. When
    ``indices`` (flat positions) is given only those entries are
    estimated; the rest of the result is left at zero.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in (range(flat.size) if indices is None else indices):
        old = flat[idx]
        flat[idx] = old + step
        fp = f()
        flat[idx] = old - step
        fm = f()
        flat[idx] = old
        gflat[idx] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Largest deviation ``max|a - n|`` scaled by the tensor's gradient magnitude.

    The scale is ``max(max|a|, max|n|)``. Dividing entrywise instead would
    let finite-difference roundoff on near-zero entries dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
    return float(np.max(np.abs(a - n))) / scale
