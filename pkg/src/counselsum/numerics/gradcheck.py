"""Central finite differences, the independent oracle for every backward pass."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Per-coordinate (f(x + h e) - f(x - h e)) / 2h."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy()
    for i in range(x.size):
        idx = np.unravel_index(i, x.shape)
        work = base.copy()
        work[idx] = base[idx] + h
        hi = float(f(work))
        work[idx] = base[idx] - h
        lo = float(f(work))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("finite_diff_grad: non-finite function value")
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def finite_diff_wrt(f: Callable[[], float], param: Tensor, h: float = 1e-5,
                    coords: Sequence[int] | None = None) -> np.ndarray:
    """Finite differences of a closure w.r.t. a parameter, perturbed in place.

    `coords` restricts the check to a subset of flat coordinates (the rest of
    the returned array is zero), which keeps whole-pipeline checks tractable.
    """
    base = param.data.copy()
    grad = np.zeros_like(base)
    flat_grad = grad.reshape(-1)
    flat = param.data.reshape(-1)
    indices = range(base.size) if coords is None else coords
    try:
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f())
            flat[i] = orig - h
            lo = float(f())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("finite_diff_wrt: non-finite function value")
            flat_grad[i] = (hi - lo) / (2.0 * h)
    finally:
        param.data[...] = base
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative difference, safe near zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
