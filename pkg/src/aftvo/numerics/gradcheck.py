"""Central finite differences, used as an independent check on :func:`backward`."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def _partial(f: Callable[[], Tensor], flat: np.ndarray, i: int, h: float) -> float:
    orig = flat[i]
    try:
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
    finally:
        flat[i] = orig
    return (fp - fm) / (2.0 * h)


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                       indices: np.ndarray | None = None) -> np.ndarray:
    """d f() / d param by central differences; ``param.data`` is perturbed in place and restored.

    With ``indices`` only those flat entries are differentiated and a 1-D
    array in the same order is returned.
    """
    flat = param.data.reshape(-1)
    if indices is not None:
        return np.array([_partial(f, flat, int(i), h) for i in indices])
    grad = np.zeros_like(param.data)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        gflat[i] = _partial(f, flat, i, h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor) over the whole array."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
