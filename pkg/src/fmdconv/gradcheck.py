"""Central finite differences, the independent oracle for every backward pass."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

__all__ = ["finite_diff_gradient", "max_relative_error"]


def finite_diff_gradient(loss_fn: Callable[[], float | Tensor],
                         params: Sequence[Tensor],
                         eps: float = 1e-5) -> list[np.ndarray]:
    """Per-coordinate central differences (f(p+eps) - f(p-eps)) / (2*eps).

    ``loss_fn`` must be a deterministic, pure function of the current values
    of ``params``; each coordinate is perturbed in place and restored.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")

    def evaluate() -> float:
        value = loss_fn()
        return value.item() if isinstance(value, Tensor) else float(value)

    grads = []
    for p in params:
        grad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = evaluate()
            flat[i] = saved - eps
            f_minus = evaluate()
            flat[i] = saved
            grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(grad)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-9) -> float:
    """Worst-case |a - n| / max(|a|, |n|, floor) over all coordinates.

    The floor absorbs finite-difference noise on coordinates whose true
    gradient is effectively zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())
