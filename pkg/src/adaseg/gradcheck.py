"""Central finite-difference gradient checking.

The oracle never touches the tape: it re-runs the supplied forward
function with perturbed leaf values and differences the scalar results.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor


def finite_difference_gradient(f: Callable[[], float], leaf: Tensor,
                               eps: float = 1e-5) -> np.ndarray:
    """d f / d leaf by central differences, perturbing one entry at a time."""
    grad = np.zeros_like(leaf.value)
    flat_value = leaf.value.ravel()
    flat_grad = grad.ravel()
    for i in range(flat_value.size):
        saved = flat_value[i]
        flat_value[i] = saved + eps
        plus = f()
        flat_value[i] = saved - eps
        minus = f()
        flat_value[i] = saved
        flat_grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case |a - n| / max(1, |a|, |n|) over all entries."""
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(f: Callable[[], float], leaves: Mapping[str, Tensor],
                    analytic: Mapping[str, np.ndarray],
                    eps: float = 1e-5, tol: float = 1e-4) -> dict[str, float]:
    """Compare analytic gradients against the finite-difference oracle.

    Returns the per-leaf worst relative error; raises AssertionError when
    any leaf exceeds the tolerance.
    """
    errors = {}
    for name, leaf in leaves.items():
        numeric = finite_difference_gradient(f, leaf, eps)
        err = max_relative_error(np.asarray(analytic[name]), numeric)
        errors[name] = err
        if err > tol:
            raise AssertionError(f"gradient check failed for {name}: rel err {err:.3e} > {tol:.0e}")
    return errors
