"""Hot convolution kernels: a compiled core with a numpy fallback.

When the compiled extension (_cyconv, built from Cython) imported
cleanly, the dispatcher runs in "hybrid" mode: the compiled loops take
narrow-channel calls, where they beat BLAS dispatch overhead by 2-5x,
and the numpy backend's per-tap GEMMs take wide calls, where BLAS wins
(thresholds from benchmarks/bench_kernels.py). The kernel gradient is a
plain GEMM per tap and always goes through BLAS. Set
ADASEG_FORCE_NUMPY=1 to disable the extension entirely; both backends
implement the identical contract and are cross-checked in the tests.
"""

from __future__ import annotations

import os

import numpy as np

from . import np_backend

try:
    from . import _cyconv
except ImportError:
    _cyconv = None

_force = os.environ.get("ADASEG_FORCE_NUMPY", "") not in ("", "0")
_hybrid = _cyconv is not None and not _force

BACKEND = "hybrid" if _hybrid else "numpy"

# compiled wins below this cin*cout work-per-frame; measured crossover
_SMALL_WORK = 192


def available_backends() -> dict[str, object]:
    backends = {"numpy": np_backend}
    if _cyconv is not None:
        backends["compiled"] = _cyconv
    return backends


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(x, w, b, dilation: int) -> np.ndarray:
    if _hybrid and w.shape[0] * w.shape[1] < _SMALL_WORK:
        return np.asarray(_cyconv.conv1d_forward(_c(x), _c(w), _c(b), dilation))
    return np_backend.conv1d_forward(_c(x), _c(w), _c(b), dilation)


def conv1d_backward_input(g, w, dilation: int) -> np.ndarray:
    if _hybrid and w.shape[0] * w.shape[1] < _SMALL_WORK:
        return np.asarray(_cyconv.conv1d_backward_input(_c(g), _c(w), dilation))
    return np_backend.conv1d_backward_input(_c(g), _c(w), dilation)


def conv1d_backward_kernel(g, x, taps: int, dilation: int) -> np.ndarray:
    return np_backend.conv1d_backward_kernel(_c(g), _c(x), taps, dilation)
