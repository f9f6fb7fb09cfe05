"""Pure-numpy dilated convolution kernels (fallback for the compiled core).

Same contract as _cyconv: frame-major (T, C) sequences, (Cout, Cin, taps)
kernels, odd tap count, zero padding, output length exactly T. Each tap
is one shifted matrix product so BLAS does the heavy lifting.
"""

from __future__ import annotations

import numpy as np


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int) -> np.ndarray:
    frames = x.shape[0]
    taps = w.shape[2]
    half = (taps - 1) // 2
    wt = np.ascontiguousarray(w.transpose(2, 1, 0))  # (taps, Cin, Cout) for clean GEMMs
    out = np.broadcast_to(b, (frames, w.shape[0])).copy()
    for i in range(taps):
        off = (i - half) * dilation
        lo, hi = max(0, -off), min(frames, frames - off)
        if lo < hi:
            out[lo:hi] += x[lo + off:hi + off] @ wt[i]
    return out


def conv1d_backward_input(g: np.ndarray, w: np.ndarray, dilation: int) -> np.ndarray:
    frames = g.shape[0]
    taps = w.shape[2]
    half = (taps - 1) // 2
    wt = np.ascontiguousarray(w.transpose(2, 0, 1))  # (taps, Cout, Cin)
    gx = np.zeros((frames, w.shape[1]))
    for i in range(taps):
        off = (i - half) * dilation
        lo, hi = max(0, -off), min(frames, frames - off)
        if lo < hi:
            gx[lo + off:hi + off] += g[lo:hi] @ wt[i]
    return gx


def conv1d_backward_kernel(g: np.ndarray, x: np.ndarray, taps: int, dilation: int) -> np.ndarray:
    frames = g.shape[0]
    half = (taps - 1) // 2
    gw = np.zeros((g.shape[1], x.shape[1], taps))
    for i in range(taps):
        off = (i - half) * dilation
        lo, hi = max(0, -off), min(frames, frames - off)
        if lo < hi:
            gw[:, :, i] = g[lo:hi].T @ x[lo + off:hi + off]
    return gw
