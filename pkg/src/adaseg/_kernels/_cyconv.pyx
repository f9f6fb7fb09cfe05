# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled same-length dilated 1-d convolution kernels.

Sequence layout is frame-major (T, C); kernels are (out_channels,
in_channels, taps) with an odd tap count, zero-padded so the output has
exactly T frames. Weights are transposed once per call to (taps, out, in)
so the innermost loops stream contiguous memory. The numpy backend in
np_backend.py implements the identical contract.
"""

import numpy as np


def conv1d_forward(double[:, ::1] x, w, double[::1] b, Py_ssize_t dilation):
    cdef double[:, :, ::1] wt = np.ascontiguousarray(np.asarray(w).transpose(2, 0, 1))
    cdef Py_ssize_t frames = x.shape[0]
    cdef Py_ssize_t cin = x.shape[1]
    cdef Py_ssize_t taps = wt.shape[0]
    cdef Py_ssize_t cout = wt.shape[1]
    cdef Py_ssize_t half = (taps - 1) // 2
    out_arr = np.empty((frames, cout), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, co, ci, i, off, lo, hi, src
    cdef double acc
    for t in range(frames):
        for co in range(cout):
            out[t, co] = b[co]
    for i in range(taps):
        off = (i - half) * dilation
        lo = -off if off < 0 else 0
        hi = frames - off if off > 0 else frames
        for t in range(lo, hi):
            src = t + off
            for co in range(cout):
                acc = 0.0
                for ci in range(cin):
                    acc += wt[i, co, ci] * x[src, ci]
                out[t, co] += acc
    return out_arr


def conv1d_backward_input(double[:, ::1] g, w, Py_ssize_t dilation):
    cdef double[:, :, ::1] wt = np.ascontiguousarray(np.asarray(w).transpose(2, 0, 1))
    cdef Py_ssize_t frames = g.shape[0]
    cdef Py_ssize_t taps = wt.shape[0]
    cdef Py_ssize_t cout = wt.shape[1]
    cdef Py_ssize_t cin = wt.shape[2]
    cdef Py_ssize_t half = (taps - 1) // 2
    gx_arr = np.zeros((frames, cin), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, off, lo, hi, t, src, co, ci
    cdef double gv
    for i in range(taps):
        off = (i - half) * dilation
        lo = -off if off < 0 else 0
        hi = frames - off if off > 0 else frames
        for t in range(lo, hi):
            src = t + off
            for co in range(cout):
                gv = g[t, co]
                for ci in range(cin):
                    gx[src, ci] += gv * wt[i, co, ci]
    return gx_arr


def conv1d_backward_kernel(double[:, ::1] g, double[:, ::1] x,
                           Py_ssize_t taps, Py_ssize_t dilation):
    cdef Py_ssize_t frames = g.shape[0]
    cdef Py_ssize_t cout = g.shape[1]
    cdef Py_ssize_t cin = x.shape[1]
    cdef Py_ssize_t half = (taps - 1) // 2
    gw_arr = np.zeros((cout, cin, taps), dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t i, off, lo, hi, t, co, ci
    cdef double gv
    for i in range(taps):
        off = (i - half) * dilation
        lo = -off if off < 0 else 0
        hi = frames - off if off > 0 else frames
        for t in range(lo, hi):
            for co in range(cout):
                gv = g[t, co]
                for ci in range(cin):
                    gw[co, ci, i] += gv * x[t + off, ci]
    return gw_arr
