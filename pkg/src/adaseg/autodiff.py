"""Reverse-mode automatic differentiation over frame-major sequence tensors.

Values are numpy float64 arrays. Sequence data is frame-major: shape
(T, C), row t holding the features of frame t. Parameters may be 1-d
(biases), 2-d (pointwise / dense kernels) or 3-d (dilated-convolution
kernels, laid out (out_channels, in_channels, taps)).

Every operation that sees a grad-requiring input appends one record to an
implicit per-thread tape (a monotone sequence number on the output);
``backward`` replays the records reachable from the loss exactly once, in
reverse execution order. Gradients accumulate by summation into leaves
(tensors created with ``requires_grad=True``), so calling backward twice
without resetting doubles them; the caller owns the reset.

Each vjp closure returns a freshly allocated array the engine may mutate.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from . import _kernels

_EXEC = threading.local()


def _next_seq() -> int:
    seq = getattr(_EXEC, "seq", 0)
    _EXEC.seq = seq + 1
    return seq


def grad_enabled() -> bool:
    return getattr(_EXEC, "grad_enabled", True)


class no_grad:
    """Context manager that suppresses tape recording (inference mode)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _EXEC.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _EXEC.grad_enabled = self._prev
        return False


class _Record:
    __slots__ = ("inputs", "vjps", "seq")

    def __init__(self, inputs, vjps):
        self.inputs = inputs
        self.vjps = vjps
        self.seq = _next_seq()


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("value", "requires_grad", "grad", "_record")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise ValueError("tensor values must be finite")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: _Record | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _make(value: np.ndarray, inputs: tuple[Tensor, ...],
          vjps: tuple[Callable[[np.ndarray], np.ndarray], ...]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = _Record(inputs, vjps)
    else:
        out.requires_grad = False
        out._record = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Populate gradients of all leaves reachable from a scalar loss."""
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    # Gather the reachable subgraph once; sort by record sequence number so
    # replay follows reverse execution order exactly.
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        if t._record is not None:
            nodes.append(t)
            stack.extend(t._record.inputs)

    def _accumulate(t: Tensor, contrib: np.ndarray, grads: dict) -> None:
        if t._record is None:
            if t.grad is None:
                t.grad = np.zeros_like(t.value)
            t.grad += contrib
        else:
            acc = grads.get(id(t))
            if acc is None:
                grads[id(t)] = contrib
            else:
                acc += contrib

    grads: dict[int, np.ndarray] = {}
    seed = np.ones_like(loss.value)
    if loss._record is None:
        _accumulate(loss, seed, grads)
        return
    grads[id(loss)] = seed
    nodes.sort(key=lambda t: t._record.seq, reverse=True)
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        rec = t._record
        for inp, vjp in zip(rec.inputs, rec.vjps):
            if inp.requires_grad:
                _accumulate(inp, vjp(g), grads)


# ---------------------------------------------------------------------------
# elementwise and reduction operations


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), (lambda g: g.copy(), lambda g: g.copy()))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.value - b.value, (a, b), (lambda g: g.copy(), lambda g: -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; also accepts a column (T, 1) against (T, C)."""
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        ok = (av.ndim == 2 and bv.ndim == 2 and av.shape[0] == bv.shape[0]
              and (av.shape[1] == 1 or bv.shape[1] == 1))
        if not ok:
            raise ValueError(f"mul: incompatible shapes {av.shape} vs {bv.shape}")

    def vjp_a(g):
        out = g * bv
        if av.shape != out.shape:
            out = out.sum(axis=1, keepdims=True)
        return out

    def vjp_b(g):
        out = g * av
        if bv.shape != out.shape:
            out = out.sum(axis=1, keepdims=True)
        return out

    return _make(av * bv, (a, b), (vjp_a, vjp_b))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.value * s, (a,), (lambda g: g * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.value + c, (a,), (lambda g: g.copy(),))


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.value.sum()), (a,),
                 (lambda g: np.full_like(a.value, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return _make(np.asarray(a.value.mean()), (a,),
                 (lambda g: np.full_like(a.value, float(g) / n),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum a (T, C) tensor over frames into (1, C)."""
    return _make(a.value.sum(axis=0, keepdims=True), (a,),
                 (lambda g: np.broadcast_to(g, a.value.shape).copy(),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    value = np.clip(a.value, lo, hi)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(value, (a,), (lambda g: g * inside,))


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.value, 0.0)
    return _make(value, (a,), (lambda g: g * (value > 0),))


# ---------------------------------------------------------------------------
# row-structured operations


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.value.shape[0]):
        raise ValueError(f"slice_rows: bad range [{start}, {stop}) for {a.value.shape[0]} frames")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return out

    return _make(a.value[start:stop], (a,), (vjp,))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_rows: nothing to concatenate")
    sizes = [p.value.shape[0] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[lo:hi].copy()

    value = np.concatenate([p.value for p in parts], axis=0)
    return _make(value, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_cols: nothing to concatenate")
    sizes = [p.value.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]
        return lambda g: g[:, lo:hi].copy()

    value = np.concatenate([p.value for p in parts], axis=1)
    return _make(value, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def weighted_row_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Constant-weighted sum over frames: (T, C) x (T,) -> (1, C)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (a.value.shape[0],):
        raise ValueError(f"weighted_row_sum: need {a.value.shape[0]} weights, got {w.shape}")
    value = w @ a.value
    return _make(value[None, :], (a,), (lambda g: np.outer(w, g[0]),))


# ---------------------------------------------------------------------------
# rowwise softmax family


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return p * (g - (g * p).sum(axis=1, keepdims=True))

    return _make(p, (a,), (vjp,))


def log_softmax_rows(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = shifted - lse
    p = np.exp(value)

    def vjp(g):
        return g - p * g.sum(axis=1, keepdims=True)

    return _make(value, (a,), (vjp,))


def entropy(p) -> float:
    """Natural-log entropy of one probability vector (plain float utility).

    Zero entries contribute zero. Rejects vectors more than 1e-5 away from
    summing to one, or with negative entries.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("entropy: negative probability")
    if abs(p.sum() - 1.0) > 1e-5:
        raise ValueError(f"entropy: probabilities sum to {p.sum():.6f}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_rows(p: Tensor) -> Tensor:
    """Per-row natural-log entropy of a (T, C) probability tensor -> (T, 1).

    Differentiable in p; rows are trusted to be normalized by the caller.
    """
    pv = p.value
    safe = np.where(pv > 0, pv, 1.0)
    logp = np.log(safe)
    value = -(pv * logp).sum(axis=1, keepdims=True)

    def vjp(g):
        # dH/dp_k = -(log p_k + 1); zero entries keep subgradient 0
        return g * np.where(pv > 0, -(logp + 1.0), 0.0)

    return _make(value, (p,), (vjp,))


# ---------------------------------------------------------------------------
# convolution and classifier primitives


def dilated_conv1d(x: Tensor, w: Tensor, b: Tensor, dilation: int) -> Tensor:
    """Same-length dilated convolution with zero padding.

    x is (T, Cin), w is (Cout, Cin, taps) with odd taps, b is (Cout,);
    output frame t is sum_i w[:, :, i] @ x[t + (i - taps//2) * dilation]
    over in-range source frames.
    """
    if x.value.ndim != 2 or w.value.ndim != 3 or b.value.ndim != 1:
        raise ValueError("dilated_conv1d: x must be (T, Cin), w (Cout, Cin, taps), b (Cout,)")
    taps = w.value.shape[2]
    if taps % 2 == 0:
        raise ValueError(f"dilated_conv1d: tap count must be odd, got {taps}")
    if dilation < 1:
        raise ValueError(f"dilated_conv1d: dilation must be >= 1, got {dilation}")
    if w.value.shape[1] != x.value.shape[1] or w.value.shape[0] != b.value.shape[0]:
        raise ValueError(f"dilated_conv1d: shape mismatch x{x.value.shape} w{w.value.shape} b{b.value.shape}")
    value = _kernels.conv1d_forward(x.value, w.value, b.value, dilation)
    return _make(value, (x, w, b), (
        lambda g: _kernels.conv1d_backward_input(g, w.value, dilation),
        lambda g: _kernels.conv1d_backward_kernel(g, x.value, taps, dilation),
        lambda g: g.sum(axis=0),
    ))


def pointwise_conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-frame affine map: out[t] = w @ x[t] + b, w is (Cout, Cin)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or b.value.ndim != 1:
        raise ValueError("pointwise_conv: x must be (T, Cin), w (Cout, Cin), b (Cout,)")
    if w.value.shape[1] != x.value.shape[1] or w.value.shape[0] != b.value.shape[0]:
        raise ValueError(f"pointwise_conv: shape mismatch x{x.value.shape} w{w.value.shape} b{b.value.shape}")
    value = x.value @ w.value.T + b.value
    return _make(value, (x, w, b), (
        lambda g: g @ w.value,
        lambda g: g.T @ x.value,
        lambda g: g.sum(axis=0),
    ))


def gradient_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -lam."""
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"gradient_reverse: lambda must be nonnegative, got {lam}")
    return _make(x.value, (x,), (lambda g: g * -lam,))


def masked_nll(log_probs: Tensor, labels: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over masked frames.

    log_probs is (T, C) row log-probabilities, labels an int vector of
    length T, mask an optional boolean vector (None keeps every frame).
    """
    labels = np.asarray(labels)
    frames, classes = log_probs.value.shape
    if labels.shape != (frames,):
        raise ValueError(f"masked_nll: need {frames} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"masked_nll: labels out of range [0, {classes})")
    if mask is None:
        idx = np.arange(frames)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (frames,):
            raise ValueError(f"masked_nll: need {frames} mask entries, got shape {mask.shape}")
        idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise ValueError("masked_nll: mask retains no frames")
    picked = labels[idx]
    # exactly-rounded sum: the mean is invariant to frame reordering
    value = np.asarray(-math.fsum(log_probs.value[idx, picked]) / idx.size)

    def vjp(g):
        out = np.zeros_like(log_probs.value)
        out[idx, picked] = -float(g) / idx.size
        return out

    return _make(value, (log_probs,), (vjp,))
