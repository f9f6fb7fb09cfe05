"""Self-supervised domain-adaptation machinery.

Segments frame features, pools them with entropy-derived attention,
builds shuffled source/target orderings with their permutation labels,
and assembles the per-frame prediction loss, the two adversarial domain
losses, the attentive entropy regularizer, and their weighted total.

Sign convention: adversarial maximization is realized entirely by the
gradient-reversal operation placed on the paths into the domain heads,
so the total loss adds every adaptation term positively and is minimized
by a single optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


# ---------------------------------------------------------------------------
# segmenting and attentive pooling


def segment_bounds(frames: int, m: int) -> list[tuple[int, int]]:
    """Split [0, frames) into m contiguous ranges, longer ones first."""
    if m < 1:
        raise ValueError(f"segment count must be >= 1, got {m}")
    if frames < m:
        raise ValueError(f"cannot split {frames} frames into {m} segments")
    base, extra = divmod(frames, m)
    bounds = []
    start = 0
    for i in range(m):
        stop = start + base + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def split_segments(features: Tensor, m: int) -> list[Tensor]:
    return [ad.slice_rows(features, lo, hi)
            for lo, hi in segment_bounds(features.shape[0], m)]


def _row_entropies(p: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1)


def _check_rows_normalized(p: np.ndarray, what: str) -> None:
    if p.ndim != 2:
        raise ValueError(f"{what}: expected a (T, C) probability matrix, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-5):
        raise ValueError(f"{what}: rows are not normalized probabilities")


def attention_weights(domain_probs: np.ndarray) -> np.ndarray:
    """Per-frame pooling weight (1 - H(d)) + 1 from binary domain probabilities.

    Low domain entropy (well-separated domains) weights a frame more; the
    +1 residual keeps every weight in [2 - ln 2, 2].
    """
    d = np.asarray(domain_probs, dtype=np.float64)
    _check_rows_normalized(d, "attention_weights")
    return 2.0 - _row_entropies(d)


def datp(features_seg: Tensor, domain_probs_seg, differentiate_attention: bool = False) -> Tensor:
    """Domain-attentive temporal pooling of one segment: (T', F) -> (1, F).

    v = (1/T') * sum_j w_j * f_j with w from attention_weights. The weights
    are constants by default; pass a tensor and set differentiate_attention
    to let gradients flow through the entropy term as well.
    """
    frames = features_seg.shape[0]
    d_value = domain_probs_seg.value if isinstance(domain_probs_seg, Tensor) \
        else np.asarray(domain_probs_seg, dtype=np.float64)
    if d_value.shape[0] != frames:
        raise ValueError(f"datp: {frames} feature frames vs {d_value.shape[0]} domain rows")
    if differentiate_attention:
        if not isinstance(domain_probs_seg, Tensor):
            raise ValueError("datp: differentiate_attention needs a tensor of domain probabilities")
        _check_rows_normalized(d_value, "datp")
        w = ad.add_scalar(ad.scale(ad.entropy_rows(domain_probs_seg), -1.0), 2.0)
        return ad.scale(ad.sum_rows(ad.mul(w, features_seg)), 1.0 / frames)
    w = attention_weights(d_value)
    return ad.weighted_row_sum(features_seg, w / frames)


# ---------------------------------------------------------------------------
# permutation labels


def permutation_count(m: int) -> int:
    """Number of balanced arrangements of m source and m target segments."""
    if m < 1:
        raise ValueError(f"segment count must be >= 1, got {m}")
    return math.comb(2 * m, m)


@dataclass(frozen=True)
class PermutationLabel:
    """A balanced source(0)/target(1) slot sequence and its lexicographic rank."""
    domain_seq: tuple[int, ...]
    class_index: int


def _validated_seq(domain_seq) -> tuple[int, ...]:
    seq = tuple(int(v) for v in domain_seq)
    if any(v not in (0, 1) for v in seq):
        raise ValueError(f"domain sequence must be binary, got {seq}")
    if len(seq) == 0 or len(seq) % 2 or seq.count(0) != seq.count(1):
        raise ValueError(f"domain sequence must balance sources and targets, got {seq}")
    return seq


def encode_permutation(domain_seq) -> int:
    """Lexicographic rank of a balanced binary sequence (0 sorts first)."""
    seq = _validated_seq(domain_seq)
    zeros = ones = len(seq) // 2
    rank = 0
    for v in seq:
        if v == 1:
            rank += math.comb(zeros - 1 + ones, ones)
            ones -= 1
        else:
            zeros -= 1
    return rank


def decode_permutation(class_index: int, m: int) -> tuple[int, ...]:
    total = permutation_count(m)
    if not 0 <= class_index < total:
        raise ValueError(f"class index {class_index} outside [0, {total})")
    zeros = ones = m
    rank = class_index
    seq = []
    for _ in range(2 * m):
        with_zero = math.comb(zeros - 1 + ones, ones) if zeros > 0 else 0
        if rank < with_zero:
            seq.append(0)
            zeros -= 1
        else:
            rank -= with_zero
            seq.append(1)
            ones -= 1
    return tuple(seq)


def shuffle_and_label(v_source: Sequence[Tensor], v_target: Sequence[Tensor],
                      rng: np.random.Generator) -> tuple[Tensor, PermutationLabel]:
    """Interleave pooled segments uniformly at random, preserving each
    domain's internal order, and concatenate into one (1, 2m*F) feature.

    The label records which slots hold target segments and the rank of
    that arrangement among all C(2m, m) balanced possibilities.
    """
    if len(v_source) != len(v_target):
        raise ValueError(f"need equal segment counts, got {len(v_source)} vs {len(v_target)}")
    m = len(v_source)
    if m < 1:
        raise ValueError("need at least one segment per domain")
    slots = np.zeros(2 * m, dtype=np.int64)
    slots[rng.permutation(2 * m)[:m]] = 1
    src_iter = iter(v_source)
    tgt_iter = iter(v_target)
    ordered = [next(tgt_iter) if s else next(src_iter) for s in slots]
    seq = tuple(int(s) for s in slots)
    return ad.concat_cols(ordered), PermutationLabel(seq, encode_permutation(seq))


# ---------------------------------------------------------------------------
# loss terms


def prediction_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray | None = None,
                    alpha: float = 0.15, tau: float = 4.0) -> Tensor:
    """Masked per-frame cross-entropy plus truncated smoothing penalty.

    The smoothing term is the mean squared difference of adjacent-frame
    log-probabilities, each difference clipped to [-tau, tau], averaged
    over all frame transitions and classes; it applies to every frame
    regardless of the label mask.
    """
    frames = logits.shape[0]
    logp = ad.log_softmax_rows(logits)
    loss = ad.masked_nll(logp, labels, mask)
    if alpha != 0.0 and frames > 1:
        delta = ad.sub(ad.slice_rows(logp, 1, frames), ad.slice_rows(logp, 0, frames - 1))
        clipped = ad.clamp(delta, -tau, tau)
        loss = ad.add(loss, ad.scale(ad.mean_all(ad.mul(clipped, clipped)), alpha))
    return loss


def local_domain_loss(source_logits: Tensor, target_logits: Tensor) -> Tensor:
    """Binary domain cross-entropy, averaged per domain then across domains.

    Source frames carry domain label 0, target frames label 1; inputs are
    the binary head's logits (fed through gradient reversal upstream).
    """
    t_s, t_t = source_logits.shape[0], target_logits.shape[0]
    if t_s == 0 or t_t == 0:
        raise ValueError("local_domain_loss: empty frame sequence")
    nll_s = ad.masked_nll(ad.log_softmax_rows(source_logits), np.zeros(t_s, dtype=np.int64))
    nll_t = ad.masked_nll(ad.log_softmax_rows(target_logits), np.ones(t_t, dtype=np.int64))
    return ad.scale(ad.add(nll_s, nll_t), 0.5)


def global_domain_loss(order_logits: Tensor, class_index: int) -> Tensor:
    """Cross-entropy of the (1, P) permutation logits at the drawn label."""
    if order_logits.value.ndim != 2 or order_logits.shape[0] != 1:
        raise ValueError(f"global_domain_loss: expected (1, P) logits, got {order_logits.shape}")
    p = order_logits.shape[1]
    if not 0 <= class_index < p:
        raise ValueError(f"global_domain_loss: class {class_index} outside [0, {p})")
    return ad.masked_nll(ad.log_softmax_rows(order_logits),
                         np.asarray([class_index], dtype=np.int64))


def attentive_entropy_loss(class_probs: Tensor, domain_probs,
                           differentiate_attention: bool = False) -> Tensor:
    """Mean of (H(d_j) + 1) * H(y_j) over frames.

    Domain-ambiguous frames (high domain entropy) dominate, pushing the
    classifier toward confident predictions where domains already align.
    The domain factor is a constant weight unless differentiate_attention.
    """
    frames = class_probs.shape[0]
    d_value = domain_probs.value if isinstance(domain_probs, Tensor) \
        else np.asarray(domain_probs, dtype=np.float64)
    if d_value.shape[0] != frames:
        raise ValueError(f"attentive_entropy_loss: {frames} class rows vs "
                         f"{d_value.shape[0]} domain rows")
    _check_rows_normalized(class_probs.value, "attentive_entropy_loss: class probabilities")
    _check_rows_normalized(d_value, "attentive_entropy_loss: domain probabilities")
    h = ad.entropy_rows(class_probs)
    if differentiate_attention:
        if not isinstance(domain_probs, Tensor):
            raise ValueError("attentive_entropy_loss: differentiate_attention needs a tensor")
        w = ad.add_scalar(ad.entropy_rows(domain_probs), 1.0)
        return ad.mean_all(ad.mul(w, h))
    w = _row_entropies(d_value) + 1.0
    return ad.sum_all(ad.weighted_row_sum(h, w / frames))


# ---------------------------------------------------------------------------
# weights, schedule, total


@dataclass(frozen=True)
class LossWeights:
    """Effective loss weights at one optimizer step."""
    alpha: float = 0.15
    mu: float = 0.01
    beta_l: float = 0.0
    beta_g: float = 0.0
    grl_lambda: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "mu", "beta_l", "beta_g", "grl_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def adversarial_ramp(progress: float) -> float:
    """Monotone 0 -> 1 ramp 2 / (1 + exp(-10 p)) - 1, progress clamped to [0, 1]."""
    p = min(max(float(progress), 0.0), 1.0)
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def beta_schedule(progress: float) -> tuple[float, float, float]:
    """Shared ramp value for (beta_l, beta_g, grl_lambda)."""
    r = adversarial_ramp(progress)
    return (r, r, r)


@dataclass
class StageDALosses:
    """Adaptation loss terms of one stage; order is absent outside full mode."""
    binary: Tensor
    entropy: Tensor
    order: Tensor | None = None


def total_loss(prediction_losses: Sequence[Tensor], da_losses: Sequence[StageDALosses],
               weights: LossWeights, num_stages: int, num_da_stages: int) -> Tensor:
    """Sum of per-stage prediction losses plus weighted adaptation terms.

    Minimizing the result reproduces the adversarial saddle objective
    because gradient reversal already flips the domain-loss gradients on
    their way into the backbone.
    """
    if len(prediction_losses) != num_stages:
        raise ValueError(f"expected {num_stages} prediction losses, got {len(prediction_losses)}")
    if len(da_losses) != num_da_stages:
        raise ValueError(f"expected {num_da_stages} adaptation stages, got {len(da_losses)}")
    total = prediction_losses[0]
    for term in prediction_losses[1:]:
        total = ad.add(total, term)
    for stage in da_losses:
        total = ad.add(total, ad.scale(stage.binary, weights.beta_l))
        if stage.order is None:
            if weights.beta_g != 0.0:
                raise ValueError("missing order-prediction loss for a stage with beta_g > 0")
        else:
            total = ad.add(total, ad.scale(stage.order, weights.beta_g))
        total = ad.add(total, ad.scale(stage.entropy, weights.mu))
    return total
