"""Training loop, optimizer, schedules, and evaluation.

Batch size is one video pair: every optimizer step forwards one source
video (supervised) and one target video (unlabeled), composes the full
objective, and applies one Adam update. Targets are drawn uniformly with
replacement per source video, so a small target split is revisited many
times per epoch. Everything is deterministic given (seed, config, data):
pairing, shuffling, and initialization draw from separate seeded streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import adapt
from . import autodiff as ad
from .adapt import LossWeights, StageDALosses, beta_schedule
from .data import Video, make_label_mask
from .errors import NumericalError
from .metrics import MetricsReport, aggregate_corpus, score_video
from .model import ModelConfig, SegmentationModel

MODES = ("source-only", "local", "full")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    beta_l, beta_g, and grl multiply the shared adversarial ramp. The
    upstream convention ramps every weight to 1; at this scale the
    one-sample-per-step sequential-domain game diverges there, so the
    defaults damp its loss weight and the reversal strength (both were
    fixed empirically on the synthetic benchmark, see README).
    """
    model: ModelConfig
    mode: str = "full"
    epochs: int = 25
    learning_rate: float = 5e-4
    alpha: float = 0.15
    mu: float = 0.01
    beta_l: float = 1.0
    beta_g: float = 0.3
    grl: float = 0.25
    labeled_fraction: float = 1.0
    seed: int = 0
    target_reload: int = 1     # passes over the source list per epoch
    differentiable_attention: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")
        if self.target_reload < 1:
            raise ValueError(f"target_reload must be >= 1, got {self.target_reload}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def loss_weights_at(config: TrainConfig, progress: float) -> LossWeights:
    """Effective weights at a point of training; modes zero their terms."""
    if config.mode == "source-only":
        return LossWeights(alpha=config.alpha, mu=0.0, beta_l=0.0, beta_g=0.0, grl_lambda=0.0)
    ramp_l, ramp_g, ramp_lam = beta_schedule(progress)
    return LossWeights(
        alpha=config.alpha,
        mu=config.mu,
        beta_l=config.beta_l * ramp_l,
        beta_g=(config.beta_g * ramp_g) if config.mode == "full" else 0.0,
        grl_lambda=config.grl * ramp_lam,
    )


# ---------------------------------------------------------------------------
# Adam


@dataclass
class TrainState:
    total_steps: int
    step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def progress(self) -> float:
        return self.step / self.total_steps if self.total_steps else 1.0


def adam_step(params: dict[str, ad.Tensor], state: TrainState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} at step {t}")
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.value), np.zeros_like(p.value))
        m, v = state.moments[name]
        if g is None:
            m *= beta1
            v *= beta2
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# objective composition


@dataclass
class LossBreakdown:
    total: ad.Tensor
    prediction: list[ad.Tensor]
    da: list[StageDALosses]
    perm_classes: list[int]

    def scalars(self) -> dict[str, float]:
        out = {"total": self.total.item(),
               "pred": float(sum(t.item() for t in self.prediction))}
        if self.da:
            out["ld"] = float(sum(s.binary.item() for s in self.da))
            out["ae"] = float(sum(s.entropy.item() for s in self.da))
            orders = [s.order.item() for s in self.da if s.order is not None]
            if orders:
                out["gd"] = float(sum(orders))
        return out


def compose_losses(model: SegmentationModel, source: Video, target: Video | None,
                   weights: LossWeights, mode: str = "full",
                   labeled_mask: np.ndarray | None = None,
                   shuffle_rng: np.random.Generator | None = None,
                   d_hat_override: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
                   differentiate_attention: bool = False) -> LossBreakdown:
    """Forward both videos and assemble every loss term for one step.

    d_hat_override substitutes fixed binary-domain probabilities per stage
    (used by gradient checks to freeze the attention weights).
    """
    cfg = model.config
    outs_s = model.forward(source.features)
    preds = [adapt.prediction_loss(o.logits, source.labels, labeled_mask, weights.alpha)
             for o in outs_s]
    if mode == "source-only":
        total = adapt.total_loss(preds, [], weights, cfg.num_stages, 0)
        return LossBreakdown(total, preds, [], [])

    if target is None:
        raise ValueError(f"mode {mode!r} needs a target video")
    outs_t = model.forward(target.features)
    da_losses: list[StageDALosses] = []
    perm_classes: list[int] = []
    for s in cfg.da_stages:
        f_s = outs_s[s - 1].features
        f_t = outs_t[s - 1].features
        dlog_s = model.frame_domain_logits(s, ad.gradient_reverse(f_s, weights.grl_lambda))
        dlog_t = model.frame_domain_logits(s, ad.gradient_reverse(f_t, weights.grl_lambda))
        l_binary = adapt.local_domain_loss(dlog_s, dlog_t)

        if differentiate_attention:
            d_s, d_t = ad.softmax_rows(dlog_s), ad.softmax_rows(dlog_t)
        elif d_hat_override is not None and s in d_hat_override:
            d_s, d_t = d_hat_override[s]
        else:
            d_s = _softmax_np(dlog_s.value)
            d_t = _softmax_np(dlog_t.value)

        probs_cat = ad.concat_rows([outs_s[s - 1].probs, outs_t[s - 1].probs])
        d_cat = ad.concat_rows([d_s, d_t]) if differentiate_attention \
            else np.concatenate([_values(d_s), _values(d_t)], axis=0)
        l_entropy = adapt.attentive_entropy_loss(probs_cat, d_cat, differentiate_attention)

        l_order = None
        if mode == "full":
            m = cfg.segment_count
            v_s = [adapt.datp(seg, _seg_probs(d_s, lo, hi, differentiate_attention),
                              differentiate_attention)
                   for seg, (lo, hi) in zip(adapt.split_segments(f_s, m),
                                            adapt.segment_bounds(f_s.shape[0], m))]
            v_t = [adapt.datp(seg, _seg_probs(d_t, lo, hi, differentiate_attention),
                              differentiate_attention)
                   for seg, (lo, hi) in zip(adapt.split_segments(f_t, m),
                                            adapt.segment_bounds(f_t.shape[0], m))]
            if shuffle_rng is None:
                raise ValueError("full mode needs a shuffle rng")
            pooled, label = adapt.shuffle_and_label(v_s, v_t, shuffle_rng)
            order_logits = model.segment_order_logits(
                s, ad.gradient_reverse(pooled, weights.grl_lambda))
            l_order = adapt.global_domain_loss(order_logits, label.class_index)
            perm_classes.append(label.class_index)
        da_losses.append(StageDALosses(binary=l_binary, entropy=l_entropy, order=l_order))

    total = adapt.total_loss(preds, da_losses, weights, cfg.num_stages, len(cfg.da_stages))
    return LossBreakdown(total, preds, da_losses, perm_classes)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _values(d) -> np.ndarray:
    return d.value if isinstance(d, ad.Tensor) else np.asarray(d)


def _seg_probs(d, lo: int, hi: int, as_tensor: bool):
    if as_tensor:
        return ad.slice_rows(d, lo, hi)
    return _values(d)[lo:hi]


# ---------------------------------------------------------------------------
# the loop


def train_step(model: SegmentationModel, state: TrainState, source: Video,
               target: Video, config: TrainConfig,
               shuffle_rng: np.random.Generator) -> dict:
    """One optimizer step on one source/target pair; returns the step log."""
    progress = state.progress
    weights = loss_weights_at(config, progress)
    mask = None
    if config.labeled_fraction < 1.0:
        mask = make_label_mask(source.labels.size, config.labeled_fraction)
    breakdown = compose_losses(
        model, source, target if config.mode != "source-only" else None,
        weights, mode=config.mode, labeled_mask=mask, shuffle_rng=shuffle_rng,
        differentiate_attention=config.differentiable_attention)
    if not np.isfinite(breakdown.total.item()):
        raise NumericalError(f"non-finite loss at step {state.step}: "
                             f"{breakdown.scalars()}")
    model.zero_grads()
    ad.backward(breakdown.total)
    adam_step(model.params, state, config.learning_rate)
    rec = {"step": state.step, "progress": progress,
           "beta_l": weights.beta_l, "beta_g": weights.beta_g,
           "lambda": weights.grl_lambda,
           "source": source.vid, "target": target.vid,
           "perm_classes": breakdown.perm_classes}
    rec.update(breakdown.scalars())
    return rec


def train(source_videos: Sequence[Video], target_videos: Sequence[Video],
          config: TrainConfig,
          epoch_callback: Callable[[int, dict], None] | None = None
          ) -> tuple[SegmentationModel, list[dict]]:
    """Train a model; returns it with the per-step log.

    Deterministic given (seed, config, data). At the end parameters are
    rounded to the checkpoint's float32 grid so that saving and reloading
    reproduces in-memory evaluation exactly.
    """
    if not source_videos:
        raise ValueError("empty source split")
    if not target_videos:
        raise ValueError("empty target split")
    model = SegmentationModel(config.model, seed=config.seed)
    pairing_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    pairing_rng = np.random.default_rng(pairing_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    total_steps = config.epochs * config.target_reload * len(source_videos)
    state = TrainState(total_steps=total_steps)
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        epoch_start = len(log)
        for _ in range(config.target_reload):
            for i in pairing_rng.permutation(len(source_videos)):
                target = target_videos[int(pairing_rng.integers(len(target_videos)))]
                log.append(train_step(model, state, source_videos[int(i)], target,
                                      config, shuffle_rng))
        if epoch_callback is not None:
            epoch_callback(epoch, _epoch_summary(log[epoch_start:]))
    model.snap_to_storage_precision()
    return model, log


def _epoch_summary(records: list[dict]) -> dict:
    keys = [k for k in ("total", "pred", "ld", "gd", "ae") if k in records[-1]]
    return {k: float(np.mean([r[k] for r in records if k in r])) for k in keys}


# ---------------------------------------------------------------------------
# evaluation


def predict_labels(model: SegmentationModel, video: Video) -> np.ndarray:
    """Final-stage argmax per frame; ties break toward the lowest class id."""
    with ad.no_grad():
        outputs = model.forward(video.features)
    return np.argmax(outputs[-1].probs.value, axis=1)


def evaluate(model: SegmentationModel, videos: Sequence[Video],
             overlaps=(10, 25, 50), exclude_class: int | None = None
             ) -> tuple[MetricsReport, dict[str, np.ndarray]]:
    """Score a split; returns the corpus report and per-video predictions."""
    if not videos:
        raise ValueError("empty evaluation split")
    reports = []
    predictions: dict[str, np.ndarray] = {}
    for video in videos:
        pred = predict_labels(model, video)
        predictions[video.vid] = pred
        reports.append(score_video(pred, video.labels, overlaps, exclude_class))
    return aggregate_corpus(reports), predictions
