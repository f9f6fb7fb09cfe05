"""Frame- and segment-level evaluation for label sequences.

Three scores, all reported as percentages: frame accuracy, segmental edit
score (Levenshtein over the segment class strings, duration-blind), and
segmental F1 at an intersection-over-union threshold. A predicted segment
is a true positive when its best IoU against same-class ground-truth
segments strictly exceeds the threshold and that ground-truth segment is
still unmatched; matching is greedy in prediction order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_OVERLAPS = (10, 25, 50)


@dataclass(frozen=True)
class Segment:
    class_id: int
    start: int  # inclusive frame index
    end: int    # exclusive frame index

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty segment [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


def labels_to_segments(labels) -> list[Segment]:
    """Run-length encode a frame label sequence into maximal segments."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot segment an empty label sequence")
    change = np.nonzero(labels[1:] != labels[:-1])[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def frame_accuracy(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return 100.0 * float((pred == gt).sum()) / pred.size


def edit_score(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment]) -> float:
    """100 * (1 - Levenshtein(pred classes, gt classes) / max length)."""
    p = [s.class_id for s in pred_segs]
    g = [s.class_id for s in gt_segs]
    if not p and not g:
        return 100.0
    longest = max(len(p), len(g))
    return max(0.0, 100.0 * (1.0 - _levenshtein(p, g) / longest))


def _levenshtein(a: list[int], b: list[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i]
        for j, bj in enumerate(b, start=1):
            cost = 0 if ai == bj else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[len(b)]


def _segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def match_counts(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment],
                 k: float) -> tuple[int, int, int]:
    """Greedy in-order (tp, fp, fn) tallies at IoU threshold k percent."""
    if not 0 < k < 100:
        raise ValueError(f"overlap threshold must be in (0, 100), got {k}")
    threshold = k / 100.0
    used = [False] * len(gt_segs)
    tp = fp = 0
    for p in pred_segs:
        ious = [(_segment_iou(p, g) if g.class_id == p.class_id else 0.0) for g in gt_segs]
        best = int(np.argmax(ious)) if ious else -1
        if best >= 0 and ious[best] > threshold and not used[best]:
            used[best] = True
            tp += 1
        else:
            fp += 1
    fn = len(gt_segs) - tp
    return tp, fp, fn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def f1_at_k(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment],
            k: float) -> tuple[float, float, float]:
    """(precision, recall, F1) percentages at IoU threshold k percent."""
    return _prf(*match_counts(pred_segs, gt_segs, k))


@dataclass
class MetricsReport:
    """Scores plus the raw tallies needed for exact corpus aggregation."""
    acc: float
    edit: float
    f1: dict[int, float]
    frames_total: int
    frames_correct: int
    counts: dict[int, tuple[int, int, int]]
    videos: int = 1
    edit_sum: float = 0.0

    def to_json_dict(self) -> dict[str, float]:
        out = {"acc": _round4(self.acc), "edit": _round4(self.edit)}
        for k in sorted(self.f1):
            out[f"f1_{k}"] = _round4(self.f1[k])
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=False)


def _round4(v: float) -> float:
    return float(f"{v:.4f}")


def _drop_class(segs: list[Segment], class_id: int) -> list[Segment]:
    return [s for s in segs if s.class_id != class_id]


def score_video(pred, gt, overlaps: Iterable[int] = DEFAULT_OVERLAPS,
                exclude_class: int | None = None) -> MetricsReport:
    """Per-video report; exclude_class drops a background class everywhere."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    keep = np.ones(gt.size, dtype=bool) if exclude_class is None else gt != exclude_class
    frames_total = int(keep.sum())
    frames_correct = int(((pred == gt) & keep).sum())
    acc = 100.0 * frames_correct / frames_total if frames_total else 0.0
    pred_segs = labels_to_segments(pred)
    gt_segs = labels_to_segments(gt)
    if exclude_class is not None:
        pred_segs = _drop_class(pred_segs, exclude_class)
        gt_segs = _drop_class(gt_segs, exclude_class)
    edit = edit_score(pred_segs, gt_segs)
    counts = {k: match_counts(pred_segs, gt_segs, k) for k in overlaps}
    f1 = {k: _prf(*c)[2] for k, c in counts.items()}
    return MetricsReport(acc=acc, edit=edit, f1=f1, frames_total=frames_total,
                         frames_correct=frames_correct, counts=counts,
                         videos=1, edit_sum=edit)


def aggregate_corpus(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Pool accuracy over frames, average edit over videos, sum F1 tallies."""
    if not reports:
        raise ValueError("cannot aggregate an empty report set")
    frames_total = sum(r.frames_total for r in reports)
    frames_correct = sum(r.frames_correct for r in reports)
    videos = sum(r.videos for r in reports)
    edit_sum = sum(r.edit_sum for r in reports)
    ks = sorted(reports[0].counts)
    counts = {}
    for k in ks:
        tp = sum(r.counts[k][0] for r in reports)
        fp = sum(r.counts[k][1] for r in reports)
        fn = sum(r.counts[k][2] for r in reports)
        counts[k] = (tp, fp, fn)
    return MetricsReport(
        acc=100.0 * frames_correct / frames_total if frames_total else 0.0,
        edit=edit_sum / videos,
        f1={k: _prf(*c)[2] for k, c in counts.items()},
        frames_total=frames_total,
        frames_correct=frames_correct,
        counts=counts,
        videos=videos,
        edit_sum=edit_sum,
    )
