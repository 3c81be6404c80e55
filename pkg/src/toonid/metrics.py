"""Evaluation metrics: name-list AP, detection mAP over an IoU sweep, sentence-level
speaker AP, and diarisation error rate.

All average precisions are uninterpolated. DER uses absolute label identity
(predictions carry bank names, so no speaker mapping is applied).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import BoundingBox
from .errors import EvaluationError
from .visual import box_iou

Turn = tuple[float, float, str]  # (start_s, end_s, speaker)


def default_iou_sweep() -> list[float]:
    """IoU thresholds 0.50 to 0.95 in steps of 0.05."""
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


def name_list_ap(predictions: Sequence[tuple[str, float]], gt_names: set) -> float:
    """Uninterpolated AP of a ranked name list against the ground-truth set.

    Duplicate predicted names keep their best score; ranking ties keep input
    order.
    """
    if not gt_names:
        raise EvaluationError("ground-truth name set is empty")
    best: dict[str, float] = {}
    order: list[str] = []
    for name, score in predictions:
        if name not in best:
            order.append(name)
        if name not in best or score > best[name]:
            best[name] = score
    ranked = sorted(order, key=lambda n: -best[n])
    hits = 0
    ap = 0.0
    for rank, name in enumerate(ranked, start=1):
        if name in gt_names:
            hits += 1
            ap += hits / rank
    return ap / len(gt_names)


def _class_ap(preds: Sequence[tuple[int, BoundingBox, float]],
              gt_by_frame: Mapping[int, list[BoundingBox]],
              threshold: float) -> float:
    n_gt = sum(len(v) for v in gt_by_frame.values())
    ranked = sorted(range(len(preds)), key=lambda i: -preds[i][2])
    matched: dict[int, set] = {f: set() for f in gt_by_frame}
    hits = 0
    ap = 0.0
    for rank, i in enumerate(ranked, start=1):
        frame, box, _ = preds[i]
        candidates = gt_by_frame.get(frame, [])
        best_iou, best_j = 0.0, None
        for j, gt_box in enumerate(candidates):
            if j in matched[frame]:
                continue
            iou = box_iou(box, gt_box)
            if iou >= threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j is not None:
            matched[frame].add(best_j)
            hits += 1
            ap += hits / rank
    return ap / n_gt


def detection_map(preds: Mapping[int, Sequence[tuple[BoundingBox, float, str]]],
                  gt: Mapping[int, Sequence[tuple[BoundingBox, str]]],
                  thresholds: Sequence[float]) -> tuple[dict[float, float], float]:
    """Class-averaged then threshold-averaged detection AP.

    ``preds`` and ``gt`` map frame index to detections; only frames present in
    the ground truth are scored (an annotated frame with no boxes must appear
    with an empty list so false positives there count). Classes are the names
    occurring in the ground truth.
    """
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    if list(thresholds) != sorted(set(thresholds)):
        raise ValueError("thresholds must be strictly increasing")
    classes = sorted({name for boxes in gt.values() for _, name in boxes})
    per_threshold: dict[float, float] = {}
    if not classes:
        return {t: 0.0 for t in thresholds}, 0.0

    by_class_preds: dict[str, list[tuple[int, BoundingBox, float]]] = {c: [] for c in classes}
    for frame in sorted(gt):
        for box, score, name in preds.get(frame, []):
            if name in by_class_preds:
                by_class_preds[name].append((frame, box, score))
    by_class_gt: dict[str, dict[int, list[BoundingBox]]] = {c: {} for c in classes}
    for frame in sorted(gt):
        for box, name in gt[frame]:
            by_class_gt[name].setdefault(frame, []).append(box)

    for t in thresholds:
        aps = [_class_ap(by_class_preds[c], by_class_gt[c], t) for c in classes]
        per_threshold[t] = sum(aps) / len(aps)
    mean = sum(per_threshold.values()) / len(per_threshold)
    return per_threshold, mean


def speaker_sentence_ap(preds: Sequence[tuple[str, str, float]],
                        gt: Mapping[str, str]) -> float:
    """AP of confidence-ranked per-segment speaker predictions.

    ``preds`` holds (segment_id, predicted speaker, confidence); a prediction
    is a hit iff it equals the segment's ground-truth speaker. Normalized by
    the number of hits in the ranking; 0.0 when nothing is correct.
    """
    pred_ids = [p[0] for p in preds]
    if set(pred_ids) != set(gt) or len(pred_ids) != len(set(pred_ids)):
        raise EvaluationError("prediction segment ids do not match ground truth",
                              missing=sorted(set(gt) - set(pred_ids))[:5],
                              unexpected=sorted(set(pred_ids) - set(gt))[:5])
    ranked = sorted(range(len(preds)), key=lambda i: -preds[i][2])
    correct = [preds[i][1] == gt[preds[i][0]] for i in ranked]
    positives = sum(correct)
    if positives == 0:
        return 0.0
    hits = 0
    ap = 0.0
    for rank, ok in enumerate(correct, start=1):
        if ok:
            hits += 1
            ap += hits / rank
    return ap / positives


@dataclass(frozen=True)
class DerBreakdown:
    missed: float
    false_alarm: float
    confusion: float
    gt_time: float

    @property
    def rate(self) -> float:
        return (self.missed + self.false_alarm + self.confusion) / self.gt_time


def _check_turns(turns: Sequence[Turn], what: str):
    for start, end, _ in turns:
        if not start < end:
            raise EvaluationError(f"{what} turn has start >= end", start=start, end=end)


def der_components(pred: Sequence[Turn], gt: Sequence[Turn], include_overlap: bool = True,
                   collar_s: float = 0.0) -> DerBreakdown:
    """Timeline algebra behind DER: missed, false alarm, and confusion time.

    Regions within +-collar_s of a ground-truth turn boundary are excluded
    from scoring; with include_overlap=False, regions where the ground truth
    has two or more simultaneous speakers are excluded from both the error
    terms and the reference time.
    """
    if collar_s < 0:
        raise EvaluationError("collar must be >= 0", collar_s=collar_s)
    _check_turns(gt, "ground-truth")
    _check_turns(pred, "predicted")

    points = set()
    collar_zones = []
    for start, end, _ in gt:
        points.update((start, end))
        if collar_s > 0:
            collar_zones.append((start - collar_s, start + collar_s))
            collar_zones.append((end - collar_s, end + collar_s))
            points.update((start - collar_s, start + collar_s, end - collar_s, end + collar_s))
    for start, end, _ in pred:
        points.update((start, end))
    boundaries = sorted(points)

    missed = false_alarm = confusion = gt_time = 0.0
    for t0, t1 in zip(boundaries, boundaries[1:]):
        if t1 <= t0:
            continue
        mid = (t0 + t1) / 2
        if any(lo < mid < hi for lo, hi in collar_zones):
            continue
        g = {spk for start, end, spk in gt if start <= mid < end}
        if not include_overlap and len(g) >= 2:
            continue
        p = {spk for start, end, spk in pred if start <= mid < end}
        dur = t1 - t0
        gt_time += dur * len(g)
        missed += dur * max(0, len(g) - len(p))
        false_alarm += dur * max(0, len(p) - len(g))
        confusion += dur * (min(len(g), len(p)) - len(g & p))
    if gt_time <= 0:
        raise EvaluationError("no scoreable ground-truth speech time")
    return DerBreakdown(missed=missed, false_alarm=false_alarm, confusion=confusion,
                        gt_time=gt_time)


def der(pred: Sequence[Turn], gt: Sequence[Turn], include_overlap: bool = True,
        collar_s: float = 0.0) -> float:
    """Diarisation error rate: (missed + false alarm + confusion) / reference time."""
    return der_components(pred, gt, include_overlap=include_overlap, collar_s=collar_s).rate
