"""Detection evaluation: IoU, confidence-ordered greedy matching,
interpolated average precision, and mAP over an IoU-threshold sweep.

AP uses 101-point interpolation (recalls 0.00, 0.01, ..., 1.00 against the
right-to-left precision envelope), the convention implied by evaluating on
COCO-style data; all-point integration is available behind a flag for
cross-checks. Equal-confidence detections are ordered by (image_id, input
index) so results are identical across platforms and input permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Annotation, BBox, DatasetManifest

DEFAULT_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True, slots=True)
class Detection:
    image_id: str
    class_id: int
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not math.isfinite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True, slots=True)
class EvalResult:
    ap_per_threshold: dict[float, float]
    map50: float
    map50_95: float
    pr_points: tuple[tuple[float, float], ...] = ()
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "ap_per_threshold": {f"{t:.2f}": ap for t, ap in
                                 sorted(self.ap_per_threshold.items())},
            "map50": self.map50,
            "map50_95": self.map50_95,
            "pr_points": [[r, p] for r, p in self.pr_points],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalResult":
        return cls(
            ap_per_threshold={float(t): float(ap) for t, ap in
                              data["ap_per_threshold"].items()},
            map50=float(data["map50"]),
            map50_95=float(data["map50_95"]),
            pr_points=tuple((float(r), float(p)) for r, p in data.get("pr_points", [])),
            warnings=tuple(data.get("warnings", [])),
        )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in relative coordinates."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def sort_detections(dets: Sequence[Detection]) -> list[int]:
    """Stable global ranking: (-confidence, image_id, input index)."""
    return sorted(range(len(dets)),
                  key=lambda i: (-dets[i].confidence, dets[i].image_id, i))


def match_detections(dets: Sequence[Detection], gts: Sequence[Annotation],
                     iou_threshold: float) -> tuple[list[bool], list[int], list[bool]]:
    """Greedy one-to-one matching for a single image.

    Detections are sorted internally (stable, by descending confidence);
    each one takes the highest-IoU unmatched ground truth of its class with
    IoU >= threshold. Returns (tp flags in ranked order, ranked detection
    indices, per-gt matched flags).
    """
    order = sort_detections(dets)
    gt_matched = [False] * len(gts)
    tp_flags: list[bool] = []
    for i in order:
        det = dets[i]
        best_iou = 0.0
        best_gt = -1
        for g, gt in enumerate(gts):
            if gt_matched[g] or gt.class_id != det.class_id:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_gt = g
        if best_gt >= 0:
            gt_matched[best_gt] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    return tp_flags, order, gt_matched


def average_precision(tp_flags: Sequence[bool], total_gt: int,
                      all_points: bool = False) -> float:
    """AP of a ranked TP/FP sequence against `total_gt` ground truths.

    101-point interpolation by default: the precision envelope (running max
    from the right) sampled at recalls {0, 0.01, ..., 1.00} and averaged.
    """
    if total_gt < 0:
        raise ValueError("total_gt must be non-negative")
    if total_gt == 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    recall = tp_cum / total_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    if all_points:
        ap = 0.0
        prev_r = 0.0
        for r, p in zip(recall, envelope):
            ap += (r - prev_r) * p
            prev_r = r
        return float(ap)

    sample_recalls = np.linspace(0.0, 1.0, 101)
    # first ranked point with recall >= r carries the envelope value there
    idx = np.searchsorted(recall, sample_recalls, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def pr_curve(tp_flags: Sequence[bool], total_gt: int) -> tuple[tuple[float, float], ...]:
    """(recall, precision) envelope at the 101 sample recalls."""
    flags = np.asarray(tp_flags, dtype=bool)
    sample_recalls = np.linspace(0.0, 1.0, 101)
    if total_gt == 0 or flags.size == 0:
        return tuple((float(r), 0.0) for r in sample_recalls)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    recall = tp_cum / total_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, sample_recalls, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return tuple((float(r), float(p)) for r, p in zip(sample_recalls, sampled))


def evaluate(detections: Sequence[Detection], manifest: DatasetManifest,
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             all_points: bool = False) -> EvalResult:
    """mAP of a detection set against a manifest's ground truth.

    AP is computed per class and averaged over classes that have ground
    truth; classes with detections but no ground truth contribute AP 0 and
    a warning.
    """
    known_ids = set(manifest.ids())
    for det in detections:
        if det.image_id not in known_ids:
            raise ValueError(f"detection references unknown image {det.image_id!r}")

    n_classes = len(manifest.class_names)
    gts_by_image = {rec.id: rec.annotations for rec in manifest.records}
    dets_by_image: dict[str, list[tuple[int, Detection]]] = {}
    for i, det in enumerate(detections):
        dets_by_image.setdefault(det.image_id, []).append((i, det))

    total_gt = [0] * n_classes
    for rec in manifest.records:
        for ann in rec.annotations:
            total_gt[ann.class_id] += 1
    has_dets = [False] * n_classes
    for det in detections:
        if 0 <= det.class_id < n_classes:
            has_dets[det.class_id] = True

    warnings: list[str] = []
    ap_per_threshold: dict[float, float] = {}
    pr_points: tuple[tuple[float, float], ...] = ()

    for thr in thresholds:
        # (confidence rank key, class, tp) pooled across images
        ranked: list[tuple[tuple, int, bool]] = []
        for image_id, indexed in dets_by_image.items():
            dets = [d for _, d in indexed]
            keys = [(-d.confidence, image_id, orig) for orig, d in indexed]
            tp_flags, order, _ = match_detections(dets, gts_by_image[image_id], thr)
            for pos, tp in zip(order, tp_flags):
                ranked.append((keys[pos], dets[pos].class_id, tp))
        ranked.sort(key=lambda item: item[0])

        class_aps: list[float] = []
        curve_for_first_class: tuple[tuple[float, float], ...] = ()
        for cid in range(n_classes):
            flags = [tp for _, c, tp in ranked if c == cid]
            if total_gt[cid] == 0:
                if has_dets[cid]:
                    class_aps.append(0.0)
                    warnings.append(f"class {cid} has detections but no ground truth "
                                    f"at threshold {thr:.2f}")
                continue
            class_aps.append(average_precision(flags, total_gt[cid], all_points))
            if cid == 0 and math.isclose(thr, 0.5):
                curve_for_first_class = pr_curve(flags, total_gt[cid])
        ap_per_threshold[thr] = float(np.mean(class_aps)) if class_aps else 0.0
        if curve_for_first_class:
            pr_points = curve_for_first_class

    aps = [ap_per_threshold[t] for t in thresholds]
    map50 = ap_per_threshold.get(0.5, aps[0] if aps else 0.0)
    return EvalResult(ap_per_threshold=ap_per_threshold,
                      map50=float(map50),
                      map50_95=float(np.mean(aps)) if aps else 0.0,
                      pr_points=pr_points,
                      warnings=tuple(warnings))
