"""Detection and classification metrics.

Covers the three report families the pipeline emits: VOC-style detection
precision/recall/F1/AP at IoU 0.5, per-class F1 with support-weighted
averaging for consensus labels, and the six-number COCO AP suite
(IoU sweep 0.50:0.05:0.95, 101-point recall interpolation, area buckets).
Score ties are broken by a stable key (subject id, then bbox) so every
metric is invariant to input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, iou
from .model import ExpertLabel, ResponseLabel, label_name

COCO_THRESHOLDS: tuple[float, ...] = tuple(0.5 + 0.05 * i for i in range(10))
_RECALL_GRID = np.arange(101) / 100.0

#: COCO area-bucket boundaries (scene units^2): small < 32^2,
#: medium 32^2..96^2 inclusive, large > 96^2.
AREA_SMALL_MAX = 32.0 ** 2
AREA_LARGE_MIN = 96.0 ** 2


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    subject_id: str
    score: float = 1.0
    label: ResponseLabel | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass
class PRCurve:
    """Precision/recall samples along the score-ranked detection list."""

    recalls: np.ndarray
    precisions: np.ndarray
    ap: float  # fraction in [0, 1]


@dataclass
class MatchResult:
    """Greedy detection-to-GT matching at one IoU threshold."""

    detections: list[Detection]  # score-descending, stable-tie order
    tp: np.ndarray               # bool per detection, aligned with `detections`
    n_gt: int
    gt_matched: np.ndarray       # bool per GT (post-sort order)

    @property
    def n_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.tp).sum())

    @property
    def n_fn(self) -> int:
        return self.n_gt - self.n_tp


@dataclass
class VocReport:
    precision: float  # percent
    recall: float
    f1: float
    ap: float
    curve: PRCurve

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "ap50": self.ap}


@dataclass
class F1Report:
    per_class: dict[ResponseLabel, float]   # percent F1
    support: dict[ResponseLabel, int]
    weighted_average: float

    @property
    def total_support(self) -> int:
        return sum(self.support.values())

    def as_dict(self) -> dict:
        out = {"weighted_average": self.weighted_average, "total_support": self.total_support,
               "per_class": {}}
        for label, f1 in self.per_class.items():
            out["per_class"][label_name(label)] = {"f1": f1, "support": self.support[label]}
        return out


@dataclass
class CocoReport:
    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float

    def as_dict(self) -> dict:
        return {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75,
                "ap_small": self.ap_small, "ap_medium": self.ap_medium,
                "ap_large": self.ap_large}


def _det_sort_key(d: Detection):
    return (-d.score, d.subject_id, d.bbox.as_tuple())


def _gt_sort_key(g):
    return (g.subject_id, g.bbox.as_tuple())


def match_detections(detections: list[Detection],
                     ground_truth: list[ExpertLabel] | list[Detection],
                     iou_thresh: float, class_aware: bool = False) -> MatchResult:
    """Greedy matching: detections in descending score order each claim the
    highest-IoU unmatched ground-truth box in the same subject (and class,
    when class-aware) with IoU >= ``iou_thresh``.
    """
    dets = sorted(detections, key=_det_sort_key)
    gts = sorted(ground_truth, key=_gt_sort_key)
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    for i, det in enumerate(dets):
        best = -1
        best_iou = 0.0
        for g, gt in enumerate(gts):
            if taken[g] or gt.subject_id != det.subject_id:
                continue
            if class_aware and gt.label != det.label:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_thresh and overlap > best_iou:
                best = g
                best_iou = overlap
        if best >= 0:
            taken[best] = True
            tp[i] = True
    return MatchResult(detections=dets, tp=tp, n_gt=len(gts), gt_matched=taken)


def pr_curve(match: MatchResult) -> PRCurve:
    """Cumulative precision/recall along the ranked list, with all-point
    interpolated AP (area under the monotone precision envelope)."""
    if match.n_gt == 0 and not match.detections:
        return PRCurve(recalls=np.array([]), precisions=np.array([]), ap=1.0)
    if match.n_gt == 0:
        return PRCurve(recalls=np.zeros(len(match.detections)),
                       precisions=np.zeros(len(match.detections)), ap=0.0)
    tp_cum = np.cumsum(match.tp)
    ranks = np.arange(1, len(match.detections) + 1)
    precisions = tp_cum / ranks if len(ranks) else np.array([])
    recalls = tp_cum / match.n_gt if len(ranks) else np.array([])

    mrec = np.concatenate(([0.0], recalls, [1.0]))
    mpre = np.concatenate(([0.0], precisions, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changes = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))
    return PRCurve(recalls=recalls, precisions=precisions, ap=ap)


def voc_metrics(match: MatchResult) -> VocReport:
    """Precision/recall/F1 over the full detection set plus all-point AP,
    reported in percent. With neither detections nor ground truth everything
    is trivially perfect (100); with ground truth but no detections, 0.
    """
    curve = pr_curve(match)
    if match.n_gt == 0 and not match.detections:
        return VocReport(precision=100.0, recall=100.0, f1=100.0, ap=100.0, curve=curve)
    n_det = len(match.detections)
    precision = match.n_tp / n_det if n_det else 0.0
    recall = match.n_tp / match.n_gt if match.n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return VocReport(precision=precision * 100.0, recall=recall * 100.0,
                     f1=f1 * 100.0, ap=curve.ap * 100.0, curve=curve)


def classification_f1(predicted: dict[str, ResponseLabel],
                      truth: dict[str, ResponseLabel]) -> F1Report:
    """Per-class one-vs-rest F1 (percent) with support-weighted average;
    classes absent from the truth are left out of the average."""
    if set(predicted) != set(truth):
        missing = set(truth) - set(predicted)
        extra = set(predicted) - set(truth)
        raise ValueError(f"prediction/truth keys differ (missing={sorted(missing)[:3]}, "
                         f"extra={sorted(extra)[:3]})")
    per_class: dict[ResponseLabel, float] = {}
    support: dict[ResponseLabel, int] = {}
    for label in ResponseLabel:
        tp = sum(1 for k in truth if truth[k] == label and predicted[k] == label)
        fp = sum(1 for k in truth if truth[k] != label and predicted[k] == label)
        fn = sum(1 for k in truth if truth[k] == label and predicted[k] != label)
        support[label] = tp + fn
        denom = 2 * tp + fp + fn
        per_class[label] = (2 * tp / denom if denom else 0.0) * 100.0
    present = [label for label in ResponseLabel if support[label] > 0]
    if present:
        weighted = sum(per_class[c] * support[c] for c in present) / sum(support[c] for c in present)
    else:
        weighted = 0.0
    return F1Report(per_class=per_class, support=support, weighted_average=weighted)


def _ap_at_threshold(dets: list[Detection], gts, thresh: float, class_aware: bool) -> float:
    """101-point interpolated AP (fraction) at one IoU threshold; caller
    guarantees non-empty ground truth."""
    match = match_detections(dets, gts, thresh, class_aware)
    if not match.detections:
        return 0.0
    tp_cum = np.cumsum(match.tp)
    precisions = tp_cum / np.arange(1, len(match.detections) + 1)
    recalls = tp_cum / match.n_gt
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    idx = np.searchsorted(recalls, _RECALL_GRID, side="left")
    samples = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(np.mean(samples))


def _mean_ap(dets, gts, thresholds, class_aware: bool) -> float:
    """Percent AP averaged over thresholds (and classes when class-aware);
    -1 when there is no ground truth to evaluate against."""
    if not gts:
        return -1.0
    if class_aware:
        classes = sorted({g.label for g in gts}, key=int)
        per_class = []
        for cls in classes:
            cls_dets = [d for d in dets if d.label == cls]
            cls_gts = [g for g in gts if g.label == cls]
            aps = [_ap_at_threshold(cls_dets, cls_gts, t, True) for t in thresholds]
            per_class.append(float(np.mean(np.array(aps))))
        return float(np.mean(np.array(per_class))) * 100.0
    aps = [_ap_at_threshold(dets, gts, t, False) for t in thresholds]
    return float(np.mean(np.array(aps))) * 100.0


def _in_bucket(area: float, bucket: str) -> bool:
    if bucket == "small":
        return area < AREA_SMALL_MAX
    if bucket == "medium":
        return AREA_SMALL_MAX <= area <= AREA_LARGE_MIN
    return area > AREA_LARGE_MIN


def coco_ap(detections: list[Detection], ground_truth, class_aware: bool = False) -> CocoReport:
    """The six-number COCO AP suite, percent scale; an area bucket with no
    ground truth reports the -1 sentinel."""
    buckets = {}
    for bucket in ("small", "medium", "large"):
        b_dets = [d for d in detections if _in_bucket(d.bbox.area, bucket)]
        b_gts = [g for g in ground_truth if _in_bucket(g.bbox.area, bucket)]
        buckets[bucket] = _mean_ap(b_dets, b_gts, COCO_THRESHOLDS, class_aware)
    return CocoReport(
        ap=_mean_ap(detections, ground_truth, COCO_THRESHOLDS, class_aware),
        ap50=_mean_ap(detections, ground_truth, (COCO_THRESHOLDS[0],), class_aware),
        ap75=_mean_ap(detections, ground_truth, (COCO_THRESHOLDS[5],), class_aware),
        ap_small=buckets["small"],
        ap_medium=buckets["medium"],
        ap_large=buckets["large"],
    )
