import numpy as np
import pytest

from _reference import ref_coco_report
from crowddamage.evaluate import (
    Detection,
    classification_f1,
    coco_ap,
    match_detections,
    pr_curve,
    voc_metrics,
)
from crowddamage.geometry import BBox
from crowddamage.model import ExpertLabel, ResponseLabel, parse_label


def det(subject, box, score=1.0, label=None):
    return Detection(bbox=BBox(*box), subject_id=subject, score=score,
                     label=None if label is None else parse_label(label))


def gt(subject, box, label="minor"):
    return ExpertLabel(bbox=BBox(*box), subject_id=subject, label=parse_label(label))


# The hand-built oracle fixture: 5 GT across two subjects (two small, two
# medium, one large box), 7 detections with mixed IoUs and scores including
# a high-scoring pure false positive. Expected values frozen from the
# brute-force evaluator in _reference.py.
FIXTURE_GTS = [
    gt("t1", (0, 0, 20, 20), "minor"),
    gt("t1", (100, 100, 150, 150), "significant"),
    gt("t1", (300, 300, 303, 310), "catastrophic"),
    gt("t2", (50, 50, 200, 200), "empty"),
    gt("t2", (0, 0, 40, 40), "minor"),
]
FIXTURE_DETS = [
    det("t1", (1, 1, 21, 21), 0.95, "minor"),
    det("t1", (98, 102, 148, 149), 0.9, "significant"),
    det("t1", (300, 300, 302, 311), 0.5, "catastrophic"),
    det("t1", (0, 0, 18, 22), 0.85, "minor"),
    det("t2", (55, 55, 190, 195), 0.7, "empty"),
    det("t2", (0, 0, 30, 30), 0.6, "significant"),
    det("t1", (500, 500, 520, 520), 0.99, "minor"),
]

FROZEN_AGNOSTIC = {"ap": 35.582272512965574, "ap50": 71.4285714285714,
                   "ap75": 38.94389438943894, "ap_small": 23.613861386138613,
                   "ap_medium": 40.396039603960396, "ap_large": 70.0}
FROZEN_AWARE = {"ap": 49.41831683168317, "ap50": 81.3118811881188,
                "ap75": 56.311881188118804, "ap_small": 32.49999999999999,
                "ap_medium": 40.0, "ap_large": 70.0}


def as_ref(items):
    out = []
    for x in items:
        label = getattr(x, "label", None)
        out.append({"subject": x.subject_id, "box": x.bbox.as_tuple(),
                    "score": getattr(x, "score", 1.0),
                    "label": None if label is None else label.name})
    return out


class TestMatching:
    def test_exact_hit(self):
        match = match_detections([det("s", (0, 0, 2, 2))], [gt("s", (0, 0, 2, 2))], 0.5)
        assert match.tp.tolist() == [True]
        assert match.n_fn == 0

    def test_one_match_per_gt(self):
        dets = [det("s", (0, 0, 2, 2), 0.9), det("s", (0, 0.2, 2, 2.2), 0.8)]
        match = match_detections(dets, [gt("s", (0, 0, 2, 2))], 0.5)
        assert match.tp.tolist() == [True, False]

    def test_below_threshold_is_fp_and_fn(self):
        # iou 0.4: det (0,0,2,2) vs gt (0,0,2,5): inter 4, union 10
        match = match_detections([det("s", (0, 0, 2, 2))], [gt("s", (0, 0, 2, 5))], 0.5)
        assert match.tp.tolist() == [False]
        assert match.n_fn == 1

    def test_subject_separation(self):
        match = match_detections([det("a", (0, 0, 2, 2))], [gt("b", (0, 0, 2, 2))], 0.5)
        assert match.tp.tolist() == [False]

    def test_class_aware_requires_label_match(self):
        dets = [det("s", (0, 0, 2, 2), label="minor")]
        gts = [gt("s", (0, 0, 2, 2), "catastrophic")]
        assert match_detections(dets, gts, 0.5, class_aware=True).tp.tolist() == [False]
        assert match_detections(dets, gts, 0.5, class_aware=False).tp.tolist() == [True]

    def test_prefers_highest_iou(self):
        dets = [det("s", (0, 0, 10, 10))]
        gts = [gt("s", (0, 0, 10, 12)), gt("s", (0, 0, 10, 10.5))]
        match = match_detections(dets, gts, 0.5)
        # gts sort by bbox, so the tighter (higher-IoU) box lands at index 0
        assert match.gt_matched.tolist() == [True, False]


class TestVocMetrics:
    def test_perfect(self):
        rep = voc_metrics(match_detections(
            [det("s", (0, 0, 2, 2)), det("s", (5, 5, 9, 9))],
            [gt("s", (0, 0, 2, 2)), gt("s", (5, 5, 9, 9))], 0.5))
        assert (rep.precision, rep.recall, rep.f1, rep.ap) == (100.0, 100.0, 100.0, 100.0)

    def test_half_recall_no_fp(self):
        rep = voc_metrics(match_detections(
            [det("s", (0, 0, 2, 2))],
            [gt("s", (0, 0, 2, 2)), gt("s", (5, 5, 9, 9))], 0.5))
        assert rep.precision == 100.0
        assert rep.recall == 50.0

    def test_empty_everything_is_perfect(self):
        rep = voc_metrics(match_detections([], [], 0.5))
        assert (rep.precision, rep.recall, rep.f1, rep.ap) == (100.0, 100.0, 100.0, 100.0)

    def test_no_detections_with_gt(self):
        rep = voc_metrics(match_detections([], [gt("s", (0, 0, 2, 2))], 0.5))
        assert (rep.precision, rep.recall, rep.f1, rep.ap) == (0.0, 0.0, 0.0, 0.0)

    def test_curve_monotone_recall(self):
        match = match_detections(FIXTURE_DETS, FIXTURE_GTS, 0.5)
        curve = pr_curve(match)
        assert (np.diff(curve.recalls) >= 0).all()
        assert ((curve.precisions >= 0) & (curve.precisions <= 1)).all()


class TestClassificationF1:
    def test_identical(self):
        labels = {"a": ResponseLabel.MINOR, "b": ResponseLabel.EMPTY}
        rep = classification_f1(labels, labels)
        assert rep.weighted_average == 100.0
        assert rep.per_class[ResponseLabel.MINOR] == 100.0

    def test_all_wrong_two_class(self):
        truth = {"a": ResponseLabel.EMPTY, "b": ResponseLabel.MINOR,
                 "c": ResponseLabel.EMPTY, "d": ResponseLabel.MINOR}
        pred = {"a": ResponseLabel.MINOR, "b": ResponseLabel.EMPTY,
                "c": ResponseLabel.MINOR, "d": ResponseLabel.EMPTY}
        rep = classification_f1(pred, truth)
        assert rep.per_class[ResponseLabel.EMPTY] == 0.0
        assert rep.per_class[ResponseLabel.MINOR] == 0.0
        assert rep.weighted_average == 0.0

    def test_weighted_average_between_extremes(self):
        rng = np.random.default_rng(2)
        keys = [f"k{i}" for i in range(60)]
        truth = {k: ResponseLabel(int(rng.integers(0, 4))) for k in keys}
        pred = {k: (truth[k] if rng.random() < 0.7 else ResponseLabel(int(rng.integers(0, 4))))
                for k in keys}
        rep = classification_f1(pred, truth)
        present = [c for c in ResponseLabel if rep.support[c] > 0]
        values = [rep.per_class[c] for c in present]
        assert min(values) <= rep.weighted_average <= max(values)
        expected = sum(rep.per_class[c] * rep.support[c] for c in present) / sum(
            rep.support[c] for c in present)
        assert rep.weighted_average == pytest.approx(expected)

    def test_absent_class_excluded(self):
        truth = {"a": ResponseLabel.EMPTY, "b": ResponseLabel.EMPTY}
        pred = {"a": ResponseLabel.EMPTY, "b": ResponseLabel.MINOR}
        rep = classification_f1(pred, truth)
        assert rep.support[ResponseLabel.CATASTROPHIC] == 0
        # only the empty class (support 2) counts toward the average
        assert rep.weighted_average == pytest.approx(rep.per_class[ResponseLabel.EMPTY])

    def test_key_mismatch(self):
        with pytest.raises(ValueError, match="keys differ"):
            classification_f1({"a": ResponseLabel.EMPTY}, {"b": ResponseLabel.EMPTY})


class TestCocoAp:
    def test_single_perfect_detection(self):
        rep = coco_ap([det("s", (0, 0, 50, 50), 1.0)], [gt("s", (0, 0, 50, 50))])
        assert rep.ap == 100.0
        assert rep.ap50 == 100.0
        assert rep.ap75 == 100.0
        assert rep.ap_medium == 100.0
        assert rep.ap_small == -1.0  # no small ground truth
        assert rep.ap_large == -1.0

    def test_no_detections(self):
        rep = coco_ap([], [gt("s", (0, 0, 50, 50))])
        assert rep.ap == 0.0
        assert rep.ap50 == 0.0

    def test_ap50_at_least_ap75(self):
        rep = coco_ap(FIXTURE_DETS, FIXTURE_GTS)
        assert rep.ap50 >= rep.ap75

    @pytest.mark.parametrize("class_aware,frozen", [(False, FROZEN_AGNOSTIC), (True, FROZEN_AWARE)])
    def test_fixture_matches_brute_force_exactly(self, class_aware, frozen):
        rep = coco_ap(FIXTURE_DETS, FIXTURE_GTS, class_aware=class_aware)
        ref = ref_coco_report(as_ref(FIXTURE_DETS), as_ref(FIXTURE_GTS), class_aware=class_aware)
        got = rep.as_dict()
        assert got == ref          # independent brute-force evaluator
        assert got == frozen       # values frozen from the first oracle run

    def test_detection_order_invariance(self):
        rng = np.random.default_rng(8)
        base = coco_ap(FIXTURE_DETS, FIXTURE_GTS).as_dict()
        for _ in range(5):
            shuffled = list(FIXTURE_DETS)
            rng.shuffle(shuffled)
            assert coco_ap(shuffled, FIXTURE_GTS).as_dict() == base

    def test_zero_score_duplicate_never_helps(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            dets, gts = _random_scene(rng)
            if not dets:
                continue
            before = coco_ap(dets, gts).as_dict()
            dup = dets[int(rng.integers(len(dets)))]
            dets_with_dup = dets + [Detection(bbox=dup.bbox, subject_id=dup.subject_id,
                                              score=0.0, label=dup.label)]
            after = coco_ap(dets_with_dup, gts).as_dict()
            for key in before:
                assert after[key] <= before[key] + 1e-12

    def test_ap50_close_to_voc_ap(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            dets, gts = _random_scene(rng)
            coco = coco_ap(dets, gts)
            voc = voc_metrics(match_detections(dets, gts, 0.5))
            assert abs(coco.ap50 - voc.ap) <= 1.0


def _random_scene(rng):
    """Random well-separated GT boxes (each detection can overlap at most one
    at IoU >= 0.5) with jittered detections and spurious extras."""
    gts = []
    dets = []
    n_gt = int(rng.integers(3, 9))
    for i in range(n_gt):
        cx = (i % 4) * 60.0
        cy = (i // 4) * 60.0
        w, h = rng.uniform(8, 20, 2)
        subject = "s1" if i % 2 == 0 else "s2"
        gts.append(gt(subject, (cx, cy, cx + w, cy + h)))
        if rng.random() < 0.8:  # jittered detection for most GT
            dx, dy = rng.uniform(-4, 4, 2)
            dw, dh = rng.uniform(-3, 3, 2)
            x1 = cx + dx + max(w + dw, 3)
            y1 = cy + dy + max(h + dh, 3)
            dets.append(det(subject, (cx + dx, cy + dy, x1, y1), float(rng.uniform(0.2, 1.0))))
    for _ in range(int(rng.integers(0, 4))):  # pure false positives
        cx, cy = rng.uniform(300, 400, 2)
        dets.append(det("s1", (cx, cy, cx + 10, cy + 10), float(rng.uniform(0.2, 1.0))))
    return dets, gts
