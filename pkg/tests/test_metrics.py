"""Metric tests against hand-counted pixel tallies."""

import numpy as np
import pytest

from futureseg3d.geometry import MISSING, SegmentationMap
from futureseg3d.metrics import (
    CORRECT,
    NOT_CONSIDERED,
    WRONG,
    error_map,
    evaluate,
    format_report,
)


def seg(classes, k):
    return SegmentationMap(np.asarray(classes, dtype=np.int16), k)


class TestEvaluate:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        classes = rng.integers(0, 4, size=(6, 6))
        report = evaluate(seg(classes, 4), seg(classes, 4))
        assert report.mean_iou == 1.0
        assert report.pixel_accuracy == 1.0

    def test_fully_wrong_prediction(self):
        pred = seg(np.zeros((4, 4)), 2)
        gt = seg(np.ones((4, 4)), 2)
        report = evaluate(pred, gt)
        assert report.mean_iou == 0.0
        assert report.pixel_accuracy == 0.0

    def test_hand_counted_4x4(self):
        # pred: columns 0-1 class 1, columns 2-3 class 0
        # gt:   columns 0-2 class 1, column    3 class 0
        pred = np.zeros((4, 4), dtype=np.int16)
        pred[:, :2] = 1
        gt = np.zeros((4, 4), dtype=np.int16)
        gt[:, :3] = 1
        report = evaluate(seg(pred, 2), seg(gt, 2))
        # IOU(1) = 8/12, IOU(0) = 4/8, mean = 7/12
        assert report.per_class_iou[1] == pytest.approx(8 / 12)
        assert report.per_class_iou[0] == pytest.approx(4 / 8)
        assert report.mean_iou == pytest.approx(7 / 12)
        # accuracy: 12 of 16 pixels agree
        assert report.pixel_accuracy == pytest.approx(12 / 16)

    def test_gt_missing_always_excluded(self):
        pred = seg(np.zeros((2, 2)), 2)
        gt_classes = np.zeros((2, 2), dtype=np.int16)
        gt_classes[0, 0] = MISSING
        report = evaluate(pred, seg(gt_classes, 2))
        assert report.considered == 3
        assert report.pixel_accuracy == 1.0

    def test_pred_missing_counts_wrong_unless_ignored(self):
        pred_classes = np.zeros((2, 2), dtype=np.int16)
        pred_classes[0, 0] = MISSING
        pred = seg(pred_classes, 2)
        gt = seg(np.zeros((2, 2)), 2)
        strict = evaluate(pred, gt, ignore_missing=False)
        assert strict.pixel_accuracy == pytest.approx(3 / 4)
        assert strict.per_class_iou[0] == pytest.approx(3 / 4)
        assert strict.pred_missing == 1
        lenient = evaluate(pred, gt, ignore_missing=True)
        assert lenient.pixel_accuracy == 1.0
        assert lenient.mean_iou == 1.0
        assert lenient.considered == 3

    def test_absent_classes_excluded_from_mean(self):
        pred = seg(np.zeros((3, 3)), 5)
        gt = seg(np.zeros((3, 3)), 5)
        report = evaluate(pred, gt)
        assert np.isnan(report.per_class_iou[1:]).all()
        assert report.mean_iou == 1.0

    def test_symmetry_when_classes_coincide(self):
        rng = np.random.default_rng(1)
        a = seg(rng.integers(0, 3, size=(10, 10)), 3)
        b = seg(rng.integers(0, 3, size=(10, 10)), 3)
        assert evaluate(a, b).mean_iou == pytest.approx(evaluate(b, a).mean_iou)

    def test_correcting_a_pixel_never_lowers_iou(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 3, size=(8, 8)).astype(np.int16)
        pred = rng.integers(0, 3, size=(8, 8)).astype(np.int16)
        wrong = np.argwhere(pred != gt)
        j, i = wrong[0]
        before = evaluate(seg(pred, 3), seg(gt, 3)).per_class_iou
        pred2 = pred.copy()
        pred2[j, i] = gt[j, i]
        after = evaluate(seg(pred2, 3), seg(gt, 3)).per_class_iou
        both = ~np.isnan(before) & ~np.isnan(after)
        assert np.all(after[both] >= before[both] - 1e-12)

    def test_confusion_matrix_counts(self):
        pred = seg([[0, 1], [1, 1]], 2)
        gt = seg([[0, 0], [1, 1]], 2)
        report = evaluate(pred, gt)
        np.testing.assert_array_equal(report.confusion, [[1, 1], [0, 2]])

    def test_scores_bounded_and_perfect_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pred_c = rng.integers(0, 3, size=(6, 6)).astype(np.int16)
            gt_c = rng.integers(0, 3, size=(6, 6)).astype(np.int16)
            gt_c[rng.random((6, 6)) < 0.2] = MISSING
            report = evaluate(seg(pred_c, 3), seg(gt_c, 3))
            assert 0.0 <= report.mean_iou <= 1.0
            assert 0.0 <= report.pixel_accuracy <= 1.0
            considered = gt_c != MISSING
            equal = bool(np.array_equal(pred_c[considered], gt_c[considered]))
            assert (report.mean_iou == 1.0 and report.pixel_accuracy == 1.0) \
                == equal

    def test_dimension_and_class_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate(seg(np.zeros((2, 2)), 2), seg(np.zeros((2, 3)), 2))
        with pytest.raises(ValueError):
            evaluate(seg(np.zeros((2, 2)), 2), seg(np.zeros((2, 2)), 3))


class TestErrorMap:
    def test_all_correct(self):
        s = seg(np.ones((3, 3)), 2)
        assert np.all(error_map(s, s) == CORRECT)

    def test_gt_missing_not_considered(self):
        pred = seg(np.zeros((2, 2)), 2)
        gt = seg(np.full((2, 2), MISSING), 2)
        assert np.all(error_map(pred, gt) == NOT_CONSIDERED)

    def test_single_flipped_pixel(self):
        gt = np.zeros((3, 3), dtype=np.int16)
        pred = gt.copy()
        pred[1, 2] = 1
        out = error_map(seg(pred, 2), seg(gt, 2))
        assert out[1, 2] == WRONG
        assert (out == WRONG).sum() == 1

    def test_pred_missing_is_wrong(self):
        gt = seg(np.zeros((2, 2)), 2)
        pred_classes = np.zeros((2, 2), dtype=np.int16)
        pred_classes[0, 1] = MISSING
        out = error_map(seg(pred_classes, 2), gt)
        assert out[0, 1] == WRONG


class TestFormatReport:
    def test_key_value_lines(self):
        report = evaluate(seg(np.zeros((2, 2)), 2), seg(np.zeros((2, 2)), 2))
        text = format_report(report)
        lines = text.strip().split("\n")
        assert lines[0] == "mean_iou 1.0"
        assert lines[1] == "pixel_accuracy 1.0"
        assert "class_00_iou 1.0" in lines
        assert "class_01_iou undefined" in lines
