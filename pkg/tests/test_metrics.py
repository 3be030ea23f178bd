"""VOC-style metrics against an independently written exhaustive reference."""

import numpy as np
import pytest

from dhinet.metrics import (average_precision, iou, iou_elementwise,
                            mean_average_precision, wh_iou)


def iou_reference(a, b):
    """Corner-space IoU computed the long way."""
    ax0, ay0 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax1, ay1 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx1, by1 = b[0] + b[2] / 2, b[1] + b[3] / 2
    xs = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ys = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = xs * ys
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def voc_ap_reference(detections, ground_truths, threshold):
    """Plain transcription of the VOC-2007 protocol: rank by confidence,
    greedily claim the best-overlap unclaimed truth, 11-point interpolate."""
    ranked = sorted(detections, key=lambda d: -d[1])
    claimed = {img: [False] * len(boxes) for img, boxes in ground_truths.items()}
    total = sum(len(b) for b in ground_truths.values())
    tp_flags = []
    for img, conf, box in ranked:
        best_i, best_v = -1, 0.0
        for gi, gt in enumerate(ground_truths.get(img, [])):
            v = iou_reference(box, gt)
            if v > best_v:
                best_i, best_v = gi, v
        hit = best_i >= 0 and best_v >= threshold and not claimed[img][best_i]
        if hit:
            claimed[img][best_i] = True
        tp_flags.append(hit)
    ap = 0.0
    for point in range(11):
        r = point / 10.0
        best_prec = 0.0
        tp = fp = 0
        for flag in tp_flags:
            tp += flag
            fp += not flag
            recall = tp / total
            precision = tp / (tp + fp)
            if recall >= r - 1e-12 and precision > best_prec:
                best_prec = precision
        ap += best_prec / 11.0
    return ap


class TestIoU:
    def test_identical_boxes(self):
        assert iou((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2)) == 1.0

    def test_disjoint_boxes(self):
        assert iou((0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1)) == 0.0

    def test_touching_boxes_have_zero_overlap(self):
        assert iou((0.25, 0.5, 0.5, 0.5), (0.75, 0.5, 0.5, 0.5)) == 0.0

    def test_half_overlap_hand_case(self):
        # unit squares offset by half a side: inter 0.5, union 1.5
        assert iou((0.0, 0.0, 1.0, 1.0), (0.5, 0.0, 1.0, 1.0)) == pytest.approx(1 / 3)

    def test_contained_box(self):
        assert iou((0.5, 0.5, 1.0, 1.0), (0.5, 0.5, 0.5, 0.5)) == pytest.approx(0.25)

    def test_matches_reference_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a = rng.uniform(0.05, 0.95, 4)
            b = rng.uniform(0.05, 0.95, 4)
            assert iou(a, b) == pytest.approx(iou_reference(a, b), abs=1e-14)

    def test_elementwise_matches_scalar(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.1, 0.9, size=(3, 4, 4))
        b = rng.uniform(0.1, 0.9, size=(3, 4, 4))
        grid = iou_elementwise(a, b)
        for i in range(3):
            for j in range(4):
                assert grid[i, j] == pytest.approx(iou(a[i, j], b[i, j]), abs=1e-14)

    def test_wh_iou_origin_centered(self):
        anchors = np.array([[0.2, 0.2], [0.4, 0.1]])
        got = wh_iou(anchors, (0.2, 0.2))
        assert got[0] == 1.0
        assert got[1] == pytest.approx(0.02 / (0.04 + 0.04 - 0.02))


class TestAveragePrecision:
    def test_perfect_single_detection(self):
        dets = [(0, 0.9, (0.5, 0.5, 0.2, 0.2))]
        gts = {0: [(0.5, 0.5, 0.2, 0.2)]}
        ap, recalls, precisions = average_precision(dets, gts)
        assert ap == pytest.approx(1.0)
        np.testing.assert_array_equal(recalls, [1.0])
        np.testing.assert_array_equal(precisions, [1.0])

    def test_hand_traced_half_case(self):
        # two truths, one matched by the top-ranked detection, one missed;
        # the second detection is far away. recall caps at 0.5 with
        # precision 1.0 up to that point: AP = 6/11 checkpoints * 1.0... and
        # checkpoints 0.0-0.5 see precision 1.0 -> ap = 6/11.
        dets = [(0, 0.9, (0.5, 0.5, 0.2, 0.2)), (0, 0.8, (0.9, 0.9, 0.05, 0.05))]
        gts = {0: [(0.5, 0.5, 0.2, 0.2), (0.1, 0.1, 0.2, 0.2)]}
        ap, _, _ = average_precision(dets, gts)
        assert ap == pytest.approx(6 / 11, abs=1e-12)

    def test_duplicate_detection_is_false_positive(self):
        box = (0.5, 0.5, 0.2, 0.2)
        dets = [(0, 0.9, box), (0, 0.8, box)]
        gts = {0: [box]}
        _, recalls, precisions = average_precision(dets, gts)
        np.testing.assert_array_equal(recalls, [1.0, 1.0])
        np.testing.assert_array_equal(precisions, [1.0, 0.5])

    def test_iou_exactly_at_threshold_matches(self):
        # offset chosen so IoU is exactly 1/3
        dets = [(0, 0.9, (0.5, 0.0, 1.0, 1.0))]
        gts = {0: [(0.0, 0.0, 1.0, 1.0)]}
        ap, _, _ = average_precision(dets, gts, iou_threshold=1 / 3)
        assert ap == pytest.approx(1.0)

    def test_no_ground_truth_is_undefined(self):
        with pytest.raises(ValueError, match="undefined"):
            average_precision([(0, 0.9, (0.5, 0.5, 0.2, 0.2))], {0: []})

    def test_matches_exhaustive_reference_on_micro_scenarios(self):
        rng = np.random.default_rng(2024)
        for scenario in range(20):
            num_images = int(rng.integers(1, 4))
            gts = {}
            total = 0
            for img in range(num_images):
                n = int(rng.integers(1, 6))
                gts[img] = [tuple(rng.uniform(0.2, 0.8, 2)) + tuple(rng.uniform(0.1, 0.3, 2))
                            for _ in range(n)]
                total += n
            confidences = rng.permutation(np.linspace(0.1, 0.99, 10))  # distinct
            dets = []
            for d in range(int(rng.integers(1, 11))):
                img = int(rng.integers(0, num_images))
                if rng.uniform() < 0.6 and gts[img]:
                    cx, cy, w, h = gts[img][int(rng.integers(0, len(gts[img])))]
                    jitter = rng.uniform(-0.03, 0.03, 4)
                    box = (cx + jitter[0], cy + jitter[1],
                           max(w + jitter[2], 0.02), max(h + jitter[3], 0.02))
                else:
                    box = tuple(rng.uniform(0.2, 0.8, 2)) + tuple(rng.uniform(0.1, 0.3, 2))
                dets.append((img, float(confidences[d]), box))
            got, _, _ = average_precision(dets, gts, 0.5)
            want = voc_ap_reference(dets, gts, 0.5)
            assert got == pytest.approx(want, abs=1e-14), f"scenario {scenario}"


class TestMeanAveragePrecision:
    def test_averages_only_classes_with_ground_truth(self):
        box = (0.5, 0.5, 0.2, 0.2)
        per_class = {
            0: ([(0, 0.9, box)], {0: [box]}),
            1: ([(0, 0.8, box)], {0: []}),          # no truth: skipped
            2: ([], {0: [box]}),                     # truth but no detections
        }
        mean, aps = mean_average_precision(per_class)
        assert set(aps) == {0, 2}
        assert aps[0] == pytest.approx(1.0)
        assert aps[2] == 0.0
        assert mean == pytest.approx(0.5)

    def test_undefined_when_no_class_has_truth(self):
        with pytest.raises(ValueError, match="undefined"):
            mean_average_precision({0: ([], {0: []})})
