import math

import numpy as np
import pytest

from sdnn.detect import (
    BoundingBox,
    GridLayout,
    decode_grid,
    iou,
    score_detections,
    sigmoid,
    write_detections_csv,
)


def _box(cx, cy, w, h, objectness=1.0, class_id=0):
    return BoundingBox(cx, cy, w, h, objectness, class_id)


class TestGridLayout:
    def test_channel_count(self):
        assert GridLayout(4, 4, boxes_per_cell=3, num_classes=4).channels == 27
        assert GridLayout(4, 4, boxes_per_cell=1, num_classes=2).channels == 7

    def test_default_anchors_are_unit_squares(self):
        layout = GridLayout(4, 4, boxes_per_cell=2, num_classes=1)
        assert layout.anchors == ((1.0, 1.0), (1.0, 1.0))

    def test_anchor_count_must_match_boxes(self):
        with pytest.raises(ValueError, match="anchors"):
            GridLayout(4, 4, boxes_per_cell=2, num_classes=1, anchors=((1, 1),))

    def test_layout_from_output_shape(self):
        layout = GridLayout.for_output((27, 6, 8))
        assert (layout.cells_h, layout.cells_w) == (6, 8)
        assert layout.num_classes == 4
        layout = GridLayout.for_output((9, 5, 5), boxes_per_cell=1)
        assert layout.num_classes == 4

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            GridLayout.for_output((10, 4, 4), boxes_per_cell=3)
        with pytest.raises(ValueError, match="channels"):
            GridLayout.for_output((9, 4, 4), boxes_per_cell=3)  # 3 fields < 5


class TestIou:
    def test_identical_boxes(self):
        assert iou(_box(0.5, 0.5, 0.4, 0.4), _box(0.5, 0.5, 0.4, 0.4)) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert iou(_box(0.2, 0.2, 0.2, 0.2), _box(0.8, 0.8, 0.2, 0.2)) == 0.0

    def test_touching_edges_do_not_overlap(self):
        assert iou(_box(0.25, 0.5, 0.5, 0.5), _box(0.75, 0.5, 0.5, 0.5)) == 0.0

    def test_half_shifted_overlap(self):
        """Two unit-half squares offset by half a side: inter 1/8, union 3/8."""
        a = _box(0.25, 0.25, 0.5, 0.5)
        b = _box(0.5, 0.25, 0.5, 0.5)
        assert iou(a, b) == pytest.approx((0.25 * 0.5) / (0.25 + 0.25 - 0.25 * 0.5))

    def test_corners(self):
        assert _box(0.5, 0.5, 0.2, 0.4).corners() == pytest.approx((0.4, 0.3, 0.6, 0.7))


class TestDecodeGrid:
    def _layout(self, **kw):
        return GridLayout(2, 2, boxes_per_cell=1, num_classes=2, **kw)

    def test_zero_tensor_decodes_cell_centers(self):
        """All-zero logits put a unit-anchor box at every cell center."""
        boxes = decode_grid(np.zeros((7, 2, 2)), self._layout(), conf_threshold=0.25)
        assert len(boxes) == 4
        assert [round(b.cx, 3) for b in boxes] == [0.25, 0.75, 0.25, 0.75]
        assert [round(b.cy, 3) for b in boxes] == [0.25, 0.25, 0.75, 0.75]
        for b in boxes:
            assert b.w == pytest.approx(0.5)  # anchor 1 cell / 2 cells
            assert b.objectness == pytest.approx(0.5)
            assert b.class_id == 0

    def test_hand_built_cell_decodes_exactly(self):
        out = np.full((7, 2, 2), -9.0)  # sigmoid(-9) ~ 1e-4: every other cell muted
        out[0, 0, 1] = math.log(3.0)  # sigmoid = 0.75
        out[1, 0, 1] = 0.0  # sigmoid = 0.5
        out[2, 0, 1] = math.log(0.5)  # w shrinks to half the anchor
        out[3, 0, 1] = 0.0
        out[4, 0, 1] = 5.0  # objectness sigmoid(5) ~ 0.9933
        out[5, 0, 1] = 1.0
        out[6, 0, 1] = 3.0  # class 1 wins
        boxes = decode_grid(out, self._layout(), conf_threshold=0.25)
        assert len(boxes) == 1
        (b,) = boxes
        assert b.cx == pytest.approx((1 + 0.75) / 2)
        assert b.cy == pytest.approx((0 + 0.5) / 2)
        assert b.w == pytest.approx(0.5 * 1.0 / 2)
        assert b.h == pytest.approx(1.0 / 2)
        assert b.objectness == pytest.approx(float(sigmoid(5.0)))
        assert b.class_id == 1

    def test_confidence_filter_is_inclusive(self):
        out = np.zeros((7, 2, 2))
        assert len(decode_grid(out, self._layout(), conf_threshold=0.5)) == 4
        assert len(decode_grid(out, self._layout(), conf_threshold=0.50001)) == 0

    def test_anchors_scale_the_size(self):
        layout = self._layout(anchors=((2.0, 0.5),))
        (b, *_) = decode_grid(np.zeros((7, 2, 2)), layout, conf_threshold=0.0)
        assert b.w == pytest.approx(2.0 / 2)
        assert b.h == pytest.approx(0.5 / 2)

    def test_row_major_deterministic_order(self):
        boxes = decode_grid(np.zeros((7, 2, 2)), self._layout(), conf_threshold=0.0)
        coords = [(b.cy, b.cx) for b in boxes]
        assert coords == sorted(coords)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            decode_grid(np.zeros((7, 3, 2)), self._layout())

    def test_huge_size_logits_do_not_overflow(self):
        out = np.zeros((7, 1, 1))
        out[2, 0, 0] = 1e6
        (b,) = decode_grid(out, GridLayout(1, 1, 1, 2), conf_threshold=0.0)
        assert math.isfinite(b.w)


class TestScoreDetections:
    def test_perfect_match(self):
        frame = [_box(0.3, 0.3, 0.2, 0.2), _box(0.7, 0.7, 0.2, 0.2, class_id=1)]
        score = score_detections([frame], [list(frame)])
        assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)
        assert score.ap == pytest.approx(1.0)
        assert (score.true_positives, score.false_positives, score.false_negatives) == (2, 0, 0)

    def test_low_ranked_false_positive_keeps_ap_at_one(self):
        """A spurious box below every true detection costs precision, not AP."""
        truths = [[_box(0.3, 0.3, 0.2, 0.2), _box(0.7, 0.7, 0.2, 0.2)]]
        preds = [[
            _box(0.3, 0.3, 0.2, 0.2, objectness=0.9),
            _box(0.7, 0.7, 0.2, 0.2, objectness=0.8),
            _box(0.1, 0.9, 0.1, 0.1, objectness=0.2),
        ]]
        score = score_detections(preds, truths)
        assert score.precision == pytest.approx(2 / 3)
        assert score.recall == 1.0
        assert score.f1 == pytest.approx(0.8)
        assert score.ap == pytest.approx(1.0)

    def test_missed_truth_caps_recall_and_ap(self):
        truths = [[_box(0.3, 0.3, 0.2, 0.2), _box(0.7, 0.7, 0.2, 0.2)]]
        preds = [[_box(0.3, 0.3, 0.2, 0.2, objectness=0.9)]]
        score = score_detections(preds, truths)
        assert score.precision == 1.0
        assert score.recall == 0.5
        assert score.ap == pytest.approx(6 / 11)  # recall points 0.0..0.5 hit, rest missed
        assert score.false_negatives == 1

    def test_class_must_match(self):
        truths = [[_box(0.5, 0.5, 0.2, 0.2, class_id=2)]]
        preds = [[_box(0.5, 0.5, 0.2, 0.2, class_id=1)]]
        score = score_detections(preds, truths)
        assert score.true_positives == 0
        assert score.false_positives == 1
        assert score.false_negatives == 1

    def test_iou_threshold_gates_the_match(self):
        truths = [[_box(0.25, 0.25, 0.5, 0.5)]]
        preds = [[_box(0.45, 0.25, 0.5, 0.5)]]  # IoU 0.15/0.35 ~ 0.43
        assert score_detections(preds, truths, iou_threshold=0.5).true_positives == 0
        assert score_detections(preds, truths, iou_threshold=0.4).true_positives == 1

    def test_each_truth_claimed_once_by_objectness_rank(self):
        """The higher-scored prediction takes the truth; the other becomes FP."""
        truths = [[_box(0.5, 0.5, 0.4, 0.4)]]
        exact = _box(0.5, 0.5, 0.4, 0.4, objectness=0.6)
        shifted = _box(0.55, 0.5, 0.4, 0.4, objectness=0.9)
        score = score_detections([[shifted, exact]], truths)
        assert score.true_positives == 1
        assert score.false_positives == 1

    def test_matching_is_per_frame(self):
        """A prediction cannot claim a truth from a different frame."""
        truth = _box(0.5, 0.5, 0.2, 0.2)
        score = score_detections([[], [truth]], [[truth], []])
        assert score.true_positives == 0
        assert score.false_positives == 1
        assert score.false_negatives == 1

    def test_empty_inputs(self):
        score = score_detections([[]], [[]])
        assert score.f1 == 0.0 and score.ap == 0.0

    def test_frame_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="frames"):
            score_detections([[]], [[], []])


class TestDetectionsCsv:
    def test_frozen_layout(self, tmp_path):
        path = str(tmp_path / "det.csv")
        write_detections_csv(
            [[_box(0.5, 0.25, 0.1, 0.2, objectness=0.75, class_id=3)], []], path
        )
        assert open(path).read() == (
            "frame,cx,cy,w,h,objectness,class_id\n"
            "0,0.5,0.25,0.1,0.2,0.75,3\n"
        )
