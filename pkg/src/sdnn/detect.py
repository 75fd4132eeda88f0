"""Grid-cell box decoding and detection scoring.

The network's final layer is read as a detection grid: each spatial cell
predicts `boxes_per_cell` boxes, each box being (tx, ty, tw, th, objectness,
class scores...) stacked along the channel axis.  Offsets decode with a
sigmoid relative to the cell, sizes as anchor * exp(t), everything normalized
to [0, 1] image coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class GridLayout:
    """Geometry of the detection head output."""

    cells_h: int
    cells_w: int
    boxes_per_cell: int = 3
    num_classes: int = 4
    anchors: tuple[tuple[float, float], ...] = ()  # (w, h) in cell units

    def __post_init__(self) -> None:
        if not self.anchors:
            object.__setattr__(
                self, "anchors", tuple((1.0, 1.0) for _ in range(self.boxes_per_cell))
            )
        if len(self.anchors) != self.boxes_per_cell:
            raise ValueError(
                f"{len(self.anchors)} anchors for {self.boxes_per_cell} boxes per cell"
            )

    @property
    def channels(self) -> int:
        return self.boxes_per_cell * (5 + self.num_classes)

    @classmethod
    def for_output(
        cls, shape: tuple[int, ...], boxes_per_cell: int = 3,
        anchors: tuple[tuple[float, float], ...] = (),
    ) -> "GridLayout":
        """Derive a layout from a (C, H, W) output shape."""
        c, h, w = shape
        if c % boxes_per_cell != 0 or c // boxes_per_cell < 5:
            raise ValueError(f"{c} channels do not split into {boxes_per_cell} boxes of >= 5")
        return cls(h, w, boxes_per_cell, c // boxes_per_cell - 5, anchors)


@dataclass
class BoundingBox:
    """One decoded box in normalized image coordinates (center + size)."""

    cx: float
    cy: float
    w: float
    h: float
    objectness: float
    class_id: int

    def corners(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2, self.cy - self.h / 2,
            self.cx + self.w / 2, self.cy + self.h / 2,
        )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def decode_grid(
    output: np.ndarray, layout: GridLayout, conf_threshold: float = 0.25
) -> list[BoundingBox]:
    """Decode a (C, H, W) head output into confident boxes.

    Boxes are kept when sigmoid(objectness) >= conf_threshold; the class is
    the argmax of the raw class scores.  Cells are scanned row-major, boxes
    in box order, so the output order is deterministic.
    """
    output = np.asarray(output, dtype=np.float64)
    if output.shape != (layout.channels, layout.cells_h, layout.cells_w):
        raise ValueError(
            f"output shape {output.shape} does not match layout "
            f"({layout.channels}, {layout.cells_h}, {layout.cells_w})"
        )
    boxes: list[BoundingBox] = []
    per_box = 5 + layout.num_classes
    for row in range(layout.cells_h):
        for col in range(layout.cells_w):
            for b in range(layout.boxes_per_cell):
                base = b * per_box
                objectness = float(sigmoid(output[base + 4, row, col]))
                if objectness < conf_threshold:
                    continue
                tx, ty, tw, th = (float(output[base + i, row, col]) for i in range(4))
                anchor_w, anchor_h = layout.anchors[b]
                cls_scores = output[base + 5 : base + per_box, row, col]
                boxes.append(
                    BoundingBox(
                        cx=(col + float(sigmoid(tx))) / layout.cells_w,
                        cy=(row + float(sigmoid(ty))) / layout.cells_h,
                        w=anchor_w * math.exp(min(tw, 50.0)) / layout.cells_w,
                        h=anchor_h * math.exp(min(th, 50.0)) / layout.cells_h,
                        objectness=objectness,
                        class_id=int(np.argmax(cls_scores)) if cls_scores.size else 0,
                    )
                )
    return boxes


@dataclass
class DetectionScore:
    precision: float
    recall: float
    f1: float
    ap: float
    true_positives: int
    false_positives: int
    false_negatives: int


def score_detections(
    predictions: list[list[BoundingBox]],
    truths: list[list[BoundingBox]],
    iou_threshold: float = 0.5,
) -> DetectionScore:
    """Greedy matching of predictions to ground truth, per frame, per class.

    Predictions across all frames are visited in descending objectness; each
    claims the highest-IoU unmatched same-class truth in its frame if that
    IoU reaches the threshold.  Precision/recall/F1 come from the totals; AP
    is the 11-point interpolated average over the cumulative PR curve.
    """
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} prediction frames vs {len(truths)} truth frames")
    flat = [
        (p.objectness, frame_idx, p)
        for frame_idx, preds in enumerate(predictions)
        for p in preds
    ]
    flat.sort(key=lambda item: -item[0])
    matched: list[set[int]] = [set() for _ in truths]
    n_truth = sum(len(t) for t in truths)

    tp_flags: list[bool] = []
    for _, frame_idx, pred in flat:
        frame_truths = truths[frame_idx]
        best_iou, best_j = 0.0, -1
        for j, truth in enumerate(frame_truths):
            if j in matched[frame_idx] or truth.class_id != pred.class_id:
                continue
            value = iou(pred, truth)
            if value > best_iou:
                best_iou, best_j = value, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[frame_idx].add(best_j)
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    tp = sum(tp_flags)
    fp = len(tp_flags) - tp
    fn = n_truth - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / n_truth if n_truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    # 11-point interpolated AP over the cumulative precision/recall curve
    if n_truth and tp_flags:
        cum_tp = np.cumsum(tp_flags)
        cum_prec = cum_tp / np.arange(1, len(tp_flags) + 1)
        cum_rec = cum_tp / n_truth
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            at_least = cum_prec[cum_rec >= r]
            ap += float(at_least.max()) if at_least.size else 0.0
        ap /= 11.0
    else:
        ap = 0.0
    return DetectionScore(precision, recall, f1, ap, tp, fp, fn)


def write_detections_csv(predictions: list[list[BoundingBox]], path: str) -> None:
    """One row per box: frame, cx, cy, w, h, objectness, class_id."""
    import csv
    import io

    from .serialization import _atomic_write

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "cx", "cy", "w", "h", "objectness", "class_id"])
    for frame_idx, preds in enumerate(predictions):
        for p in preds:
            writer.writerow([frame_idx, p.cx, p.cy, p.w, p.h, p.objectness, p.class_id])
    _atomic_write(path, buf.getvalue().encode("utf-8"))
