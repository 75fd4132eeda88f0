"""Decode a grid detection head and score it against ground truth.

A detection head output is a (C, H, W) tensor where each grid cell predicts
boxes as (tx, ty, tw, th, objectness, class scores...).  This demo plants two
objects in a hand-built head tensor, decodes them back, then corrupts the
tensor with growing noise and watches precision/recall/AP degrade under
greedy IoU matching.
"""

import math

import numpy as np

from sdnn import BoundingBox, GridLayout, decode_grid, score_detections

layout = GridLayout(cells_h=4, cells_w=4, boxes_per_cell=1, num_classes=3)
print(f"layout: {layout.cells_h}x{layout.cells_w} cells, "
      f"{layout.boxes_per_cell} box/cell, {layout.num_classes} classes "
      f"-> {layout.channels} channels")

# plant two objects; at -8 everywhere else, sigmoid(objectness) ~ 0.0003
head = np.full((layout.channels, 4, 4), -8.0)


def plant(row, col, cx, cy, w, h, class_id):
    head[0, row, col] = math.log((cx * 4 - col) / (1 - (cx * 4 - col)))  # logit of sigmoid
    head[1, row, col] = math.log((cy * 4 - row) / (1 - (cy * 4 - row)))
    head[2, row, col] = math.log(w * 4)  # anchor 1.0: w = exp(tw)/cells
    head[3, row, col] = math.log(h * 4)
    head[4, row, col] = 6.0  # objectness ~ 0.998
    head[5 + class_id, row, col] = 4.0


truths = [
    BoundingBox(0.30, 0.40, 0.20, 0.25, 1.0, 0),
    BoundingBox(0.70, 0.65, 0.15, 0.15, 1.0, 2),
]
plant(1, 1, 0.30, 0.40, 0.20, 0.25, 0)
plant(2, 2, 0.70, 0.65, 0.15, 0.15, 2)

boxes = decode_grid(head, layout, conf_threshold=0.5)
print(f"\ndecoded {len(boxes)} boxes:")
for b in boxes:
    print(f"  class {b.class_id} at ({b.cx:.2f}, {b.cy:.2f}) "
          f"size {b.w:.2f}x{b.h:.2f} objectness {b.objectness:.3f}")

score = score_detections([boxes], [truths])
print(f"clean head: precision {score.precision:.2f} recall {score.recall:.2f} "
      f"f1 {score.f1:.2f} AP {score.ap:.2f}")

# corrupt the logits and watch the matching fall apart
rng = np.random.default_rng(6)
print("\nnoise   boxes  precision  recall  f1     AP")
for sigma in (0.02, 0.1, 0.25, 0.5, 1.0):
    noisy = head + rng.normal(0.0, sigma, size=head.shape)
    preds = decode_grid(noisy, layout, conf_threshold=0.5)
    s = score_detections([preds], [truths], iou_threshold=0.5)
    print(f"{sigma:<7.2f} {len(preds):<6d} {s.precision:<10.2f} {s.recall:<7.2f} "
          f"{s.f1:<6.2f} {s.ap:.2f}")
