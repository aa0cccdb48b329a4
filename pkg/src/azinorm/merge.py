"""
Inverse normalization and merging of overlapping patch predictions.

Detection: boxes are mapped back to the LiDAR frame and deduplicated by
greedy NMS on rotated BEV IoU. Segmentation: per-point probability rows of
every covering patch are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from .geom import NormTransform, OrientedBox, denormalize_box
from .scene_io import UNKNOWN_LABEL

if TYPE_CHECKING:
    from .perceive import PatchPrediction

DEFAULT_NMS_IOU = 0.1

Polygon = List[Tuple[float, float]]


class ContractError(ValueError):
    pass


@dataclass
class ScenePrediction:
    boxes: List[OrientedBox]
    point_probs: Optional[np.ndarray] = None
    point_labels: Optional[np.ndarray] = None


# --------------------------------------------------------------------------
# polygons


def box_corners_bev(b: OrientedBox) -> Polygon:
    """CCW BEV corners, starting at local (+length/2, +width/2)."""
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    hl, hw = b.length / 2, b.width / 2
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((b.cx + u * c - v * s, b.cy + u * s + v * c))
    return out


def polygon_area(poly: Polygon) -> float:
    """Signed shoelace area (positive for CCW)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2


def clip_convex(subject: Polygon, clip: Polygon) -> Polygon:
    """Intersect ``subject`` with the CCW convex polygon ``clip`` (Sutherland-Hodgman)."""
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        px, py = inp[-1]
        pc = ex * (py - ay) - ey * (px - ax)
        for qx, qy in inp:
            qc = ex * (qy - ay) - ey * (qx - ax)
            if qc >= 0:
                if pc < 0:
                    t = pc / (pc - qc)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif pc >= 0:
                t = pc / (pc - qc)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            px, py, pc = qx, qy, qc
    return out


def rotated_iou_bev(a: OrientedBox, b: OrientedBox) -> float:
    area_a, area_b = a.length * a.width, b.length * b.width
    # disjoint circumscribed circles
    ra = math.hypot(a.length, a.width) / 2
    rb = math.hypot(b.length, b.width) / 2
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    inter = polygon_area(clip_convex(box_corners_bev(a), box_corners_bev(b)))
    inter = min(max(inter, 0.0), area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


# --------------------------------------------------------------------------
# NMS


def nms_order(boxes: Sequence[OrientedBox]) -> List[int]:
    """Processing order: score desc, then BEV area desc, height desc, then cx, cy, yaw.

    The size keys come before position so that ties between equal-score boxes
    are settled by quantities that do not change when the scene is rotated.
    """
    return sorted(range(len(boxes)), key=lambda i: (
        -boxes[i].score, -boxes[i].area, -boxes[i].height,
        boxes[i].cx, boxes[i].cy, boxes[i].yaw))


def nms(boxes: Sequence[OrientedBox], iou_threshold: float = DEFAULT_NMS_IOU,
        class_aware: bool = True) -> List[OrientedBox]:
    """Greedy NMS; a box is dropped when its IoU with a kept box exceeds the threshold."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    n = len(boxes)
    if n == 0:
        return []
    order = nms_order(boxes)
    bs = [boxes[i] for i in order]
    xy = np.array([(b.cx, b.cy) for b in bs])
    rad = np.array([math.hypot(b.length, b.width) / 2 for b in bs])
    cls = np.array([b.class_id for b in bs])
    alive = np.ones(n, dtype=bool)
    kept = []
    for i in range(n):
        if not alive[i]:
            continue
        kept.append(bs[i])
        alive[i] = False
        rest = np.flatnonzero(alive[i + 1:]) + i + 1
        if len(rest) == 0:
            continue
        near = np.hypot(xy[rest, 0] - xy[i, 0], xy[rest, 1] - xy[i, 1]) <= rad[rest] + rad[i]
        if class_aware:
            near &= cls[rest] == cls[i]
        for j in rest[near]:
            if rotated_iou_bev(bs[i], bs[j]) > iou_threshold:
                alive[j] = False
    return kept


# --------------------------------------------------------------------------
# merging


def merge_detections(per_patch: Sequence[Tuple[NormTransform, "PatchPrediction"]],
                     iou_threshold: float = DEFAULT_NMS_IOU,
                     class_aware: bool = True) -> ScenePrediction:
    boxes = [denormalize_box(t, b) for t, pred in per_patch for b in pred.boxes]
    return ScenePrediction(nms(boxes, iou_threshold, class_aware))


def merge_segmentation(per_patch, scene_point_count: int, n_classes: int) -> ScenePrediction:
    """Average probability rows over every patch covering each scene point.

    ``per_patch`` holds ``(region, prediction)`` pairs where ``region`` has
    ``point_indices``. Uncovered points get a zero row and label -1.
    """
    sums = np.zeros((scene_point_count, n_classes))
    counts = np.zeros(scene_point_count, dtype=np.int64)
    for k, (region, pred) in enumerate(per_patch):
        idx = np.asarray(region.point_indices)
        probs = pred.point_probs
        if probs is None or len(probs) != len(idx):
            got = "none" if probs is None else len(probs)
            raise ContractError(
                f"patch {k} (center {getattr(region, 'center', None)}): "
                f"{got} probability rows for {len(idx)} points")
        if probs.shape[1] != n_classes:
            raise ContractError(f"patch {k}: {probs.shape[1]} classes, expected {n_classes}")
        np.add.at(sums, idx, probs)
        np.add.at(counts, idx, 1)
    covered = counts > 0
    sums[covered] /= counts[covered, None]
    labels = np.full(scene_point_count, UNKNOWN_LABEL, dtype=np.int64)
    # argmax returns the first maximum, i.e. the lowest class index on ties
    labels[covered] = np.argmax(sums[covered], axis=1)
    return ScenePrediction([], sums, labels)
