"""
K-sectorial normalization: a coarser alternative to patches.

The scene is cut into K angular sectors, widened by ``overlap`` on each
side, and every sector is rotated about the sensor by minus its center
azimuth. There is no translation and no patch selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence, Tuple

import numpy as np

from .geom import OrientedBox, rotate_box, rotate_xy, wrap_angle, wrap_angles
from .merge import DEFAULT_NMS_IOU, ScenePrediction, nms
from .scene_io import PointCloud

if TYPE_CHECKING:
    from .perceive import PatchPrediction

DEFAULT_OVERLAP = math.radians(5.0)


@dataclass(frozen=True)
class SectorParams:
    n_sectors: int = 4
    overlap: float = DEFAULT_OVERLAP  # radians added on each side
    anchor: float = 0.0  # azimuth where sector 0 starts

    def __post_init__(self):
        if self.n_sectors < 1:
            raise ValueError("n_sectors must be >= 1")
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")
        if self.n_sectors > 1 and not self.overlap < math.pi / self.n_sectors:
            raise ValueError("overlap must be smaller than pi / n_sectors")

    @property
    def span(self) -> float:
        return 2 * math.pi / self.n_sectors

    @property
    def half_width(self) -> float:
        return self.span / 2 + self.overlap

    def center_azimuth(self, k: int) -> float:
        return wrap_angle(self.anchor + (k + 0.5) * self.span)


def _in_band(rel, half: float):
    """Membership of relative azimuths in [-half, half)."""
    if half >= math.pi:
        return np.ones(np.shape(rel), dtype=bool)
    return (rel >= -half) & (rel < half)


@dataclass
class Sector:
    index: int
    theta: float
    half_width: float
    point_indices: np.ndarray
    normalized_points: PointCloud

    @property
    def interval(self) -> Tuple[float, float]:
        return self.theta - self.half_width, self.theta + self.half_width

    @property
    def center(self):
        return (0.0, 0.0)

    def __len__(self) -> int:
        return len(self.point_indices)

    def to_frame(self, xyz) -> np.ndarray:
        return rotate_xy(xyz, -self.theta)

    def to_frame_box(self, b: OrientedBox) -> OrientedBox:
        return rotate_box(b, -self.theta)

    def contains_in_frame(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        origin = (x == 0) & (y == 0)
        inside = _in_band(np.arctan2(y, x), self.half_width)
        res = np.where(origin, self.index == 0, inside)
        return res if res.ndim else bool(res)


def split_sectors(pc: PointCloud, params: SectorParams, z_range=None) -> List[Sector]:
    """Assign every point to each sector whose widened interval holds its azimuth.

    Points at the sensor origin go to sector 0. ``z_range`` optionally drops
    points outside ``[z_min, z_max]`` before assignment.
    """
    xy = pc.xyz[:, :2]
    origin = (xy[:, 0] == 0) & (xy[:, 1] == 0)
    az = np.arctan2(xy[:, 1], xy[:, 0])
    half = params.half_width
    sectors = []
    for k in range(params.n_sectors):
        theta = params.center_azimuth(k)
        member = _in_band(wrap_angles(az - theta), half) & ~origin
        if k == 0:
            member |= origin
        if z_range is not None:
            member &= (pc.xyz[:, 2] >= z_range[0]) & (pc.xyz[:, 2] <= z_range[1])
        idx = np.flatnonzero(member)
        local = PointCloud(rotate_xy(pc.xyz[idx], -theta), pc.intensity[idx], pc.frame_id)
        sectors.append(Sector(k, theta, half, idx, local))
    return sectors


def merge_sector_detections(per_sector: Sequence[Tuple[Sector, "PatchPrediction"]],
                            iou_threshold: float = DEFAULT_NMS_IOU,
                            class_aware: bool = True) -> ScenePrediction:
    """Rotate sector-frame boxes back by their sector azimuth and run NMS."""
    boxes = []
    for sector, pred in per_sector:
        theta = sector.theta if isinstance(sector, Sector) else float(sector)
        boxes.extend(rotate_box(b, theta) for b in pred.boxes)
    return ScenePrediction(nms(boxes, iou_threshold, class_aware))
