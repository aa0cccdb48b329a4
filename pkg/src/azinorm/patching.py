"""
Patch splitting and selection.

Patch centers sit on an origin-anchored square lattice of stride ``d`` so the
patch set is mapped onto itself by 90 degree rotations of the scene. Points
are shared between overlapping patches; duplicates are resolved when patch
predictions are merged.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .geom import NormTransform, OrientedBox, normalize_box, normalize_point, rotate_xy
from .scene_io import PointCloud

# floor/ceil slack when intersecting the lattice with the bounds
_LATTICE_EPS = 1e-9


@dataclass(frozen=True)
class CircularLayout:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")

    @property
    def reach(self) -> float:
        return self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    def contains(self, dx, dy):
        """Closed membership test for offsets from the patch center (LiDAR axes)."""
        return dx * dx + dy * dy <= self.radius * self.radius

    def contains_in_frame(self, x, y, theta: float):
        return self.contains(x, y)


@dataclass(frozen=True)
class SquareLayout:
    """Axis-aligned (in the LiDAR frame) square of side ``side``."""

    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"side must be > 0, got {self.side}")

    @property
    def reach(self) -> float:
        return self.side / 2

    @property
    def area(self) -> float:
        return self.side ** 2

    def contains(self, dx, dy):
        h = self.side / 2
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)

    def contains_in_frame(self, x, y, theta: float):
        # the square is aligned with the LiDAR axes, so undo the patch rotation
        xy = rotate_xy(np.column_stack([np.atleast_1d(x), np.atleast_1d(y)]), theta)
        res = self.contains(xy[:, 0], xy[:, 1])
        return res if np.ndim(x) else bool(res[0])


Layout = Union[CircularLayout, SquareLayout]


@dataclass(frozen=True)
class PatchParams:
    layout: Layout = CircularLayout(9.6)
    stride: float = 6.4
    bounds: Tuple[float, float, float, float] = (-75.0, 75.0, -75.0, 75.0)  # xmin, xmax, ymin, ymax
    min_points: int = 5
    z_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.stride > 0:
            raise ValueError(f"stride must be > 0, got {self.stride}")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin <= xmax and ymin <= ymax) or not all(map(math.isfinite, self.bounds)):
            raise ValueError(f"invalid bounds {self.bounds}")
        if self.min_points < 0:
            raise ValueError("min_points must be >= 0")
        if self.z_range is not None and not self.z_range[0] <= self.z_range[1]:
            raise ValueError(f"invalid z_range {self.z_range}")

    @classmethod
    def square_bounds(cls, half_extent: float, **kw) -> "PatchParams":
        h = float(half_extent)
        return cls(bounds=(-h, h, -h, h), **kw)


@dataclass
class Patch:
    center: Tuple[float, float]
    transform: NormTransform
    layout: Layout
    point_indices: np.ndarray
    normalized_points: PointCloud

    def __len__(self) -> int:
        return len(self.point_indices)

    def to_frame(self, xyz) -> np.ndarray:
        return normalize_point(self.transform, xyz)

    def to_frame_box(self, b: OrientedBox) -> OrientedBox:
        return normalize_box(self.transform, b)

    def contains_in_frame(self, x, y):
        return self.layout.contains_in_frame(x, y, self.transform.theta)

    def contains_lidar(self, x, y):
        return self.layout.contains(np.asarray(x) - self.center[0],
                                    np.asarray(y) - self.center[1])


def _axis_steps(lo: float, hi: float, d: float) -> np.ndarray:
    i0 = math.ceil(lo / d - _LATTICE_EPS)
    i1 = math.floor(hi / d + _LATTICE_EPS)
    return np.arange(i0, i1 + 1, dtype=np.float64) * d


def enumerate_centers(params: PatchParams) -> np.ndarray:
    """Lattice points ``(i*d, j*d)`` inside the closed bounds, ordered by (y, x).

    Returns an (M, 2) array.
    """
    xmin, xmax, ymin, ymax = params.bounds
    xs = _axis_steps(xmin, xmax, params.stride)
    ys = _axis_steps(ymin, ymax, params.stride)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


class SpatialIndex:
    """Uniform BEV hash grid: cell ``(floor(x/s), floor(y/s))`` -> point indices."""

    def __init__(self, pc: PointCloud, cell_size: float):
        if not cell_size > 0:
            raise ValueError(f"cell_size must be > 0, got {cell_size}")
        self.cell_size = float(cell_size)
        self.n_points = len(pc)
        keys = np.floor(pc.xyz[:, :2] / self.cell_size).astype(np.int64)
        order = np.lexsort((keys[:, 1], keys[:, 0]))
        self._order = order
        self._cells: Dict[Tuple[int, int], Tuple[int, int]] = {}
        if len(order):
            sk = keys[order]
            change = np.flatnonzero(np.any(np.diff(sk, axis=0) != 0, axis=1)) + 1
            starts = np.concatenate([[0], change])
            ends = np.concatenate([change, [len(order)]])
            for s, e in zip(starts.tolist(), ends.tolist()):
                self._cells[(int(sk[s, 0]), int(sk[s, 1]))] = (s, e)

    @property
    def cells(self) -> Dict[Tuple[int, int], np.ndarray]:
        return {k: self._order[s:e] for k, (s, e) in self._cells.items()}

    def __len__(self) -> int:
        return len(self._cells)

    def candidates(self, xmin: float, xmax: float, ymin: float, ymax: float) -> np.ndarray:
        """Indices in every cell touching the rectangle, padded by one cell."""
        s = self.cell_size
        i0, i1 = math.floor(xmin / s) - 1, math.floor(xmax / s) + 1
        j0, j1 = math.floor(ymin / s) - 1, math.floor(ymax / s) + 1
        chunks = []
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                span = self._cells.get((i, j))
                if span is not None:
                    chunks.append(self._order[span[0]:span[1]])
        if not chunks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(chunks)


def build_index(pc: PointCloud, cell_size: float) -> SpatialIndex:
    return SpatialIndex(pc, cell_size)


def extract_patch(pc: PointCloud, index: SpatialIndex, center, params: PatchParams) -> Patch:
    cx, cy = float(center[0]), float(center[1])
    layout = params.layout
    reach = layout.reach
    cand = index.candidates(cx - reach, cx + reach, cy - reach, cy + reach)
    xyz = pc.xyz[cand]
    keep = layout.contains(xyz[:, 0] - cx, xyz[:, 1] - cy)
    if params.z_range is not None:
        zlo, zhi = params.z_range
        keep &= (xyz[:, 2] >= zlo) & (xyz[:, 2] <= zhi)
    idx = np.sort(cand[keep])
    t = NormTransform.at((cx, cy))
    local = PointCloud(normalize_point(t, pc.xyz[idx]), pc.intensity[idx], pc.frame_id)
    return Patch((cx, cy), t, layout, idx, local)


def split_scene(pc: PointCloud, params: PatchParams, threads: int = 1,
                index: Optional[SpatialIndex] = None) -> List[Patch]:
    """Extract every lattice patch and drop those under ``min_points`` points."""
    if len(pc) == 0:
        return []
    if index is None:
        index = build_index(pc, params.layout.reach)
    centers = enumerate_centers(params)

    def work(c):
        return extract_patch(pc, index, c, params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            patches = list(ex.map(work, centers))
    else:
        patches = [work(c) for c in centers]
    # empty patches carry nothing to perceive, even with min_points == 0
    floor = max(params.min_points, 1)
    return [p for p in patches if len(p) >= floor]


def is_foreground(patch: Patch, gt_boxes: Sequence[OrientedBox]) -> bool:
    if not gt_boxes:
        return False
    xs = np.array([b.cx for b in gt_boxes])
    ys = np.array([b.cy for b in gt_boxes])
    return bool(np.any(patch.contains_lidar(xs, ys)))


def sample_positive(patches: Sequence[Patch], gt_boxes: Sequence[OrientedBox],
                    neg_ratio: float = 1.0, seed: int = 0) -> List[Patch]:
    """Keep every patch holding a GT box center plus a seeded draw of background ones.

    The background count is ``round(neg_ratio * n_foreground)`` (halves round
    up), capped at what is available. Input order is preserved.
    """
    if neg_ratio < 0:
        raise ValueError("neg_ratio must be >= 0")
    fg = [is_foreground(p, gt_boxes) for p in patches]
    n_fg = sum(fg)
    bg_idx = [i for i, f in enumerate(fg) if not f]
    n_bg = min(len(bg_idx), int(math.floor(neg_ratio * n_fg + 0.5)))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(bg_idx, size=n_bg, replace=False).tolist()) if n_bg else set()
    return [p for i, p in enumerate(patches) if fg[i] or i in chosen]


def coverage_counts(n_points: int, patches: Sequence[Patch]) -> np.ndarray:
    """Number of patches holding each scene point."""
    counts = np.zeros(n_points, dtype=np.int64)
    for p in patches:
        counts[p.point_indices] += 1
    return counts
