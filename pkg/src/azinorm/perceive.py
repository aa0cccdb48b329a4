"""
Per-patch perception.

A perceiver is any callable taking a region (a :class:`~azinorm.patching.Patch`
or a :class:`~azinorm.sectorial.Sector`) and returning a
:class:`PatchPrediction` expressed in that region's frame. It must be
deterministic and must look only at ``region.normalized_points``; the
oracle and kNN perceivers below additionally hold reference data which they
map into the region frame themselves.

The three perceivers here are deterministic stand-ins for learned models,
used to check the split / normalize / merge plumbing end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geom import OrientedBox

PROB_ATOL = 1e-9
MIN_EXTENT = 0.01  # m, floor for box dimensions of degenerate clusters
FLAT_Z_EXTENT = 0.1  # m


@dataclass
class PatchPrediction:
    boxes: List[OrientedBox]
    point_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        for b in self.boxes:
            if not 0.0 <= b.score <= 1.0:
                raise ValueError(f"box score {b.score} outside [0, 1]")
        if self.point_probs is not None:
            probs = np.asarray(self.point_probs, dtype=np.float64)
            if probs.ndim != 2:
                raise ValueError("point_probs must be a 2D array")
            if len(probs) and (np.any(probs < 0) or
                               np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_ATOL)):
                raise ValueError("probability rows must be non-negative and sum to 1")
            self.point_probs = probs


class Perceiver(Protocol):
    detects: bool
    segments: bool

    def __call__(self, region) -> PatchPrediction: ...


@dataclass(frozen=True)
class ClusterParams:
    link_radius: float = 0.5
    min_cluster: int = 5
    default_height: float = 1.5
    class_id: int = 1

    def __post_init__(self):
        if not self.link_radius > 0:
            raise ValueError("link_radius must be > 0")
        if self.min_cluster < 1:
            raise ValueError("min_cluster must be >= 1")
        if not self.default_height > 0:
            raise ValueError("default_height must be > 0")


# --------------------------------------------------------------------------
# oracle


def oracle_detect(patch, gt_in_patch_frame: Sequence[OrientedBox]) -> PatchPrediction:
    """GT boxes (already in the patch frame) whose centers fall inside the patch."""
    kept = [replace(b, score=1.0) for b in gt_in_patch_frame
            if patch.contains_in_frame(b.cx, b.cy)]
    return PatchPrediction(kept)


class OraclePerceiver:
    detects = True
    segments = False

    def __init__(self, gt_boxes: Sequence[OrientedBox]):
        self.gt_boxes = list(gt_boxes)

    def __call__(self, region) -> PatchPrediction:
        return oracle_detect(region, [region.to_frame_box(b) for b in self.gt_boxes])


# --------------------------------------------------------------------------
# single-link clustering


def single_link_labels(xy: np.ndarray, link_radius: float) -> np.ndarray:
    """Connected components of the graph joining points within ``link_radius``."""
    n = len(xy)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(xy).query_pairs(link_radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def principal_yaw(xy: np.ndarray) -> float:
    """Heading of the largest-variance BEV axis in (-pi/2, pi/2].

    Returns 0 when the two variances are equal (no unique principal axis).
    """
    if len(xy) < 2:
        return 0.0
    d = xy - xy.mean(axis=0)
    sxx = float(np.dot(d[:, 0], d[:, 0]))
    syy = float(np.dot(d[:, 1], d[:, 1]))
    sxy = float(np.dot(d[:, 0], d[:, 1]))
    gap = math.hypot(sxx - syy, 2.0 * sxy)
    if gap <= 1e-12 * (sxx + syy):
        return 0.0
    yaw = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    return math.pi / 2 if yaw <= -math.pi / 2 else yaw


def fit_box(xyz: np.ndarray, params: ClusterParams) -> OrientedBox:
    """Tightest BEV rectangle aligned with the principal axis of ``xyz``."""
    xy = xyz[:, :2]
    yaw = principal_yaw(xy)
    c, s = math.cos(yaw), math.sin(yaw)
    pu = xy[:, 0] * c + xy[:, 1] * s
    pv = -xy[:, 0] * s + xy[:, 1] * c
    u0, u1 = float(pu.min()), float(pu.max())
    v0, v1 = float(pv.min()), float(pv.max())
    mu, mv = (u0 + u1) / 2, (v0 + v1) / 2
    z0, z1 = float(xyz[:, 2].min()), float(xyz[:, 2].max())
    if z1 - z0 < FLAT_Z_EXTENT:
        h = params.default_height
        cz = z0 + h / 2
    else:
        h = z1 - z0
        cz = (z0 + z1) / 2
    return OrientedBox(
        cx=mu * c - mv * s, cy=mu * s + mv * c, cz=cz,
        length=max(u1 - u0, MIN_EXTENT), width=max(v1 - v0, MIN_EXTENT), height=h,
        yaw=yaw, score=min(1.0, len(xyz) / 100.0), class_id=params.class_id)


def cluster_detect(patch, params: ClusterParams) -> PatchPrediction:
    xyz = patch.normalized_points.xyz
    labels = single_link_labels(xyz[:, :2], params.link_radius)
    if len(labels) == 0:
        return PatchPrediction([])
    n_lab = labels.max() + 1
    first = np.full(n_lab, len(labels), dtype=np.int64)
    np.minimum.at(first, labels, np.arange(len(labels)))
    sizes = np.bincount(labels, minlength=n_lab)
    boxes = []
    for lab in np.argsort(first, kind="stable"):
        if sizes[lab] < params.min_cluster:
            continue
        boxes.append(fit_box(xyz[labels == lab], params))
    return PatchPrediction(boxes)


class ClusterPerceiver:
    detects = True
    segments = False

    def __init__(self, params: ClusterParams = ClusterParams()):
        self.params = params

    def __call__(self, region) -> PatchPrediction:
        return cluster_detect(region, self.params)


# --------------------------------------------------------------------------
# k nearest neighbours


def knn_segment(patch, ref_xyz, ref_labels, k: int, n_classes: int) -> PatchPrediction:
    """Label histogram of the k nearest references for every patch point.

    References are given in the patch frame. Distance ties at the k-th
    neighbour go to the lower reference index. With fewer than ``k``
    references, all of them are used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ref_xyz = np.asarray(ref_xyz, dtype=np.float64).reshape(-1, 3)
    ref_labels = np.asarray(ref_labels, dtype=np.int64)
    if len(ref_xyz) == 0:
        raise ValueError("knn_segment needs at least one reference point")
    pts = patch.normalized_points.xyz
    probs = np.zeros((len(pts), n_classes))
    if len(pts) == 0:
        return PatchPrediction([], probs)
    k_eff = min(k, len(ref_xyz))
    nn = _knn_indices(pts, ref_xyz, k_eff)
    rows = np.repeat(np.arange(len(pts)), k_eff)
    np.add.at(probs, (rows, ref_labels[nn].ravel()), 1.0)
    probs /= k_eff
    return PatchPrediction([], probs)


def _knn_indices(pts: np.ndarray, refs: np.ndarray, k: int) -> np.ndarray:
    tree = cKDTree(refs)
    q = min(k + 1, len(refs))
    dist, idx = tree.query(pts, k=q)
    dist = dist.reshape(len(pts), q)
    idx = idx.reshape(len(pts), q)
    out = idx[:, :k].copy()
    if q == k:
        # every reference is a neighbour; order is irrelevant to the histogram
        return out
    tied = np.flatnonzero(dist[:, k] <= dist[:, k - 1])
    for i in tied:
        dk = dist[i, k - 1]
        cand = np.asarray(tree.query_ball_point(pts[i], dk * (1 + 1e-12) + 1e-300), dtype=np.int64)
        d2 = np.sum((refs[cand] - pts[i]) ** 2, axis=1)
        order = np.lexsort((cand, d2))
        out[i] = cand[order[:k]]
    return out


class KnnPerceiver:
    """Segments each region against a labelled reference cloud in the LiDAR frame."""

    detects = False
    segments = True

    def __init__(self, ref_xyz, ref_labels, k: int = 1, n_classes: Optional[int] = None):
        self.ref_xyz = np.asarray(ref_xyz, dtype=np.float64).reshape(-1, 3)
        self.ref_labels = np.asarray(ref_labels, dtype=np.int64)
        if len(self.ref_xyz) != len(self.ref_labels):
            raise ValueError("reference points and labels differ in length")
        if len(self.ref_xyz) == 0:
            raise ValueError("empty reference cloud")
        self.k = k
        self.n_classes = int(n_classes if n_classes is not None else self.ref_labels.max() + 1)
        self._bev_tree = cKDTree(self.ref_xyz[:, :2])

    def _refs_near(self, region, margin: float) -> np.ndarray:
        idx = self._bev_tree.query_ball_point(region.center, region.layout.reach * math.sqrt(2) + margin)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def __call__(self, region) -> PatchPrediction:
        layout = getattr(region, "layout", None)
        if layout is None or len(region.normalized_points) == 0:
            sel = np.arange(len(self.ref_xyz))
            return knn_segment(region, region.to_frame(self.ref_xyz[sel]),
                               self.ref_labels[sel], self.k, self.n_classes)
        # Grow a BEV window around the patch until every point's k-th
        # neighbour inside it is closer than the window margin; any reference
        # outside is then strictly farther and cannot change the answer.
        margin = 1.0
        while True:
            sel = self._refs_near(region, margin)
            if len(sel) == len(self.ref_xyz):
                break
            if len(sel) >= self.k:
                d, _ = cKDTree(region.to_frame(self.ref_xyz[sel])).query(
                    region.normalized_points.xyz, k=self.k)
                dk = d if self.k == 1 else d[:, -1]
                if np.max(dk) < margin:
                    break
            margin *= 2
        return knn_segment(region, region.to_frame(self.ref_xyz[sel]),
                           self.ref_labels[sel], self.k, self.n_classes)
