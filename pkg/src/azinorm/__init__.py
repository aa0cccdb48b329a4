"""Azimuth normalization for LiDAR point clouds.

Split a scene into overlapping patches, rotate each patch so its radial
direction is +X, perceive patches independently, map the results back and
merge them.
"""

from .geom import (NormTransform, OrientedBox, azimuth_of, denormalize_box, denormalize_boxes,
                   denormalize_point, normalize_box, normalize_boxes, normalize_point, wrap_angle)
from .merge import ScenePrediction, merge_detections, merge_segmentation, nms, rotated_iou_bev
from .patching import (CircularLayout, Patch, PatchParams, SquareLayout, build_index,
                       enumerate_centers, extract_patch, sample_positive, split_scene)
from .perceive import (ClusterParams, ClusterPerceiver, KnnPerceiver, OraclePerceiver,
                       PatchPrediction, cluster_detect, knn_segment, oracle_detect)
from .scene_io import LabeledScene, PointCloud
from .sectorial import SectorParams, merge_sector_detections, split_sectors

__version__ = "0.1.0"

__all__ = [
    "azimuth_of",
    "build_index",
    "CircularLayout",
    "cluster_detect",
    "ClusterParams",
    "ClusterPerceiver",
    "denormalize_box",
    "denormalize_boxes",
    "denormalize_point",
    "enumerate_centers",
    "extract_patch",
    "knn_segment",
    "KnnPerceiver",
    "LabeledScene",
    "merge_detections",
    "merge_sector_detections",
    "merge_segmentation",
    "nms",
    "normalize_box",
    "normalize_boxes",
    "normalize_point",
    "NormTransform",
    "oracle_detect",
    "OraclePerceiver",
    "OrientedBox",
    "Patch",
    "PatchParams",
    "PatchPrediction",
    "PointCloud",
    "rotated_iou_bev",
    "sample_positive",
    "ScenePrediction",
    "SectorParams",
    "split_scene",
    "split_sectors",
    "SquareLayout",
    "wrap_angle",
]
