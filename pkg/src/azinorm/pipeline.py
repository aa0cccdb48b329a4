"""End-to-end split / perceive / merge drivers for patch and sector modes."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

from .geom import OrientedBox
from .merge import DEFAULT_NMS_IOU, ScenePrediction, merge_detections, merge_segmentation
from .patching import PatchParams, sample_positive, split_scene
from .perceive import PatchPrediction
from .scene_io import PointCloud
from .sectorial import SectorParams, merge_sector_detections, split_sectors


@dataclass
class PipelineResult:
    prediction: ScenePrediction
    regions: list
    region_predictions: List[PatchPrediction]


def perceive_all(regions: Sequence, perceiver, threads: int = 1) -> List[PatchPrediction]:
    """Run ``perceiver`` on every region; output order follows ``regions``."""
    if threads > 1 and len(regions) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(perceiver, regions))
    return [perceiver(r) for r in regions]


def split(cloud: PointCloud, params: Union[PatchParams, SectorParams], threads: int = 1,
          z_range=None) -> list:
    if isinstance(params, SectorParams):
        return [s for s in split_sectors(cloud, params, z_range) if len(s)]
    return split_scene(cloud, params, threads=threads)


def detect(cloud: PointCloud, params: Union[PatchParams, SectorParams], perceiver, *,
           iou_threshold: float = DEFAULT_NMS_IOU, class_aware: bool = True,
           threads: int = 1, z_range=None,
           gt_boxes: Optional[Sequence[OrientedBox]] = None,
           neg_ratio: Optional[float] = None, seed: int = 0) -> PipelineResult:
    """Detection pipeline.

    ``neg_ratio`` (patch mode with ``gt_boxes`` only) applies positive
    sampling before perception, as done when preparing training batches.
    ``z_range`` is used in sector mode; patch mode takes it from ``params``.
    """
    regions = split(cloud, params, threads, z_range)
    if neg_ratio is not None and isinstance(params, PatchParams):
        regions = sample_positive(regions, gt_boxes or [], neg_ratio, seed)
    preds = perceive_all(regions, perceiver, threads)
    if isinstance(params, SectorParams):
        merged = merge_sector_detections(list(zip(regions, preds)), iou_threshold, class_aware)
    else:
        merged = merge_detections([(r.transform, p) for r, p in zip(regions, preds)],
                                  iou_threshold, class_aware)
    return PipelineResult(merged, regions, preds)


def segment(cloud: PointCloud, params: Union[PatchParams, SectorParams], perceiver,
            n_classes: int, *, threads: int = 1, z_range=None) -> PipelineResult:
    regions = split(cloud, params, threads, z_range)
    preds = perceive_all(regions, perceiver, threads)
    merged = merge_segmentation(list(zip(regions, preds)), len(cloud), n_classes)
    return PipelineResult(merged, regions, preds)
