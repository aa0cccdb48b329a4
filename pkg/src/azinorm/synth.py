"""
Seeded synthetic scenes and desk-scale metrics.

Scenes are flat ground plus box-shaped objects whose surfaces are sampled
uniformly. No ray casting or occlusion.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import pipeline
from .geom import OrientedBox, rot90_box, rot90_xy, rotate_box, rotate_xy, wrap_angle
from .merge import rotated_iou_bev
from .patching import coverage_counts
from .scene_io import LabeledScene, PointCloud

GROUND_CLASS = 0
MAX_PLACEMENT_ATTEMPTS = 10_000
NOISE_TRUNCATION = 4.0  # noise vectors longer than this many sigmas are redrawn
GROUND_INTENSITY = 0.1
OBJECT_INTENSITY = 0.6


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObjectClass:
    class_id: int
    length: Tuple[float, float]
    width: Tuple[float, float]
    height: Tuple[float, float]


DEFAULT_CLASSES = {
    "car": ObjectClass(1, (3.5, 5.0), (1.6, 2.1), (1.4, 1.9)),
    "pedestrian": ObjectClass(2, (0.4, 0.8), (0.4, 0.8), (1.5, 1.9)),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: int = 10
    classes: Dict[str, ObjectClass] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    bounds: Tuple[float, float, float, float] = (-40.0, 40.0, -40.0, 40.0)
    ground_points: int = 20_000
    points_per_object_surface: int = 200
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.n_objects < 0 or self.ground_points < 0 or self.points_per_object_surface < 0:
            raise ValueError("counts must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"invalid bounds {self.bounds}")
        if self.n_objects and not self.classes:
            raise ValueError("no object classes")

    @property
    def n_classes(self) -> int:
        return 1 + max((c.class_id for c in self.classes.values()), default=0)

    @classmethod
    def from_mapping(cls, cfg: dict) -> "SceneSpec":
        cfg = dict(cfg)
        kw = {}
        for key, conv in (("seed", int), ("n_objects", int), ("ground_points", int),
                          ("points_per_object_surface", int), ("noise_sigma", float)):
            if key in cfg:
                kw[key] = conv(cfg.pop(key))
        if "half_extent" in cfg:
            h = float(cfg.pop("half_extent"))
            kw["bounds"] = (-h, h, -h, h)
        if "bounds" in cfg:
            b = cfg.pop("bounds")
            if isinstance(b, str):
                b = [float(v) for v in b.replace(",", " ").split()]
            if len(b) != 4:
                raise ValueError("bounds needs 4 numbers: xmin xmax ymin ymax")
            kw["bounds"] = tuple(float(v) for v in b)
        if "classes" in cfg:
            kw["classes"] = {
                name: ObjectClass(int(c["class_id"]), tuple(c["length"]), tuple(c["width"]),
                                  tuple(c["height"]))
                for name, c in cfg.pop("classes").items()}
        if cfg:
            raise ValueError(f"unknown scene config keys: {sorted(cfg)}")
        return cls(**kw)

    @classmethod
    def parse(cls, text: str) -> "SceneSpec":
        """From a JSON object or ``key = value`` lines (``#`` starts a comment)."""
        stripped = text.strip()
        if stripped.startswith("{"):
            return cls.from_mapping(json.loads(stripped))
        cfg = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip()] = v.strip()
        return cls.from_mapping(cfg)


# --------------------------------------------------------------------------
# generation


def _place_boxes(spec: SceneSpec, rng: np.random.Generator) -> List[OrientedBox]:
    names = sorted(spec.classes)
    xmin, xmax, ymin, ymax = spec.bounds
    boxes: List[OrientedBox] = []
    attempts = 0
    while len(boxes) < spec.n_objects:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise SceneGenerationError(
                f"placed {len(boxes)}/{spec.n_objects} objects after "
                f"{MAX_PLACEMENT_ATTEMPTS} attempts")
        oc = spec.classes[names[rng.integers(len(names))]]
        l, w, h = (rng.uniform(*oc.length), rng.uniform(*oc.width), rng.uniform(*oc.height))
        r = math.hypot(l, w) / 2
        if xmax - xmin < 2 * r or ymax - ymin < 2 * r:
            continue
        cx = rng.uniform(xmin + r, xmax - r)
        cy = rng.uniform(ymin + r, ymax - r)
        yaw = wrap_angle(rng.uniform(-math.pi, math.pi))
        cand = OrientedBox(cx, cy, h / 2, l, w, h, yaw, 1.0, oc.class_id)
        if all(rotated_iou_bev(cand, b) == 0.0 for b in boxes):
            boxes.append(cand)
    return boxes


def _truncated_noise(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    noise = rng.normal(0.0, sigma, size=(n, 3)) if sigma > 0 else np.zeros((n, 3))
    if sigma > 0:
        bad = np.linalg.norm(noise, axis=1) > NOISE_TRUNCATION * sigma
        while bad.any():
            noise[bad] = rng.normal(0.0, sigma, size=(int(bad.sum()), 3))
            bad = np.linalg.norm(noise, axis=1) > NOISE_TRUNCATION * sigma
    return noise


def sample_box_surface(b: OrientedBox, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the six faces of ``b`` (box-local coordinates then posed)."""
    half = np.array([b.length, b.width, b.height]) / 2
    # faces: normal axis 0 (area w*h), 1 (l*h), 2 (l*w), each with two signs
    areas = np.array([b.width * b.height, b.length * b.height, b.length * b.width])
    face_axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], size=n)
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    local[np.arange(n), face_axis] = sign * half[face_axis]
    posed = rotate_xy(local, b.yaw)
    posed += (b.cx, b.cy, b.cz)
    return posed


def gen_scene(spec: SceneSpec) -> LabeledScene:
    rng = np.random.default_rng(spec.seed)
    boxes = _place_boxes(spec, rng)
    xmin, xmax, ymin, ymax = spec.bounds
    g = spec.ground_points
    ground = np.column_stack([rng.uniform(xmin, xmax, g), rng.uniform(ymin, ymax, g),
                              rng.normal(0.0, spec.noise_sigma, g) if spec.noise_sigma > 0
                              else np.zeros(g)])
    chunks, labels, inten = [ground], [np.full(g, GROUND_CLASS)], [np.full(g, GROUND_INTENSITY)]
    m = spec.points_per_object_surface
    for b in boxes:
        pts = sample_box_surface(b, m, rng) + _truncated_noise(rng, m, spec.noise_sigma)
        chunks.append(pts)
        labels.append(np.full(m, b.class_id))
        inten.append(np.full(m, OBJECT_INTENSITY))
    cloud = PointCloud(np.concatenate(chunks), np.concatenate(inten), f"synth-{spec.seed}")
    return LabeledScene(cloud, boxes, np.concatenate(labels).astype(np.int64))


def rot90_scene(scene: LabeledScene, quarter_turns: int) -> LabeledScene:
    """Exact rotation of a scene about the sensor by a multiple of 90 degrees."""
    cloud = PointCloud(rot90_xy(scene.cloud.xyz, quarter_turns), scene.cloud.intensity,
                       scene.cloud.frame_id)
    return LabeledScene(cloud, [rot90_box(b, quarter_turns) for b in scene.gt_boxes],
                        scene.point_labels)


def rotate_scene(scene: LabeledScene, angle: float) -> LabeledScene:
    cloud = PointCloud(rotate_xy(scene.cloud.xyz, angle), scene.cloud.intensity,
                       scene.cloud.frame_id)
    return LabeledScene(cloud, [rotate_box(b, angle) for b in scene.gt_boxes],
                        scene.point_labels)


# --------------------------------------------------------------------------
# metrics


DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class MetricReport:
    recall_at_iou: Dict[float, float] = field(default_factory=dict)
    precision_at_iou: Dict[float, float] = field(default_factory=dict)
    coverage_fraction: float = 0.0
    duplication_mean: float = 0.0
    patches_processed: int = 0
    wall_time: float = 0.0
    patches_per_sec: float = 0.0
    points_per_sec: float = 0.0
    timings: List[float] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["recall_at_iou"] = {repr(k): v for k, v in self.recall_at_iou.items()}
        d["precision_at_iou"] = {repr(k): v for k, v in self.precision_at_iou.items()}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        d["recall_at_iou"] = {float(k): v for k, v in d["recall_at_iou"].items()}
        d["precision_at_iou"] = {float(k): v for k, v in d["precision_at_iou"].items()}
        return cls(**d)

    def summary(self) -> str:
        parts = [f"recall@{t:g}={r:.3f} precision@{t:g}={self.precision_at_iou.get(t, float('nan')):.3f}"
                 for t, r in sorted(self.recall_at_iou.items())]
        parts.append(f"patches={self.patches_processed}")
        if self.duplication_mean:
            parts.append(f"duplication={self.duplication_mean:.2f}")
        return " ".join(parts)


def match_count(pred: Sequence[OrientedBox], gt: Sequence[OrientedBox], threshold: float,
                class_aware: bool = False) -> int:
    """Greedy one-to-one matching, predictions in descending score order."""
    order = sorted(range(len(pred)), key=lambda i: -pred[i].score)
    free = list(range(len(gt)))
    matched = 0
    for i in order:
        best, best_iou = None, threshold
        for j in free:
            if class_aware and pred[i].class_id != gt[j].class_id:
                continue
            iou = rotated_iou_bev(pred[i], gt[j])
            if iou > best_iou:
                best, best_iou = j, iou
        if best is not None:
            free.remove(best)
            matched += 1
    return matched


def recall_precision(pred: Sequence[OrientedBox], gt: Sequence[OrientedBox],
                     thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                     class_aware: bool = False) -> Tuple[Dict[float, float], Dict[float, float]]:
    """Recall and precision per IoU threshold.

    Empty GT gives recall 1; no predictions gives precision 1.
    """
    recall, precision = {}, {}
    for t in thresholds:
        m = match_count(pred, gt, t, class_aware)
        recall[float(t)] = m / len(gt) if gt else 1.0
        precision[float(t)] = m / len(pred) if pred else 1.0
    return recall, precision


def bench_throughput(pc: PointCloud, params, perceiver, repetitions: int = 1, *,
                     threads: int = 1, iou_threshold: Optional[float] = None,
                     gt_boxes: Optional[Sequence[OrientedBox]] = None,
                     z_range=None) -> MetricReport:
    """Time the full pipeline ``repetitions`` times and report the median.

    ``z_range`` applies to sector mode; patch mode reads it from ``params``.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    kw = {} if iou_threshold is None else {"iou_threshold": iou_threshold}
    timings, result = [], None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        if perceiver.detects:
            result = pipeline.detect(pc, params, perceiver, threads=threads, z_range=z_range, **kw)
        else:
            n_classes = perceiver.n_classes
            result = pipeline.segment(pc, params, perceiver, n_classes, threads=threads,
                                      z_range=z_range)
        timings.append(time.perf_counter() - t0)
    wall = statistics.median(timings)
    counts = coverage_counts(len(pc), result.regions)
    n = max(len(pc), 1)
    report = MetricReport(
        coverage_fraction=float(np.count_nonzero(counts)) / n if len(pc) else 0.0,
        duplication_mean=float(counts.sum()) / n if len(pc) else 0.0,
        patches_processed=len(result.regions),
        wall_time=wall,
        patches_per_sec=len(result.regions) / wall if wall > 0 else 0.0,
        points_per_sec=len(pc) / wall if wall > 0 else 0.0,
        timings=timings)
    if gt_boxes is not None and perceiver.detects:
        report.recall_at_iou, report.precision_at_iou = recall_precision(
            result.prediction.boxes, gt_boxes)
    return report
