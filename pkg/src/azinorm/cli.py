"""
Command-line entry point.

    azinorm gen     --output scene.bin [--seed N] [--config spec.json]
    azinorm detect  --input scene.bin [--labels scene.labels.json] --output preds.json
    azinorm segment --input scene.bin --labels scene.labels.json --output labels.json
    azinorm bench   [--input scene.bin] [--repetitions N]
    azinorm render  --input scene.bin [--labels ...] [--predictions ...] --output view.svg

Machine-readable reports go to stdout as one JSON line, human summaries to
stderr. Every command validates its arguments and reads its inputs before
writing anything; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import pipeline
from .merge import DEFAULT_NMS_IOU
from .patching import CircularLayout, PatchParams, SquareLayout, coverage_counts, enumerate_centers
from .perceive import ClusterParams, ClusterPerceiver, KnnPerceiver, OraclePerceiver
from .render import render_svg
from .scene_io import (FormatError, LabeledScene, SchemaError, atomic_write,
                       labels_from_json, labels_to_json, load_points, predictions_from_json,
                       predictions_to_json, write_point_bin)
from .sectorial import SectorParams
from .synth import MetricReport, SceneSpec, bench_throughput, gen_scene, recall_precision

PRESETS = {"paper": (9.6, 6.4), "fast": (11.2, 18.8)}
DEFAULT_SQUARE_SIDE = 17.6


class ConfigError(ValueError):
    pass


class InputError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    params: object  # PatchParams or SectorParams
    z_range: Optional[tuple]
    perceiver: str
    cluster: ClusterParams
    knn_k: int
    iou_threshold: float
    neg_ratio: Optional[float]
    seed: int
    threads: int

    @property
    def sector_mode(self) -> bool:
        return isinstance(self.params, SectorParams)


def _add_pipeline_args(p: argparse.ArgumentParser, perceiver_default: str) -> None:
    g = p.add_argument_group("patching")
    g.add_argument("--layout", choices=["circle", "square", "sector"], default="circle")
    g.add_argument("--preset", choices=sorted(PRESETS), default="paper",
                   help="paper: r=9.6 d=6.4; fast: r=11.2 d=18.8")
    g.add_argument("--radius", type=float, help="circular patch radius in m")
    g.add_argument("--side", type=float, help=f"square patch side in m (default {DEFAULT_SQUARE_SIDE})")
    g.add_argument("--stride", type=float, help="lattice stride in m")
    g.add_argument("--range", type=float, default=75.0, dest="half_extent",
                   help="patch centers cover [-range, range]^2 (default 75)")
    g.add_argument("--min-points", type=int, default=5)
    g.add_argument("--z-range", type=float, nargs=2, metavar=("ZMIN", "ZMAX"))
    g.add_argument("--sectors", type=int, default=4)
    g.add_argument("--overlap-deg", type=float, default=5.0)
    g = p.add_argument_group("perception")
    g.add_argument("--perceiver", choices=["oracle", "cluster", "knn"], default=perceiver_default)
    g.add_argument("--link-radius", type=float, default=0.5)
    g.add_argument("--min-cluster", type=int, default=5)
    g.add_argument("--default-height", type=float, default=1.5)
    g.add_argument("--knn-k", type=int, default=1)
    g.add_argument("--nms-iou", type=float, default=DEFAULT_NMS_IOU)
    g.add_argument("--neg-ratio", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)


def build_config(args) -> PipelineConfig:
    try:
        z_range = tuple(args.z_range) if args.z_range else None
        if args.layout == "sector":
            params = SectorParams(args.sectors, math.radians(args.overlap_deg))
        else:
            r, d = PRESETS[args.preset]
            stride = args.stride if args.stride is not None else d
            if args.layout == "circle":
                layout = CircularLayout(args.radius if args.radius is not None else r)
            else:
                layout = SquareLayout(args.side if args.side is not None else DEFAULT_SQUARE_SIDE)
            if not args.half_extent >= 0:
                raise ValueError("--range must be >= 0")
            params = PatchParams.square_bounds(args.half_extent, layout=layout, stride=stride,
                                               min_points=args.min_points, z_range=z_range)
        cluster = ClusterParams(args.link_radius, args.min_cluster, args.default_height)
        if args.knn_k < 1:
            raise ValueError("--knn-k must be >= 1")
        if not 0.0 <= args.nms_iou <= 1.0:
            raise ValueError("--nms-iou must lie in [0, 1]")
        if args.neg_ratio is not None and args.neg_ratio < 0:
            raise ValueError("--neg-ratio must be >= 0")
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return PipelineConfig(params, z_range, args.perceiver, cluster, args.knn_k, args.nms_iou,
                          args.neg_ratio, args.seed, args.threads)


def _check_output(path: Optional[str]) -> Path:
    if not path:
        raise ConfigError("--output is required")
    out = Path(path)
    if not out.parent.resolve().is_dir():
        raise ConfigError(f"{out}: output directory does not exist")
    return out


def _read_scene(points: str, labels: Optional[str]) -> LabeledScene:
    for p in filter(None, (points, labels)):
        if not Path(p).is_file():
            raise InputError(f"{p}: no such file")
    try:
        cloud = load_points(points)
    except FormatError as e:
        raise InputError(f"{points}: {e}") from None
    if labels is None:
        return LabeledScene(cloud)
    try:
        _, boxes, point_labels = labels_from_json(Path(labels).read_text())
        return LabeledScene(cloud, boxes, point_labels)
    except (SchemaError, ValueError) as e:
        raise InputError(f"{labels}: {e}") from None


def _stats_report(n_points: int, regions) -> MetricReport:
    counts = coverage_counts(n_points, regions)
    return MetricReport(
        coverage_fraction=float(np.count_nonzero(counts)) / n_points if n_points else 0.0,
        duplication_mean=float(counts.sum()) / n_points if n_points else 0.0,
        patches_processed=len(regions))


def _emit(report: MetricReport) -> None:
    print(report.to_json())
    print(report.summary(), file=sys.stderr)


# --------------------------------------------------------------------------
# commands


def cmd_detect(args) -> int:
    cfg = build_config(args)
    out = _check_output(args.output)
    if cfg.perceiver == "knn":
        raise ConfigError("the knn perceiver segments; use the segment command")
    if cfg.perceiver == "oracle" and not args.labels:
        raise ConfigError("the oracle perceiver needs --labels")
    scene = _read_scene(args.input, args.labels)
    if cfg.perceiver == "oracle":
        perceiver = OraclePerceiver(scene.gt_boxes)
    else:
        perceiver = ClusterPerceiver(cfg.cluster)
    res = pipeline.detect(scene.cloud, cfg.params, perceiver, iou_threshold=cfg.iou_threshold,
                          threads=cfg.threads, z_range=cfg.z_range,
                          gt_boxes=scene.gt_boxes, neg_ratio=cfg.neg_ratio, seed=cfg.seed)
    atomic_write(out, predictions_to_json(res.prediction.boxes, scene.cloud.frame_id).encode())
    if args.labels:
        report = _stats_report(len(scene.cloud), res.regions)
        report.recall_at_iou, report.precision_at_iou = recall_precision(
            res.prediction.boxes, scene.gt_boxes)
        _emit(report)
    return 0


def cmd_segment(args) -> int:
    cfg = build_config(args)
    out = _check_output(args.output)
    if cfg.perceiver != "knn":
        raise ConfigError("segment supports only --perceiver knn")
    if not args.labels:
        raise ConfigError("the knn perceiver needs --labels with point_labels")
    scene = _read_scene(args.input, args.labels)
    if scene.point_labels is None:
        raise InputError(f"{args.labels}: no point_labels")
    n = len(scene.cloud)
    n_classes = args.classes or (int(scene.point_labels.max()) + 1 if n else 1)
    if n == 0:
        labels = np.zeros(0, dtype=np.int64)
        regions = []
    else:
        perceiver = KnnPerceiver(scene.cloud.xyz, scene.point_labels, cfg.knn_k, n_classes)
        res = pipeline.segment(scene.cloud, cfg.params, perceiver, n_classes,
                               threads=cfg.threads, z_range=cfg.z_range)
        labels, regions = res.prediction.point_labels, res.regions
    atomic_write(out, labels_to_json([], labels, scene.cloud.frame_id).encode())
    _emit(_stats_report(n, regions))
    return 0


def _scene_spec(args) -> SceneSpec:
    try:
        spec = SceneSpec()
        if args.config:
            if not Path(args.config).is_file():
                raise InputError(f"{args.config}: no such file")
            spec = SceneSpec.parse(Path(args.config).read_text())
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        return spec
    except ValueError as e:
        raise ConfigError(f"{args.config or 'scene config'}: {e}") from None


def _gen_paths(output: str):
    out = _check_output(output)
    stem = out.with_suffix("") if out.suffix == ".bin" else out
    return stem.with_name(stem.name + ".bin"), stem.with_name(stem.name + ".labels.json")


def cmd_gen(args) -> int:
    spec = _scene_spec(args)
    bin_path, labels_path = _gen_paths(args.output)
    scene = gen_scene(spec)
    atomic_write(bin_path, write_point_bin(scene.cloud))
    atomic_write(labels_path, labels_to_json(scene.gt_boxes, scene.point_labels,
                                             bin_path.stem).encode())
    print(f"wrote {bin_path} ({len(scene.cloud)} points) and {labels_path} "
          f"({len(scene.gt_boxes)} boxes)", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = build_config(args)
    if args.repetitions < 1:
        raise ConfigError("--repetitions must be >= 1")
    if args.input:
        scene = _read_scene(args.input, args.labels)
    else:
        scene = gen_scene(SceneSpec(seed=cfg.seed))
    if cfg.perceiver == "oracle":
        perceiver = OraclePerceiver(scene.gt_boxes)
    elif cfg.perceiver == "cluster":
        perceiver = ClusterPerceiver(cfg.cluster)
    else:
        if scene.point_labels is None:
            raise InputError("the knn perceiver needs point labels")
        perceiver = KnnPerceiver(scene.cloud.xyz, scene.point_labels, cfg.knn_k)
    report = bench_throughput(scene.cloud, cfg.params, perceiver, args.repetitions,
                              threads=cfg.threads, iou_threshold=cfg.iou_threshold,
                              gt_boxes=scene.gt_boxes if scene.gt_boxes else None,
                              z_range=cfg.z_range)
    _emit(report)
    return 0


def cmd_render(args) -> int:
    cfg = build_config(args)
    out = _check_output(args.output)
    scene = _read_scene(args.input, args.labels)
    preds = []
    if args.predictions:
        if not Path(args.predictions).is_file():
            raise InputError(f"{args.predictions}: no such file")
        try:
            preds = predictions_from_json(Path(args.predictions).read_text())[1]
        except SchemaError as e:
            raise InputError(f"{args.predictions}: {e}") from None
    centers, layout = None, None
    if args.render_patches and isinstance(cfg.params, PatchParams):
        layout = cfg.params.layout
        regions = pipeline.split(scene.cloud, cfg.params, cfg.threads)
        centers = np.array([r.center for r in regions]) if regions else enumerate_centers(cfg.params)[:0]
    h = args.half_extent
    svg = render_svg(scene.cloud.xyz, scene.gt_boxes, preds, (-h, h, -h, h), centers, layout,
                     title=scene.cloud.frame_id)
    atomic_write(out, svg.encode())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="azinorm", description="Azimuth-normalized patch pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="patch-wise detection with NMS merge")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", help="GT labels JSON (needed by the oracle; enables metrics)")
    p.add_argument("--output")
    _add_pipeline_args(p, "cluster")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("segment", help="patch-wise segmentation with probability averaging")
    p.add_argument("--input", required=True)
    p.add_argument("--labels")
    p.add_argument("--output")
    p.add_argument("--classes", type=int, help="number of classes (default: from labels)")
    _add_pipeline_args(p, "knn")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("gen", help="write a synthetic scene (.bin + .labels.json)")
    p.add_argument("--output")
    p.add_argument("--config", help="scene spec as JSON or key=value lines")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="time the pipeline; prints one JSON line")
    p.add_argument("--input")
    p.add_argument("--labels")
    p.add_argument("--repetitions", type=int, default=3)
    _add_pipeline_args(p, "cluster")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="BEV SVG of points, GT and predictions")
    p.add_argument("--input", required=True)
    p.add_argument("--labels")
    p.add_argument("--predictions")
    p.add_argument("--output")
    p.add_argument("--render-patches", action="store_true")
    _add_pipeline_args(p, "cluster")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"azinorm {args.command}: {e}", file=sys.stderr)
        return 2
    except (InputError, OSError) as e:
        print(f"azinorm {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
