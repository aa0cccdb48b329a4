"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary.

Run alone with ``pytest -m acceptance -v``.
"""

import math
import time

import numpy as np
import pytest
import shapely

from azinorm import pipeline
from azinorm.cli import main
from azinorm.geom import (NormTransform, OrientedBox, denormalize_boxes, denormalize_point,
                          normalize_boxes, normalize_point, rot90_box, rotate_box, rotate_xy,
                          wrap_angles)
from azinorm.merge import nms, rotated_iou_bev
from azinorm.patching import (CircularLayout, PatchParams, SquareLayout, coverage_counts,
                              split_scene)
from azinorm.perceive import ClusterPerceiver, KnnPerceiver, OraclePerceiver
from azinorm.scene_io import PointCloud
from azinorm.sectorial import SectorParams, split_sectors
from azinorm.synth import SceneSpec, gen_scene, recall_precision, rot90_scene, rotate_scene

from oracles import mc_iou, random_box, reference_nms, shapely_poly

pytestmark = pytest.mark.acceptance

GROUND_CUT = (0.2, 10.0)


def box_set_mismatch(expected, actual):
    """Largest center / yaw (mod pi) / size deviation after nearest-center matching."""
    if len(expected) != len(actual):
        return math.inf
    if not expected:
        return 0.0
    act = np.array([[b.cx, b.cy] for b in actual])
    used = np.zeros(len(actual), dtype=bool)
    worst = 0.0
    for e in expected:
        d = np.hypot(act[:, 0] - e.cx, act[:, 1] - e.cy)
        d[used] = np.inf
        j = int(np.argmin(d))
        used[j] = True
        a = actual[j]
        dyaw = (a.yaw - e.yaw) % math.pi
        dyaw = min(dyaw, math.pi - dyaw)
        worst = max(worst, d[j], dyaw, abs(a.cz - e.cz), abs(a.length - e.length),
                    abs(a.width - e.width), abs(a.height - e.height))
    return worst


def test_criterion_01_round_trip(verdict):
    rng = np.random.default_rng(1)
    n_centers = 1000
    centers = rng.uniform(-150, 150, (n_centers, 2))
    pts = np.column_stack([rng.uniform(-150, 150, (10 ** 6, 2)), rng.uniform(-5, 5, 10 ** 6)])
    pts = pts.reshape(n_centers, -1, 3)
    boxes = np.column_stack([rng.uniform(-150, 150, (10 ** 5, 2)), rng.uniform(-5, 5, 10 ** 5),
                             rng.uniform(0.5, 5, (10 ** 5, 3)),
                             rng.uniform(-math.pi, math.pi, 10 ** 5),
                             rng.uniform(0, 1, 10 ** 5), rng.integers(0, 3, 10 ** 5)])
    boxes[:, 6] = wrap_angles(boxes[:, 6])
    boxes = boxes.reshape(n_centers, -1, 9)

    start = time.perf_counter()
    pt_err = box_xy_err = yaw_err = 0.0
    for i in range(n_centers):
        t = NormTransform.at(centers[i])
        back = denormalize_point(t, normalize_point(t, pts[i]))
        pt_err = max(pt_err, float(np.abs(back - pts[i]).max()))
        bb = denormalize_boxes(t, normalize_boxes(t, boxes[i]))
        box_xy_err = max(box_xy_err, float(np.abs(bb[:, :6] - boxes[i][:, :6]).max()))
        yaw_err = max(yaw_err, float(np.abs(wrap_angles(bb[:, 6] - boxes[i][:, 6])).max()))
    elapsed = time.perf_counter() - start

    ok = pt_err <= 1e-9 and box_xy_err <= 1e-9 and yaw_err <= 1e-12 and elapsed <= 2.0
    assert verdict(1, ok, f"point err {pt_err:.2e} m, box err {box_xy_err:.2e} m, "
                          f"yaw err {yaw_err:.2e} rad, {elapsed:.2f} s")


def test_criterion_02_azimuth_elimination(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        c = rng.uniform(-60, 60, 2)
        phi = rng.uniform(-math.pi, math.pi)
        obj = np.column_stack([c + rng.normal(0, 1.5, (200, 2)), rng.uniform(0, 2, 200)])
        a = normalize_point(NormTransform.at(c), obj)
        b = normalize_point(NormTransform.at(rotate_xy(c, phi)), rotate_xy(obj, phi))
        worst = max(worst, float(np.abs(a - b).max()))
    assert verdict(2, worst <= 1e-9, f"max pointwise deviation {worst:.2e} m over 50 pairs")


def test_criterion_03_rotation_equivariance(verdict):
    perceiver = ClusterPerceiver()
    patch_params = PatchParams(z_range=GROUND_CUT)
    worst_patch = worst_sector = 0.0
    n_boxes = 0
    for seed in range(20):
        scene = gen_scene(SceneSpec(seed=seed, n_objects=10))
        q = 1 + seed % 3
        base = pipeline.detect(scene.cloud, patch_params, perceiver).prediction.boxes
        turned = pipeline.detect(rot90_scene(scene, q).cloud, patch_params,
                                 perceiver).prediction.boxes
        worst_patch = max(worst_patch, box_set_mismatch([rot90_box(b, q) for b in base], turned))
        n_boxes += len(base)

        for k in (4, 8):
            params = SectorParams(k, math.radians(5))
            m = 1 + seed % (k - 1)
            phi = m * 2 * math.pi / k
            base = pipeline.detect(scene.cloud, params, perceiver,
                                   z_range=GROUND_CUT).prediction.boxes
            if k == 4:
                moved = rot90_scene(scene, m)
            else:
                moved = rotate_scene(scene, phi)
            turned = pipeline.detect(moved.cloud, params, perceiver,
                                     z_range=GROUND_CUT).prediction.boxes
            worst_sector = max(worst_sector, box_set_mismatch([rotate_box(b, phi) for b in base],
                                                              turned))
    ok = n_boxes > 0 and worst_patch <= 1e-6 and worst_sector <= 1e-6
    assert verdict(3, ok, f"patch mode max deviation {worst_patch:.2e}, sector mode (K=4, K=8) "
                          f"{worst_sector:.2e}; {n_boxes} boxes in base patch runs")


def test_criterion_04_oracle_plumbing(verdict):
    worst_r = worst_p = 1.0
    for seed in range(50):
        scene = gen_scene(SceneSpec(seed=100 + seed, n_objects=12, ground_points=8000))
        res = pipeline.detect(scene.cloud, PatchParams(), OraclePerceiver(scene.gt_boxes))
        preds = res.prediction.boxes
        r, p = recall_precision(preds, scene.gt_boxes, [0.7])
        worst_r, worst_p = min(worst_r, r[0.7]), min(worst_p, p[0.7])
    assert verdict(4, worst_r == 1.0 and worst_p == 1.0,
                   f"min recall {worst_r}, min precision {worst_p} at IoU 0.7 over 50 scenes")


def test_criterion_05_rotated_iou(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        a = random_box(rng, 0.0)
        b = OrientedBox(a.cx + float(rng.uniform(-2, 2)), a.cy + float(rng.uniform(-2, 2)), 0.0,
                        float(rng.uniform(0.5, 5)), float(rng.uniform(0.5, 3)), 1.0,
                        float(rng.uniform(-math.pi, math.pi)))
        worst = max(worst, abs(rotated_iou_bev(a, b) - mc_iou(a, b, 10 ** 6, seed=i)))

    def unit(cx=0.0, yaw=0.0):
        return OrientedBox(cx, 0.0, 0.0, 1.0, 1.0, 1.0, yaw)
    k = 2 * (math.sqrt(2) - 1)
    analytic = max(abs(rotated_iou_bev(unit(), unit()) - 1.0),
                   abs(rotated_iou_bev(unit(), unit(cx=0.5)) - 1 / 3),
                   abs(rotated_iou_bev(unit(), unit(yaw=math.pi / 4)) - k / (2 - k)))
    ok = worst <= 5e-3 and analytic <= 1e-9
    assert verdict(5, ok, f"max |clip - MC| {worst:.2e} over 100 pairs, analytic err {analytic:.1e}")


def test_criterion_06_nms_equivalence(verdict):
    rng = np.random.default_rng(6)
    mismatches = violations = 0
    for trial in range(1000):
        n = int(rng.integers(1, 201))
        extent = float(rng.uniform(5, 40))
        boxes = [random_box(rng, extent, (1, 2, 3)) for _ in range(n)]
        thr = float(rng.choice([0.0, 0.1, 0.3, 0.5, 0.7]))
        class_aware = trial % 4 != 0
        kept = nms(boxes, thr, class_aware)
        if kept != reference_nms(boxes, thr, class_aware):
            mismatches += 1
        polys = np.array([shapely_poly(b) for b in kept], dtype=object)
        cls = np.array([b.class_id for b in kept])
        for i in range(len(kept) - 1):
            rest = np.arange(i + 1, len(kept))
            if class_aware:
                rest = rest[cls[rest] == cls[i]]
            if len(rest) == 0:
                continue
            inter = shapely.area(shapely.intersection(polys[i], polys[rest]))
            iou = inter / (shapely.area(polys[i]) + shapely.area(polys[rest]) - inter)
            violations += int(np.count_nonzero(iou > thr + 1e-12))
    assert verdict(6, mismatches == 0 and violations == 0,
                   f"{mismatches} mismatching sets of 1000, {violations} kept pairs above threshold")


def brute_force_patches(xyz, layout, stride, half_extent, min_points, z_range):
    steps = [i * stride for i in range(-int(half_extent / stride) - 1, int(half_extent / stride) + 2)
             if -half_extent <= i * stride <= half_extent]
    out = []
    for cy in steps:
        for cx in steps:
            dx, dy = xyz[:, 0] - cx, xyz[:, 1] - cy
            if isinstance(layout, CircularLayout):
                m = dx * dx + dy * dy <= layout.radius * layout.radius
            else:
                m = (np.abs(dx) <= layout.side / 2) & (np.abs(dy) <= layout.side / 2)
            if z_range is not None:
                m &= (xyz[:, 2] >= z_range[0]) & (xyz[:, 2] <= z_range[1])
            idx = np.flatnonzero(m)
            if len(idx) >= max(min_points, 1):
                out.append(((cx, cy), idx))
    return out


def test_criterion_07_extraction_coverage_duplication(verdict):
    mismatches = 0
    for seed in range(100):
        scene = gen_scene(SceneSpec(seed=200 + seed, n_objects=6, ground_points=4000))
        layout = CircularLayout(9.6) if seed % 2 == 0 else SquareLayout(17.6)
        z_range = GROUND_CUT if seed % 3 == 0 else None
        params = PatchParams.square_bounds(48, layout=layout, stride=6.4, min_points=5,
                                           z_range=z_range)
        got = split_scene(scene.cloud, params, threads=1 + seed % 4)
        want = brute_force_patches(scene.cloud.xyz, layout, 6.4, 48, 5, z_range)
        same = len(got) == len(want) and all(
            tuple(p.center) == c and np.array_equal(p.point_indices, idx)
            for p, (c, idx) in zip(got, want))
        mismatches += not same

    rng = np.random.default_rng(7)
    uncovered = 0
    for layout, stride, h in [(CircularLayout(9.6), 6.4, 64.0), (CircularLayout(9.6), 13.5, 67.5),
                              (CircularLayout(10.0), 14.0, 70.0), (SquareLayout(17.6), 17.6, 70.4)]:
        pts = np.column_stack([rng.uniform(-h, h, (10 ** 5, 2)), np.zeros(10 ** 5)])
        params = PatchParams.square_bounds(h, layout=layout, stride=stride)
        counts = coverage_counts(10 ** 5, split_scene(PointCloud.from_array(pts), params))
        uncovered += int(np.count_nonzero(counts == 0))

    pts = np.column_stack([rng.uniform(-40, 40, (10 ** 5, 2)), np.zeros(10 ** 5)])
    counts = coverage_counts(10 ** 5, split_scene(PointCloud.from_array(pts), PatchParams()))
    expect = math.pi * 9.6 ** 2 / 6.4 ** 2
    rel = abs(counts.mean() - expect) / expect
    ok = mismatches == 0 and uncovered == 0 and rel <= 0.1
    assert verdict(7, ok, f"{mismatches}/100 extraction mismatches, {uncovered} uncovered points, "
                          f"duplication {counts.mean():.3f} vs {expect:.3f} ({rel:.1%})")


def test_criterion_08_segmentation_merge(verdict):
    worst_row = 0.0
    wrong = unknown_bad = covered_total = 0
    params = PatchParams.square_bounds(25.6)
    for seed in range(20):
        spec = SceneSpec(seed=300 + seed, n_objects=8, ground_points=6000)
        scene, n_classes = gen_scene(spec), spec.n_classes
        knn = KnnPerceiver(scene.cloud.xyz, scene.point_labels, 1, n_classes)
        res = pipeline.segment(scene.cloud, params, knn, n_classes)
        labels, probs = res.prediction.point_labels, res.prediction.point_probs
        covered = coverage_counts(len(scene.cloud), res.regions) > 0
        worst_row = max(worst_row, float(np.abs(probs[covered].sum(axis=1) - 1).max()))
        wrong += int(np.count_nonzero(labels[covered] != scene.point_labels[covered]))
        unknown_bad += int(np.count_nonzero(labels[~covered] != -1))
        unknown_bad += int(np.count_nonzero(labels[covered] == -1))
        covered_total += int(covered.sum())
    ok = worst_row <= 1e-9 and wrong == 0 and unknown_bad == 0
    assert verdict(8, ok, f"row-sum err {worst_row:.1e}, {wrong} wrong of {covered_total} covered, "
                          f"{unknown_bad} sentinel errors")


def test_criterion_09_sector_range(verdict):
    rng = np.random.default_rng(9)
    pts = np.column_stack([rng.uniform(-150, 150, (10 ** 5, 2)), rng.uniform(-5, 5, 10 ** 5)])
    cloud = PointCloud.from_array(pts)
    details, ok = [], True
    for k in (4, 8):
        params = SectorParams(k, math.radians(5))
        half = math.pi / k + math.radians(5)
        worst = 0.0
        for s in split_sectors(cloud, params):
            q = s.normalized_points.xyz
            if len(q):
                worst = max(worst, float(np.abs(np.arctan2(q[:, 1], q[:, 0])).max()))
        ok &= worst <= half
        details.append(f"K={k}: max |az| {math.degrees(worst):.4f} <= {math.degrees(half):.1f} deg")
    assert verdict(9, ok, "; ".join(details))


def test_criterion_10_thread_determinism(verdict, tmp_path):
    differing = 0
    for seed in range(10):
        assert main(["gen", "--output", str(tmp_path / f"s{seed}"), "--seed", str(400 + seed)]) == 0
        outs = []
        for threads in ("1", "8"):
            out = tmp_path / f"p{seed}_{threads}.json"
            assert main(["detect", "--input", str(tmp_path / f"s{seed}.bin"), "--output", str(out),
                         "--threads", threads, "--z-range", *map(str, GROUND_CUT)]) == 0
            outs.append(out.read_bytes())
        differing += outs[0] != outs[1]
    assert verdict(10, differing == 0, f"{differing}/10 scenes with differing prediction bytes")
