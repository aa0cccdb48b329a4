import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from azinorm.cli import main
from azinorm.scene_io import PointCloud, labels_from_json, labels_to_json, write_point_bin
from azinorm.synth import MetricReport

SMALL = "n_objects = 6\nground_points = 3000\nbounds = -30,30,-30,30\n"


@pytest.fixture
def scene(tmp_path):
    cfg = tmp_path / "spec.txt"
    cfg.write_text(SMALL)
    assert main(["gen", "--output", str(tmp_path / "s"), "--seed", "3", "--config", str(cfg)]) == 0
    return tmp_path / "s.bin", tmp_path / "s.labels.json"


def test_gen_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "--output", str(tmp_path / name), "--seed", "11"]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    la = json.loads((tmp_path / "a.labels.json").read_text())
    lb = json.loads((tmp_path / "b.labels.json").read_text())
    assert la["boxes"] == lb["boxes"] and la["point_labels"] == lb["point_labels"]


def test_detect_oracle_recall(scene, tmp_path, capsys):
    pts, labels = scene
    out = tmp_path / "p.json"
    rc = main(["detect", "--input", str(pts), "--labels", str(labels), "--output", str(out),
               "--perceiver", "oracle", "--range", "32"])
    assert rc == 0
    report = MetricReport.from_json(capsys.readouterr().out.strip())
    assert report.recall_at_iou[0.7] == 1.0 and report.precision_at_iou[0.7] == 1.0
    assert len(json.loads(out.read_text())["boxes"]) == 6


def test_detect_cluster_runs(scene, tmp_path):
    pts, _ = scene
    out = tmp_path / "p.json"
    assert main(["detect", "--input", str(pts), "--output", str(out), "--z-range", "0.2", "10",
                 "--range", "32"]) == 0
    assert json.loads(out.read_text())["boxes"]


def test_detect_empty_scene(tmp_path):
    pts = tmp_path / "empty.bin"
    pts.write_bytes(b"")
    out = tmp_path / "p.json"
    assert main(["detect", "--input", str(pts), "--output", str(out)]) == 0
    assert json.loads(out.read_text())["boxes"] == []


def test_detect_missing_input(tmp_path, capsys):
    missing = tmp_path / "nope.bin"
    assert main(["detect", "--input", str(missing), "--output", str(tmp_path / "p.json")]) != 0
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "p.json").exists()


def test_detect_corrupt_input_names_path(tmp_path, capsys):
    pts = tmp_path / "bad.bin"
    pts.write_bytes(b"\x00" * 7)
    assert main(["detect", "--input", str(pts), "--output", str(tmp_path / "p.json")]) == 1
    assert str(pts) in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--nms-iou", "1.5"], ["--threads", "0"], ["--radius", "-1"], ["--stride", "0"],
    ["--layout", "sector", "--sectors", "4", "--overlap-deg", "60"], ["--perceiver", "oracle"],
])
def test_validation_failure_writes_nothing(scene, tmp_path, argv):
    pts, _ = scene
    out = tmp_path / "p.json"
    assert main(["detect", "--input", str(pts), "--output", str(out)] + argv) == 2
    assert not out.exists()


def test_gen_bad_config_writes_nothing(tmp_path):
    cfg = tmp_path / "spec.txt"
    cfg.write_text("n_objects = -3\n")
    assert main(["gen", "--output", str(tmp_path / "s"), "--config", str(cfg)]) == 2
    assert list(tmp_path.iterdir()) == [cfg]


def test_segment_self_reference(scene, tmp_path, capsys):
    pts, labels = scene
    out = tmp_path / "seg.json"
    assert main(["segment", "--input", str(pts), "--labels", str(labels), "--output", str(out),
                 "--range", "24"]) == 0
    _, _, gt = labels_from_json(labels.read_text())
    _, _, got = labels_from_json(out.read_text())
    assert len(got) == len(gt)
    covered = got >= 0
    assert covered.any() and (~covered).any()
    np.testing.assert_array_equal(got[covered], gt[covered])
    report = MetricReport.from_json(capsys.readouterr().out.strip())
    assert report.coverage_fraction == pytest.approx(covered.mean())


def test_segment_uncovered_points_are_unknown(tmp_path):
    pts = tmp_path / "s.bin"
    labels = tmp_path / "s.labels.json"
    xyz = np.array([[0.5, 0, 0], [0.6, 0, 0], [60.0, 0, 0]])
    pts.write_bytes(write_point_bin(PointCloud.from_array(xyz)))
    labels.write_text(labels_to_json([], np.array([1, 1, 2]), "s"))
    out = tmp_path / "seg.json"
    assert main(["segment", "--input", str(pts), "--labels", str(labels), "--output", str(out),
                 "--range", "10", "--min-points", "1"]) == 0
    assert labels_from_json(out.read_text())[2].tolist() == [1, 1, -1]


def test_segment_sector_mode_covers_everything(scene, tmp_path):
    pts, labels = scene
    out = tmp_path / "seg.json"
    assert main(["segment", "--input", str(pts), "--labels", str(labels), "--output", str(out),
                 "--layout", "sector", "--sectors", "8"]) == 0
    gt = labels_from_json(labels.read_text())[2]
    np.testing.assert_array_equal(labels_from_json(out.read_text())[2], gt)


def test_render_empty_scene(tmp_path):
    pts = tmp_path / "empty.bin"
    pts.write_bytes(b"")
    out = tmp_path / "v.svg"
    assert main(["render", "--input", str(pts), "--output", str(out), "--render-patches"]) == 0
    root = ET.fromstring(out.read_text())
    assert root.tag.endswith("svg")
    groups = {g.get("id"): g for g in root.iter("{http://www.w3.org/2000/svg}g")}
    assert len(groups["frame"]) > 0
    assert all(len(groups[k]) == 0 for k in ("points", "gt", "pred", "patches") if k in groups)


def test_render_scene_with_predictions(scene, tmp_path):
    pts, labels = scene
    preds = tmp_path / "p.json"
    assert main(["detect", "--input", str(pts), "--labels", str(labels), "--output", str(preds),
                 "--perceiver", "oracle", "--range", "32"]) == 0
    out = tmp_path / "v.svg"
    assert main(["render", "--input", str(pts), "--labels", str(labels), "--predictions", str(preds),
                 "--output", str(out), "--render-patches", "--range", "32"]) == 0
    root = ET.fromstring(out.read_text())
    groups = {g.get("id"): g for g in root.iter("{http://www.w3.org/2000/svg}g")}
    assert len(groups["gt"]) == 6 and len(groups["pred"]) == 6 and len(groups["patches"]) > 0


def test_bench_json_round_trip(scene, capsys):
    pts, labels = scene
    assert main(["bench", "--input", str(pts), "--labels", str(labels), "--perceiver", "oracle",
                 "--repetitions", "2", "--range", "32"]) == 0
    line = capsys.readouterr().out.strip()
    assert "\n" not in line
    report = MetricReport.from_json(line)
    assert report.to_json() == line
    assert len(report.timings) == 2 and report.recall_at_iou[0.7] == 1.0


def test_detect_threads_identical(scene, tmp_path):
    pts, _ = scene
    outs = []
    for t in ("1", "4"):
        out = tmp_path / f"p{t}.json"
        assert main(["detect", "--input", str(pts), "--output", str(out), "--threads", t,
                     "--z-range", "0.2", "10", "--range", "32"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
