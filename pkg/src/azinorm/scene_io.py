"""
Point-cloud, label and prediction file formats.

* point binary: records of four little-endian float32 (x, y, z, intensity), no header
* ASCII xyz: 3 or 4 numbers per line, whitespace or comma separated, ``#`` comments
* predictions / labels: JSON, floats written with 17 significant digits
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geom import OrientedBox

RECORD_DTYPE = np.dtype("<f4")
RECORD_BYTES = 16
UNKNOWN_LABEL = -1

BOX_POSE_FIELDS = ("cx", "cy", "cz", "l", "w", "h", "yaw")


class FormatError(ValueError):
    """Malformed point data. ``offset``/``record``/``line`` locate the problem."""

    def __init__(self, msg, *, offset=None, record=None, line=None):
        super().__init__(msg)
        self.offset = offset
        self.record = record
        self.line = line


class SchemaError(ValueError):
    """A JSON document does not match the box schema; ``path`` names the field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class PointCloud:
    """Columnar point set: ``xyz`` is (N, 3) float64, ``intensity`` is (N,)."""

    xyz: np.ndarray
    intensity: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(self.intensity) != len(self.xyz):
            raise ValueError("xyz and intensity lengths differ")

    @classmethod
    def empty(cls, frame_id: str = "") -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), frame_id)

    @classmethod
    def from_array(cls, arr, frame_id: str = "") -> "PointCloud":
        """From an (N, 3) or (N, 4) array; missing intensity becomes 0."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 3)
        if arr.shape[1] == 3:
            return cls(arr, np.zeros(len(arr)), frame_id)
        return cls(arr[:, :3], arr[:, 3], frame_id)

    def __len__(self) -> int:
        return len(self.xyz)

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.xyz[indices], self.intensity[indices], self.frame_id)

    def as_array(self) -> np.ndarray:
        """(N, 4) array of x, y, z, intensity."""
        return np.column_stack([self.xyz, self.intensity])


@dataclass
class LabeledScene:
    cloud: PointCloud
    gt_boxes: List[OrientedBox] = field(default_factory=list)
    point_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if len(self.point_labels) != len(self.cloud):
                raise ValueError(
                    f"point_labels has {len(self.point_labels)} entries for "
                    f"{len(self.cloud)} points")


# --------------------------------------------------------------------------
# point binary / ascii


def read_point_bin(data: bytes, frame_id: str = "") -> PointCloud:
    data = bytes(data)
    if len(data) % RECORD_BYTES:
        whole = len(data) - len(data) % RECORD_BYTES
        raise FormatError(
            f"point buffer length {len(data)} is not a multiple of {RECORD_BYTES}; "
            f"trailing bytes start at offset {whole}", offset=whole)
    arr = np.frombuffer(data, dtype=RECORD_DTYPE).reshape(-1, 4)
    finite = np.isfinite(arr).all(axis=1)
    if not finite.all():
        rec = int(np.flatnonzero(~finite)[0])
        raise FormatError(f"non-finite value in record {rec} (byte offset {rec * RECORD_BYTES})",
                          record=rec, offset=rec * RECORD_BYTES)
    arr = arr.astype(np.float64)
    return PointCloud(arr[:, :3], arr[:, 3], frame_id)


def write_point_bin(pc: PointCloud) -> bytes:
    return pc.as_array().astype(RECORD_DTYPE).tobytes()


_SPLIT = re.compile(r"[,\s]+")


def read_ascii_xyz(text: str, frame_id: str = "") -> PointCloud:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        if len(parts) not in (3, 4):
            raise FormatError(f"line {lineno}: expected 3 or 4 values, got {len(parts)}",
                              line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"line {lineno}: not a number in {line!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"line {lineno}: non-finite value", line=lineno)
        if len(vals) == 3:
            vals.append(0.0)
        rows.append(vals)
    if not rows:
        return PointCloud.empty(frame_id)
    return PointCloud.from_array(np.array(rows), frame_id)


def load_points(path) -> PointCloud:
    """Read a scene from disk; ``.bin`` is binary, anything else ASCII."""
    path = Path(path)
    if path.suffix == ".bin":
        return read_point_bin(path.read_bytes(), frame_id=path.stem)
    return read_ascii_xyz(path.read_text(), frame_id=path.stem)


# --------------------------------------------------------------------------
# JSON boxes


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _box_json(b: OrientedBox, with_score: bool) -> str:
    vals = [b.cx, b.cy, b.cz, b.length, b.width, b.height, b.yaw]
    parts = [f'"{k}": {_num(v)}' for k, v in zip(BOX_POSE_FIELDS, vals)]
    if with_score:
        parts.append(f'"score": {_num(b.score)}')
    parts.append(f'"class_id": {int(b.class_id)}')
    return "{" + ", ".join(parts) + "}"


def _boxes_json(boxes: Sequence[OrientedBox], with_score: bool) -> str:
    if not boxes:
        return "[]"
    return "[\n    " + ",\n    ".join(_box_json(b, with_score) for b in boxes) + "\n  ]"


def predictions_to_json(boxes: Sequence[OrientedBox], frame: str = "") -> str:
    if not boxes:
        return '{"frame":' + json.dumps(frame) + ',"boxes":[]}'
    return ('{\n  "frame": ' + json.dumps(frame) + ',\n  "boxes": '
            + _boxes_json(boxes, True) + "\n}\n")


def labels_to_json(boxes: Sequence[OrientedBox], point_labels=None, frame: str = "") -> str:
    out = '{\n  "frame": ' + json.dumps(frame) + ',\n  "boxes": ' + _boxes_json(boxes, False)
    if point_labels is not None:
        out += ',\n  "point_labels": [' + ",".join(str(int(v)) for v in point_labels) + "]"
    return out + "\n}\n"


def _get_number(obj: dict, key: str, path: str) -> float:
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing field")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", f"expected number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise SchemaError(f"{path}.{key}", "non-finite number")
    return float(v)


def _parse_box(obj, path: str, with_score: bool) -> OrientedBox:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected object")
    vals = {k: _get_number(obj, k, path) for k in BOX_POSE_FIELDS}
    for k in ("l", "w", "h"):
        if vals[k] <= 0:
            raise SchemaError(f"{path}.{k}", f"must be > 0, got {vals[k]!r}")
    if not (-math.pi < vals["yaw"] <= math.pi):
        raise SchemaError(f"{path}.yaw", "must lie in (-pi, pi]")
    score = 1.0
    if with_score:
        score = _get_number(obj, "score", path)
        if not 0.0 <= score <= 1.0:
            raise SchemaError(f"{path}.score", "must lie in [0, 1]")
    if "class_id" not in obj:
        raise SchemaError(f"{path}.class_id", "missing field")
    cid = obj["class_id"]
    if isinstance(cid, bool) or not isinstance(cid, int):
        raise SchemaError(f"{path}.class_id", "expected integer")
    return OrientedBox(vals["cx"], vals["cy"], vals["cz"], vals["l"], vals["w"],
                       vals["h"], vals["yaw"], score, cid)


def _parse_doc(text: str, with_score: bool):
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError("$", f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected object")
    frame = doc.get("frame", "")
    if not isinstance(frame, str):
        raise SchemaError("$.frame", "expected string")
    if "boxes" not in doc:
        raise SchemaError("$.boxes", "missing field")
    if not isinstance(doc["boxes"], list):
        raise SchemaError("$.boxes", "expected array")
    boxes = [_parse_box(b, f"$.boxes[{i}]", with_score) for i, b in enumerate(doc["boxes"])]
    return doc, frame, boxes


def predictions_from_json(text: str) -> Tuple[str, List[OrientedBox]]:
    _, frame, boxes = _parse_doc(text, with_score=True)
    return frame, boxes


def labels_from_json(text: str) -> Tuple[str, List[OrientedBox], Optional[np.ndarray]]:
    doc, frame, boxes = _parse_doc(text, with_score=False)
    labels = doc.get("point_labels")
    if labels is not None:
        if not isinstance(labels, list):
            raise SchemaError("$.point_labels", "expected array")
        for i, v in enumerate(labels):
            if isinstance(v, bool) or not isinstance(v, int):
                raise SchemaError(f"$.point_labels[{i}]", "expected integer")
        labels = np.array(labels, dtype=np.int64)
    return frame, boxes, labels


def read_predictions(path) -> List[OrientedBox]:
    return predictions_from_json(Path(path).read_text())[1]


def write_predictions(path, boxes: Sequence[OrientedBox], frame: str = "") -> None:
    atomic_write(path, predictions_to_json(boxes, frame).encode())


def load_labeled_scene(points_path, labels_path=None) -> LabeledScene:
    cloud = load_points(points_path)
    if labels_path is None:
        return LabeledScene(cloud)
    _, boxes, labels = labels_from_json(Path(labels_path).read_text())
    return LabeledScene(cloud, boxes, labels)


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory so no partial file is left."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; give the result the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
