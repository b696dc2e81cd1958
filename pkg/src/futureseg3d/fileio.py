"""Bit-exact file formats: PGM segmentations, PFM depths, CSV trajectories,
key-value intrinsics, and the frame-bundle manifest.

Readers are strict: anything that deviates from the documented byte layout
raises FormatError with a location instead of being guessed around.
Writers are canonical, so write -> read -> write reproduces identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import MISSING, CameraIntrinsics, DepthMap, EgoMotionVector, SegmentationMap

PGM_MISSING_BYTE = 255  # reserved encoding of MISSING pixels

TRAJECTORY_HEADER = "step,tx,ty,tz,pitch,yaw,roll"
INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "width", "height")

BUNDLE_NAME = "bundle.json"
BUNDLE_FORMAT = "fseg3d-bundle"
BUNDLE_VERSION = 1

# Cityscapes label id -> train index of the standard 19-class evaluation
# set; ids absent from the table decode to MISSING. Shipped so externally
# decoded Cityscapes label PNGs can be remapped into this package's PGM
# encoding (PNG decoding itself stays out of scope).
CITYSCAPES_NUM_CLASSES = 19
CITYSCAPES_LABEL_TO_TRAIN_ID = {
    7: 0,    # road
    8: 1,    # sidewalk
    11: 2,   # building
    12: 3,   # wall
    13: 4,   # fence
    17: 5,   # pole
    19: 6,   # traffic light
    20: 7,   # traffic sign
    21: 8,   # vegetation
    22: 9,   # terrain
    23: 10,  # sky
    24: 11,  # person
    25: 12,  # rider
    26: 13,  # car
    27: 14,  # truck
    28: 15,  # bus
    31: 16,  # train
    32: 17,  # motorcycle
    33: 18,  # bicycle
}


class FormatError(ValueError):
    """A file does not follow its documented byte layout."""


def _fmt(x: float) -> str:
    # shortest decimal that round-trips the exact double
    return repr(float(x))


class _Cursor:
    """Byte-offset-tracking reader for the strict header parsers."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, message: str):
        raise FormatError(f"{self.path}: byte {self.pos}: {message}")

    def expect(self, token: bytes, what: str):
        end = self.pos + len(token)
        if self.data[self.pos:end] != token:
            self.fail(f"expected {what} ({token!r})")
        self.pos = end

    def read_uint(self, what: str) -> int:
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            self.fail(f"expected {what}")
        return int(self.data[start:self.pos])

    def read_to_newline(self, what: str) -> bytes:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            self.fail(f"unterminated {what}")
        token = self.data[self.pos:end]
        self.pos = end + 1
        return token


# ---------------------------------------------------------------------------
# PGM (P5) segmentation maps: one byte per pixel = class index, 255 = MISSING.

def write_segmentation(path, s: SegmentationMap) -> None:
    if s.num_classes > PGM_MISSING_BYTE:
        raise ValueError(f"PGM encoding supports at most {PGM_MISSING_BYTE} classes")
    body = np.where(s.missing, np.uint8(PGM_MISSING_BYTE),
                    s.classes.astype(np.uint8))
    with open(path, "wb") as f:
        f.write(f"P5\n{s.width} {s.height}\n255\n".encode("ascii"))
        f.write(body.tobytes())


def read_segmentation(path, num_classes: int) -> SegmentationMap:
    data = Path(path).read_bytes()
    cur = _Cursor(data, path)
    cur.expect(b"P5\n", "PGM magic")
    width = cur.read_uint("width")
    cur.expect(b" ", "single space between width and height")
    height = cur.read_uint("height")
    cur.expect(b"\n", "newline after dimensions")
    maxval = cur.read_uint("maxval")
    if maxval != 255:
        cur.pos -= len(str(maxval))
        cur.fail(f"maxval must be 255, got {maxval}")
    cur.expect(b"\n", "newline after maxval")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: degenerate image size {width}x{height}")
    body_start = cur.pos
    body = data[body_start:]
    if len(body) != width * height:
        raise FormatError(
            f"{path}: byte {body_start}: body holds {len(body)} bytes, "
            f"expected {width * height}")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    bad = (raw >= num_classes) & (raw != PGM_MISSING_BYTE)
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        raise FormatError(
            f"{path}: byte {body_start + flat}: class {int(raw.reshape(-1)[flat])} "
            f"outside [0, {num_classes})")
    classes = raw.astype(np.int16)
    classes[raw == PGM_MISSING_BYTE] = MISSING
    return SegmentationMap(classes, num_classes)


# ---------------------------------------------------------------------------
# PFM ("Pf") depth maps: float32 little-endian, rows bottom-to-top.

def write_depth(path, d: DepthMap) -> None:
    values = np.where(np.isnan(d.values), np.nan, d.values)  # canonical NaN
    body = np.flipud(values).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"Pf\n{d.width} {d.height}\n-1.0\n".encode("ascii"))
        f.write(body.tobytes())


def read_depth(path) -> DepthMap:
    data = Path(path).read_bytes()
    cur = _Cursor(data, path)
    cur.expect(b"Pf\n", "grayscale PFM magic")
    width = cur.read_uint("width")
    cur.expect(b" ", "single space between width and height")
    height = cur.read_uint("height")
    cur.expect(b"\n", "newline after dimensions")
    scale_pos = cur.pos
    scale_token = cur.read_to_newline("scale line")
    try:
        scale = float(scale_token)
    except ValueError:
        raise FormatError(f"{path}: byte {scale_pos}: unparsable scale {scale_token!r}")
    if not scale < 0.0:
        raise FormatError(
            f"{path}: byte {scale_pos}: scale must be negative (little-endian), got {scale}")
    body_start = cur.pos
    body = data[body_start:]
    if len(body) != width * height * 4:
        raise FormatError(
            f"{path}: byte {body_start}: body holds {len(body)} bytes, "
            f"expected {width * height * 4}")
    rows = np.frombuffer(body, dtype="<f4").reshape(height, width)
    return DepthMap(np.flipud(rows).astype(np.float64))


# ---------------------------------------------------------------------------
# Trajectory CSV: header then one row per step, steps consecutive from 0.

def write_trajectory(path, motions) -> None:
    lines = [TRAJECTORY_HEADER]
    for step, m in enumerate(motions):
        fields = ",".join(_fmt(c) for c in m.as_array())
        lines.append(f"{step},{fields}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_trajectory(path) -> list[EgoMotionVector]:
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != TRAJECTORY_HEADER:
        raise FormatError(
            f"{path}: line 1: header must be exactly '{TRAJECTORY_HEADER}'")
    motions = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 7:
            raise FormatError(f"{path}: line {lineno}: expected 7 columns, got {len(fields)}")
        try:
            step = int(fields[0])
            comps = [float(f) for f in fields[1:]]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric field")
        if step != lineno - 2:
            raise FormatError(
                f"{path}: line {lineno}: steps must count up from 0, got {step}")
        motions.append(EgoMotionVector.from_array(comps))
    return motions


# ---------------------------------------------------------------------------
# Intrinsics: fixed-order "key value" lines.

def write_intrinsics(path, k: CameraIntrinsics) -> None:
    lines = [
        f"fx {_fmt(k.fx)}",
        f"fy {_fmt(k.fy)}",
        f"cx {_fmt(k.cx)}",
        f"cy {_fmt(k.cy)}",
        f"width {k.width}",
        f"height {k.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_intrinsics(path) -> CameraIntrinsics:
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != len(INTRINSICS_KEYS):
        raise FormatError(
            f"{path}: expected {len(INTRINSICS_KEYS)} lines, got {len(lines)}")
    values = {}
    for lineno, (line, key) in enumerate(zip(lines, INTRINSICS_KEYS), start=1):
        parts = line.split(" ")
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f"{path}: line {lineno}: expected '{key} <value>'")
        try:
            values[key] = int(parts[1]) if key in ("width", "height") else float(parts[1])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric value {parts[1]!r}")
    return CameraIntrinsics(**values)


def remap_label_ids(raw, table: dict[int, int], num_classes: int) -> SegmentationMap:
    """Apply a label-id -> class-index table; unmapped ids become MISSING."""
    arr = np.asarray(raw)
    out = np.full(arr.shape, MISSING, dtype=np.int16)
    for label_id, train_id in table.items():
        out[arr == label_id] = train_id
    return SegmentationMap(out, num_classes)


# ---------------------------------------------------------------------------
# Frame bundle: a directory manifest tying frames to their files.

@dataclass(frozen=True)
class FrameBundle:
    """One frame's files plus the motion to the next frame (None for the last)."""

    frame_index: int
    segmentation_path: Path
    depth_path: Path
    motion_to_next: EgoMotionVector | None


@dataclass(frozen=True)
class BundleManifest:
    directory: Path
    intrinsics: CameraIntrinsics
    num_classes: int
    frames: tuple[FrameBundle, ...]
    motions: tuple[EgoMotionVector, ...]  # ground-truth trajectory rows

    def load_frame(self, index: int) -> tuple[DepthMap, SegmentationMap]:
        frame = self.frames[index]
        depth = read_depth(frame.depth_path)
        seg = read_segmentation(frame.segmentation_path, self.num_classes)
        if (depth.height, depth.width) != (seg.height, seg.width) \
                or (depth.height, depth.width) != (self.intrinsics.height, self.intrinsics.width):
            raise FormatError(
                f"{self.directory}: frame {index} dimensions disagree with the bundle")
        return depth, seg


def frame_file_names(index: int) -> tuple[str, str]:
    return f"frame_{index:03d}_seg.pgm", f"frame_{index:03d}_depth.pfm"


def write_bundle_manifest(directory, num_classes: int, num_frames: int,
                          width: int, height: int) -> None:
    frames = []
    for i in range(num_frames):
        seg_name, depth_name = frame_file_names(i)
        frames.append({"index": i, "segmentation": seg_name, "depth": depth_name})
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "num_classes": num_classes,
        "width": width,
        "height": height,
        "num_frames": num_frames,
        "intrinsics": "intrinsics.txt",
        "trajectory": "trajectory.csv",
        "frames": frames,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (Path(directory) / BUNDLE_NAME).write_text(text, encoding="ascii")


def read_bundle(directory) -> BundleManifest:
    directory = Path(directory)
    manifest_path = directory / BUNDLE_NAME
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path}: bundle manifest not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: unparsable manifest: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise FormatError(f"{manifest_path}: not a {BUNDLE_FORMAT} v{BUNDLE_VERSION} manifest")

    intrinsics = read_intrinsics(directory / manifest["intrinsics"])
    motions = tuple(read_trajectory(directory / manifest["trajectory"]))
    num_classes = manifest["num_classes"]
    if not isinstance(num_classes, int) or num_classes < 1:
        raise FormatError(f"{manifest_path}: bad num_classes {num_classes!r}")

    frames = []
    for entry in manifest["frames"]:
        idx = entry["index"]
        seg_path = directory / entry["segmentation"]
        depth_path = directory / entry["depth"]
        for p in (seg_path, depth_path):
            if not p.is_file():
                raise FormatError(f"{manifest_path}: referenced file missing: {p}")
        motion = motions[idx] if idx < len(motions) else None
        frames.append(FrameBundle(idx, seg_path, depth_path, motion))
    frames.sort(key=lambda f: f.frame_index)
    if [f.frame_index for f in frames] != list(range(len(frames))):
        raise FormatError(f"{manifest_path}: frame indices must count up from 0")
    return BundleManifest(directory, intrinsics, num_classes, tuple(frames), motions)
