"""Camera model, rigid transforms, and labeled point clouds.

Conventions, used consistently by every module in this package:

* Pixel coordinates are (i, j) with i = column (rightward) and j = row
  (downward); pixel centers sit at integer coordinates.
* Camera frame: x right, y down, z forward along the optical axis.
  Depth is the camera-frame z coordinate, not ray length.
* Euler angles build rotations as R = Rz(roll) @ Ry(yaw) @ Rx(pitch).
* An ego-motion transform for frames t -> t+1 maps points expressed in
  the camera frame at t into the camera frame at t+1: p' = R @ p + t.
  A camera driving forward therefore has negative tz (scene points get
  closer), and a retreating camera has positive tz.

Grids are indexed [row, column]; all geometry math runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Segmentation sentinel: pixel carries no class label.
MISSING = -1

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (math.isfinite(self.fx) and self.fx > 0.0
                and math.isfinite(self.fy) and self.fy > 0.0):
            raise ValueError(
                f"focal lengths must be finite and positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0.0 <= self.cx < self.width and 0.0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    def matrix(self) -> np.ndarray:
        """3x3 camera matrix K."""
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class EgoMotionVector:
    """6D camera motion: translation in depth units, rotation in radians."""

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        comps = (self.tx, self.ty, self.tz, self.pitch, self.yaw, self.roll)
        if not all(math.isfinite(c) for c in comps):
            raise ValueError(f"ego-motion components must be finite, got {comps}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.pitch, self.yaw, self.roll])

    @classmethod
    def from_array(cls, values) -> "EgoMotionVector":
        a = np.asarray(values, dtype=np.float64).reshape(-1)
        if a.size != 6:
            raise ValueError(f"ego-motion vector needs 6 components, got {a.size}")
        return cls(*(float(c) for c in a))


@dataclass(frozen=True)
class SE3Transform:
    """Rigid transform p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if not np.allclose(r @ r.T, np.eye(3), rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Transform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "SE3Transform":
        rt = self.rotation.T
        return SE3Transform(rt, -(rt @ self.translation))


@dataclass(frozen=True)
class DepthMap:
    """H x W grid of depths; entries that are nonpositive or NaN are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.values) & (self.values > 0.0)


@dataclass(frozen=True)
class SegmentationMap:
    """H x W grid of class indices in [0, num_classes); MISSING marks holes."""

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        c = np.asarray(self.classes)
        if c.ndim != 2:
            raise ValueError(f"segmentation map must be 2D, got shape {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            raise ValueError(f"segmentation classes must be integers, got dtype {c.dtype}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        c = c.astype(np.int16, copy=False)
        bad = (c != MISSING) & ((c < 0) | (c >= self.num_classes))
        if bad.any():
            j, i = np.argwhere(bad)[0]
            raise ValueError(
                f"class {int(c[j, i])} at pixel ({int(i)}, {int(j)}) outside "
                f"[0, {self.num_classes})")
        object.__setattr__(self, "classes", c)

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return self.classes == MISSING

    @property
    def missing_count(self) -> int:
        return int(np.count_nonzero(self.classes == MISSING))


@dataclass(frozen=True)
class LabeledPointCloud:
    """Structured point cloud: one 3D point + class label per source pixel.

    The grid layout of the source image is preserved; `valid` masks pixels
    that actually carry a point. Invalid entries may hold arbitrary
    coordinates (e.g. points that left the half-space z > 0).
    """

    points: np.ndarray   # (H, W, 3) float64, camera coordinates
    labels: np.ndarray   # (H, W) int16
    valid: np.ndarray    # (H, W) bool
    num_classes: int

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        l = np.asarray(self.labels).astype(np.int16, copy=False)
        v = np.asarray(self.valid, dtype=bool)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"points must have shape (H, W, 3), got {p.shape}")
        if l.shape != p.shape[:2] or v.shape != p.shape[:2]:
            raise ValueError("points, labels and valid grids must share H x W")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if v.any():
            pv = p[v]
            if not np.all(np.isfinite(pv)) or np.any(pv[:, 2] <= 0.0):
                raise ValueError("valid points must be finite with z > 0")
            lv = l[v]
            if np.any((lv < 0) | (lv >= self.num_classes)):
                raise ValueError("valid points must carry class labels in range")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "labels", l)
        object.__setattr__(self, "valid", v)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


def rotation_from_euler(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rotation matrix Rz(roll) @ Ry(yaw) @ Rx(pitch)."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cr, sr = math.cos(roll), math.sin(roll)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def egomotion_to_se3(v: EgoMotionVector) -> SE3Transform:
    """Build the rigid transform parameterized by a 6D ego-motion vector."""
    return SE3Transform(rotation_from_euler(v.pitch, v.yaw, v.roll),
                        np.array([v.tx, v.ty, v.tz]))


def se3_compose(a: SE3Transform, b: SE3Transform) -> SE3Transform:
    """Composition (a o b): apply b first, then a."""
    return SE3Transform(a.rotation @ b.rotation,
                        a.rotation @ b.translation + a.translation)


def depth_to_pointcloud(d: DepthMap, s: SegmentationMap,
                        k: CameraIntrinsics) -> LabeledPointCloud:
    """Lift a depth map into a structured labeled point cloud.

    Each pixel (i, j) with valid depth and a non-missing label becomes the
    point depth * K^-1 @ [i, j, 1]; every other pixel is invalid.
    """
    if (d.height, d.width) != (s.height, s.width):
        raise ValueError(
            f"depth {d.width}x{d.height} and segmentation {s.width}x{s.height} differ")
    if (d.height, d.width) != (k.height, k.width):
        raise ValueError(
            f"maps are {d.width}x{d.height} but intrinsics expect {k.width}x{k.height}")
    cols, rows = np.meshgrid(np.arange(d.width, dtype=np.float64),
                             np.arange(d.height, dtype=np.float64))
    valid = d.valid & ~s.missing
    with np.errstate(invalid="ignore"):
        x = d.values * (cols - k.cx) / k.fx
        y = d.values * (rows - k.cy) / k.fy
    points = np.stack([x, y, d.values], axis=-1)
    points = np.where(valid[..., None], points, 0.0)
    labels = np.where(valid, s.classes, np.int16(MISSING))
    return LabeledPointCloud(points, labels, valid, s.num_classes)


def transform_pointcloud(q: LabeledPointCloud, t: SE3Transform) -> LabeledPointCloud:
    """Rigidly move every point; points ending at z <= 0 become invalid."""
    moved = t.apply(q.points.reshape(-1, 3)).reshape(q.points.shape)
    valid = q.valid & (moved[..., 2] > 0.0)
    return LabeledPointCloud(moved, q.labels, valid, q.num_classes)
