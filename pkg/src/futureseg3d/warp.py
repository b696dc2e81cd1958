"""Forward warping of labeled point clouds into future segmentation maps.

Points project through the pinhole model onto integer pixels (nearest
integer, ties to even via numpy rint). When several points land on one
pixel the smallest depth wins; exact depth ties resolve to the smallest
linearized source index (row * W + col), so the output is a pure function
of the point set regardless of processing order. Pixels that receive no
point stay MISSING.

Multi-step prediction keeps the original 3D cloud alive and transforms it
recursively; inpainted pixels exist only in the 2D outputs and are never
lifted back to 3D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inpaint import DEFAULT_MAX_PASSES, inpaint as inpaint_segmentation
from .geometry import (
    MISSING,
    CameraIntrinsics,
    DepthMap,
    EgoMotionVector,
    LabeledPointCloud,
    SegmentationMap,
    depth_to_pointcloud,
    egomotion_to_se3,
    transform_pointcloud,
)


@dataclass(frozen=True)
class WarpResult:
    """Projected segmentation with the winning depth per pixel."""

    segmentation: SegmentationMap
    depth_buffer: DepthMap
    missing_count: int


@dataclass(frozen=True)
class PredictionStep:
    index: int
    raw: WarpResult              # projection before any hole filling
    inpainted: SegmentationMap   # equals raw segmentation when inpainting is off


@dataclass(frozen=True)
class PredictionSequence:
    steps: tuple[PredictionStep, ...]

    def __post_init__(self):
        steps = tuple(self.steps)
        if [s.index for s in steps] != list(range(1, len(steps) + 1)):
            raise ValueError("step indices must increase strictly from 1")
        object.__setattr__(self, "steps", steps)


def project_to_segmentation(q: LabeledPointCloud, k: CameraIntrinsics) -> WarpResult:
    """Splat the cloud onto the image plane with a z-buffer."""
    h, w = k.height, k.width
    pts = q.points.reshape(-1, 3)
    labels = q.labels.reshape(-1)
    z = pts[:, 2]
    valid = q.valid.reshape(-1) & (z > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cols = np.rint(k.fx * pts[:, 0] / z + k.cx)
        rows = np.rint(k.fy * pts[:, 1] / z + k.cy)
    valid &= (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)

    src = np.nonzero(valid)[0]
    pix = rows[src].astype(np.int64) * w + cols[src].astype(np.int64)
    depth = z[src]
    # Sort by target pixel, then depth, then source index; the first entry
    # per pixel is the deterministic z-buffer winner.
    order = np.lexsort((src, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = order[first]

    seg = np.full(h * w, MISSING, dtype=np.int16)
    zbuf = np.full(h * w, np.nan)
    seg[pix[winners]] = labels[src[winners]]
    zbuf[pix[winners]] = depth[winners]
    missing = h * w - winners.size
    return WarpResult(SegmentationMap(seg.reshape(h, w), q.num_classes),
                      DepthMap(zbuf.reshape(h, w)),
                      int(missing))


def predict_step(q: LabeledPointCloud, motion: EgoMotionVector,
                 k: CameraIntrinsics) -> tuple[LabeledPointCloud, WarpResult]:
    """Move the cloud by one ego-motion step and project it.

    Returns the transformed cloud (kept in 3D for further recursion)
    together with its projection.
    """
    moved = transform_pointcloud(q, egomotion_to_se3(motion))
    return moved, project_to_segmentation(moved, k)


def predict_future(d: DepthMap, s: SegmentationMap, k: CameraIntrinsics,
                   motions: Sequence[EgoMotionVector], inpaint_enabled: bool = True,
                   max_passes: int = DEFAULT_MAX_PASSES) -> PredictionSequence:
    """Run the recursive multi-step prediction loop.

    Lifts (d, s) to 3D once, then for every motion transforms the
    persistent cloud, projects it, and optionally inpaints the projection.
    The warped 2D outputs are never lifted back.
    """
    if len(motions) == 0:
        raise ValueError("motions must be non-empty")
    cloud = depth_to_pointcloud(d, s, k)
    steps = []
    for j, motion in enumerate(motions, start=1):
        cloud, warp = predict_step(cloud, motion, k)
        if inpaint_enabled:
            filled = inpaint_segmentation(warp.segmentation, max_passes)
        else:
            filled = warp.segmentation
        steps.append(PredictionStep(j, warp, filled))
    return PredictionSequence(tuple(steps))
