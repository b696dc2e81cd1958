"""Hole filling for warped segmentations.

Missing pixels take the most frequent class among their 3x3 neighborhood
(window clipped at image borders, center included). One pass fills every
hole that has at least one labeled neighbor; passes repeat Jacobi-style
until nothing changes, so arbitrarily large holes shrink by one ring per
pass and any map with a labeled pixel converges completely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MISSING, SegmentationMap

DEFAULT_MAX_PASSES = 64


@dataclass(frozen=True)
class NeighborCount:
    """Per-pixel, per-class count of labeled pixels in the 3x3 window."""

    counts: np.ndarray  # (H, W, K) uint8, each entry in [0, 9]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise ValueError(f"counts must have shape (H, W, K), got {c.shape}")
        object.__setattr__(self, "counts", c.astype(np.uint8, copy=False))


def neighbor_count(s: SegmentationMap) -> NeighborCount:
    """Count each class inside every pixel's clipped 3x3 window.

    Missing pixels contribute nothing; the zero-padded border behaves
    exactly like window clipping.
    """
    h, w, k = s.height, s.width, s.num_classes
    onehot = np.zeros((h + 2, w + 2, k), dtype=np.uint8)
    rows, cols = np.nonzero(~s.missing)
    onehot[rows + 1, cols + 1, s.classes[rows, cols]] = 1
    counts = np.zeros((h, w, k), dtype=np.uint8)
    for dr in range(3):
        for dc in range(3):
            counts += onehot[dr:dr + h, dc:dc + w]
    return NeighborCount(counts)


def compute_filler(n: NeighborCount) -> SegmentationMap:
    """Hardmax over classes per pixel; ties go to the lowest class index.

    Pixels whose counts are all zero have nothing to vote for them and
    stay MISSING.
    """
    counts = n.counts
    best = counts.argmax(axis=2).astype(np.int16)
    any_vote = counts.sum(axis=2, dtype=np.int32) > 0
    classes = np.where(any_vote, best, np.int16(MISSING))
    return SegmentationMap(classes, counts.shape[2])


def inpaint(s: SegmentationMap, max_passes: int = DEFAULT_MAX_PASSES) -> SegmentationMap:
    """Fill MISSING pixels from their neighborhoods; labeled pixels never change.

    Each pass reads only the previous pass's map, so the result does not
    depend on pixel order. Stops when a pass changes nothing or after
    max_passes.
    """
    if max_passes < 1:
        raise ValueError(f"max_passes must be >= 1, got {max_passes}")
    current = s
    for _ in range(max_passes):
        holes = current.missing
        if not holes.any():
            break
        filler = compute_filler(neighbor_count(current))
        classes = np.where(holes, filler.classes, current.classes)
        if np.array_equal(classes, current.classes):
            break
        current = SegmentationMap(classes, s.num_classes)
    return current
