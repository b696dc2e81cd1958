"""Matplotlib renderings written next to the delimited outputs.

All writers force the Agg backend and strip volatile PNG metadata so the
same inputs always produce the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap

from . import metrics
from .geometry import SegmentationMap

_PNG_META = {"Software": "futureseg3d"}

# fixed class palette (cycled past 20 classes); MISSING renders black
_CLASS_COLORS = matplotlib.colormaps["tab20"].colors


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_segmentation_figure(seg: SegmentationMap, path, title: str | None = None) -> None:
    colors = [_CLASS_COLORS[c % len(_CLASS_COLORS)] for c in range(seg.num_classes)]
    cmap = ListedColormap([(0.0, 0.0, 0.0)] + colors)
    fig, ax = plt.subplots(figsize=(6, 6 * seg.height / seg.width))
    ax.imshow(seg.classes + 1, cmap=cmap, vmin=0, vmax=seg.num_classes,
              interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    _save(fig, path)


def save_error_map_figure(errors: np.ndarray, path, title: str | None = None) -> None:
    """Errors in white, red where not considered, dark gray where correct."""
    cmap = ListedColormap([(0.15, 0.15, 0.15), (1.0, 1.0, 1.0), (0.85, 0.1, 0.1)])
    h, w = errors.shape
    fig, ax = plt.subplots(figsize=(6, 6 * h / w))
    ax.imshow(errors, cmap=cmap, vmin=metrics.CORRECT, vmax=metrics.NOT_CONSIDERED,
              interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    _save(fig, path)


def save_iou_curve_figure(transforms: list[int], series: dict[str, list[float]],
                          path) -> None:
    """Mean IOU against the number of motion transforms, one line per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted(series):
        ax.plot(transforms, series[method], marker="o", label=method)
    ax.set_xlabel("motion transforms")
    ax.set_ylabel("mean IOU")
    ax.set_xticks(transforms)
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
