"""Deterministic post-treatment tumor segmentation.

Post-treatment tumors read as hyperdense (lipiodol/calcification) or
hypodense (necrosis, hypoperfused viable tissue) against liver
parenchyma, so a threshold rule inside the liver region, a small
morphological closing, and a component-size filter recover the treated
tumor extent from simulated volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyLiverError, InvalidArgumentError
from .voxel import LIVER, TUMOR, Mask3, Volume3, l1_ball


@dataclass(frozen=True)
class SegmenterConfig:
    hyperdense_threshold: float = 0.6
    hypodense_threshold: float = -0.2
    min_component: int = 300
    closing_radius: int = 1

    def __post_init__(self):
        if self.hypodense_threshold >= self.hyperdense_threshold:
            raise InvalidArgumentError("hypodense threshold must be below hyperdense")
        if self.min_component < 0 or self.closing_radius < 0:
            raise InvalidArgumentError("min_component and closing_radius must be >= 0")

    def to_dict(self) -> dict:
        return {
            "hyperdense_threshold": self.hyperdense_threshold,
            "hypodense_threshold": self.hypodense_threshold,
            "min_component": self.min_component,
            "closing_radius": self.closing_radius,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "SegmenterConfig":
        return cls(**{k: cfg[k] for k in cls.__dataclass_fields__ if k in cfg})


def segment_post(volume: Volume3, liver: Mask3, cfg: SegmenterConfig | None = None) -> Mask3:
    """Segment treated tumor inside the liver region of a post volume.

    Tumor = liver voxels at or beyond either intensity threshold,
    morphologically closed, then component-filtered. The output keeps the
    liver label and never marks tumor outside the given liver region.
    """
    cfg = cfg or SegmenterConfig()
    if volume.dims != liver.dims:
        raise InvalidArgumentError("volume and liver mask dims differ")
    region = liver.data >= LIVER
    if not region.any():
        raise EmptyLiverError("liver mask is empty")

    data = volume.data
    tumorish = region & (
        (data >= cfg.hyperdense_threshold) | (data <= cfg.hypodense_threshold)
    )
    if cfg.closing_radius > 0 and tumorish.any():
        # Closing confined to a padded box around the detections.
        pad = cfg.closing_radius + 1
        lo, hi = [], []
        for ax, coords in enumerate(np.nonzero(tumorish)):
            lo.append(max(0, int(coords.min()) - pad))
            hi.append(min(volume.dims[ax], int(coords.max()) + pad + 1))
        box = tuple(slice(lo[i], hi[i]) for i in range(3))
        closed = ndimage.binary_closing(
            tumorish[box], structure=l1_ball(1), iterations=cfg.closing_radius
        )
        tumorish = np.zeros_like(tumorish)
        tumorish[box] = closed
        tumorish &= region

    out = np.where(region, LIVER, 0).astype(np.uint8)
    if tumorish.any() and cfg.min_component > 0:
        labeled, n = ndimage.label(tumorish, structure=np.ones((3, 3, 3), dtype=bool))
        sizes = ndimage.sum_labels(tumorish, labeled, index=np.arange(1, n + 1))
        keep = np.flatnonzero(sizes >= cfg.min_component) + 1
        tumorish = np.isin(labeled, keep)
    out[tumorish] = TUMOR
    return Mask3(out, volume.spacing)


def dice(a: Mask3, b: Mask3, label: int = TUMOR) -> float:
    """Dice overlap of one label between two masks; 1.0 when both empty."""
    if a.dims != b.dims:
        raise InvalidArgumentError("mask dims differ")
    ind_a = a.data == label
    ind_b = b.data == label
    total = int(ind_a.sum()) + int(ind_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((ind_a & ind_b).sum()) / total
