"""Binary 3D morphology for brain extraction.

Closing (dilation then erosion with a discrete ball) grows a tissue mask so
that it includes the CSF sitting in gaps narrower than the ball; multiplying
the image by the closed mask strips non-brain voxels.

Boundary policy: neighbours outside the grid are ignored by dilation and
count as unset for erosion, so the outermost shell of a full mask erodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .volume import BinaryMask, Volume3, check_same_geometry

__all__ = ["StructuringElement", "ball", "dilate", "erode", "close_mask", "apply_mask"]

DEFAULT_RADIUS = 3


@dataclass(frozen=True)
class StructuringElement:
    """Discrete ball: all integer offsets with Euclidean norm <= ``radius``."""

    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @cached_property
    def offsets(self) -> np.ndarray:
        r = int(np.floor(self.radius))
        g = np.arange(-r, r + 1)
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        keep = (pts**2).sum(axis=1) <= self.radius**2
        return pts[keep]

    @cached_property
    def footprint(self) -> np.ndarray:
        r = int(np.floor(self.radius))
        fp = np.zeros((2 * r + 1,) * 3, dtype=bool)
        fp[tuple((self.offsets + r).T)] = True
        return fp


def ball(radius: float = DEFAULT_RADIUS) -> StructuringElement:
    return StructuringElement(radius)


def dilate(mask: BinaryMask, se: StructuringElement) -> BinaryMask:
    out = ndimage.binary_dilation(mask.bits, structure=se.footprint, border_value=0)
    return mask.with_data(out)


def erode(mask: BinaryMask, se: StructuringElement) -> BinaryMask:
    out = ndimage.binary_erosion(mask.bits, structure=se.footprint, border_value=0)
    return mask.with_data(out)


def close_mask(mask: BinaryMask, se: StructuringElement | None = None) -> BinaryMask:
    """Morphological closing, ``erode(dilate(mask))``."""
    se = se or StructuringElement()
    return erode(dilate(mask, se), se)


def apply_mask(image: Volume3, mask: BinaryMask) -> Volume3:
    """Zero every voxel outside ``mask``."""
    check_same_geometry(image, mask)
    return image.with_data(image.data * mask.bits)
