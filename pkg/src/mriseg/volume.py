"""Volumetric data model: intensity volumes, label volumes and binary masks.

All three carriers share the same geometry (shape, voxel spacing in mm and a
4x4 voxel-to-world affine). Arrays are indexed ``[x, y, z]``; on disk the
voxel order is x-fastest, which is the Fortran-order flattening of these
arrays. Instances are treated as immutable values: the wrapped arrays are
marked read-only on construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import GeometryMismatch

__all__ = [
    "Volume3",
    "LabelVolume",
    "BinaryMask",
    "voxel_count",
    "histogram",
    "check_same_geometry",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _geometry(shape, spacing, affine):
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError(f"expected a non-empty 3D grid, got shape {shape}")
    if spacing is None:
        spacing = (1.0, 1.0, 1.0)
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")
    if affine is None:
        affine = np.diag(spacing + (1.0,))
    affine = np.array(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise ValueError("affine must be 4x4")
    return spacing, _freeze(affine)


@dataclass(frozen=True, eq=False)
class Volume3:
    """Scalar 3D image with float64 intensities."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"Volume3 needs a 3D array, got ndim={data.ndim}")
        if not np.all(np.isfinite(data)):
            raise ValueError("Volume3 intensities must be finite")
        spacing, affine = _geometry(data.shape, self.spacing, self.affine)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    dims = shape

    def with_data(self, data: np.ndarray) -> "Volume3":
        """New volume on the same geometry."""
        return Volume3(data, self.spacing, self.affine)

    def __eq__(self, other):
        if not isinstance(other, Volume3):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.affine, other.affine)
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer tissue labels; 0 is background, classes are ``1..class_count``."""

    labels: np.ndarray
    class_count: int = 3
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = None

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 3:
            raise ValueError(f"LabelVolume needs a 3D array, got ndim={raw.ndim}")
        if raw.size and (raw.min() < 0 or raw.max() > self.class_count):
            raise ValueError(
                f"labels must lie in 0..{self.class_count}, got range "
                f"[{raw.min()}, {raw.max()}]"
            )
        if not 1 <= self.class_count <= 255:
            raise ValueError("class_count must be in 1..255")
        labels = np.array(raw, dtype=np.uint8)
        spacing, affine = _geometry(labels.shape, self.spacing, self.affine)
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.labels.shape

    dims = shape

    @property
    def data(self) -> np.ndarray:
        return self.labels

    def with_data(self, labels: np.ndarray) -> "LabelVolume":
        return LabelVolume(labels, self.class_count, self.spacing, self.affine)

    def to_mask(self) -> "BinaryMask":
        return BinaryMask(self.labels > 0, self.spacing, self.affine)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.spacing == other.spacing
            and np.array_equal(self.affine, other.affine)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = None

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 3:
            raise ValueError(f"BinaryMask needs a 3D array, got ndim={bits.ndim}")
        spacing, affine = _geometry(bits.shape, self.spacing, self.affine)
        object.__setattr__(self, "bits", _freeze(bits))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.bits.shape

    dims = shape

    @property
    def data(self) -> np.ndarray:
        return self.bits

    def with_data(self, bits: np.ndarray) -> "BinaryMask":
        return BinaryMask(bits, self.spacing, self.affine)

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __invert__(self) -> "BinaryMask":
        return self.with_data(~self.bits)

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        check_same_geometry(self, other)
        return self.with_data(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        check_same_geometry(self, other)
        return self.with_data(self.bits | other.bits)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits, other.bits)

    @classmethod
    def full(cls, like) -> "BinaryMask":
        return cls(np.ones(like.shape, dtype=bool), like.spacing, like.affine)

    @classmethod
    def empty(cls, like) -> "BinaryMask":
        return cls(np.zeros(like.shape, dtype=bool), like.spacing, like.affine)


def check_same_geometry(*items) -> None:
    """Raise :class:`GeometryMismatch` unless all items share shape and spacing."""
    first = items[0]
    for other in items[1:]:
        if other.shape != first.shape:
            raise GeometryMismatch(f"shape {other.shape} != {first.shape}")
        if not np.allclose(other.spacing, first.spacing):
            raise GeometryMismatch(f"spacing {other.spacing} != {first.spacing}")


def voxel_count(volume) -> int:
    nx, ny, nz = volume.shape
    return int(nx) * int(ny) * int(nz)


def histogram(volume, bin_count: int) -> np.ndarray:
    """Counts per bin over ``bin_count`` uniform bins spanning ``[min, max]``.

    A constant volume places all voxels in a single bin.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    values = np.asarray(volume.data, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        counts = np.zeros(bin_count, dtype=np.int64)
        counts[0] = values.size
        return counts
    counts, _ = np.histogram(values, bins=bin_count, range=(lo, hi))
    return counts.astype(np.int64)


def masked_values(volume: Volume3, mask: BinaryMask) -> np.ndarray:
    """Intensities under the mask, in x-fastest raster order."""
    check_same_geometry(volume, mask)
    return volume.data.ravel(order="F")[mask.bits.ravel(order="F")]


def scatter_labels(codes: np.ndarray, mask: BinaryMask) -> np.ndarray:
    """Inverse of :func:`masked_values` for label codes; 0 outside the mask."""
    out = np.zeros(mask.bits.size, dtype=np.uint8)
    out[mask.bits.ravel(order="F")] = codes
    return out.reshape(mask.shape, order="F")
