"""Random 3D augmentation: parameter sampling, application and audit records.

Parameters compose as scale, then shear, then rotation, then translation,
then the optional axial flip (negating the z axis about the volume centre).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .registration import AffineTransform, resample

__all__ = [
    "TRANSLATION_RANGE",
    "ROTATION_RANGE",
    "SHEAR_RANGE",
    "SCALE_RANGE",
    "AXIAL_AXIS",
    "AugmentationParams",
    "augmentation_stream",
    "sample_augmentation",
    "augmentation_transform",
    "apply_augmentation",
]

TRANSLATION_RANGE = (-3.0, 3.0)  # voxels
ROTATION_RANGE = (-5.0, 5.0)  # degrees
SHEAR_RANGE = (-5.0, 5.0)  # degrees, applied as tan(angle)
SCALE_RANGE = (0.95, 1.05)
AXIAL_AXIS = 2

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def _within(values, bounds) -> bool:
    lo, hi = bounds
    return bool(np.all((np.asarray(values) >= lo) & (np.asarray(values) <= hi)))


@dataclass(frozen=True)
class AugmentationParams:
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    shear: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    flip_axial: bool = False

    def __post_init__(self):
        for name in ("translation", "rotation", "shear"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "flip_axial", bool(self.flip_axial))

    def in_bounds(self) -> bool:
        return (
            _within(self.translation, TRANSLATION_RANGE)
            and _within(self.rotation, ROTATION_RANGE)
            and _within(self.shear, SHEAR_RANGE)
            and _within(self.scale, SCALE_RANGE)
        )

    def shear_slopes(self) -> Tuple[float, float, float]:
        return tuple(float(v) for v in np.tan(np.deg2rad(self.shear)))

    def to_dict(self) -> dict:
        return {
            "translation": list(self.translation),
            "rotation_deg": list(self.rotation),
            "shear_deg": list(self.shear),
            "scale": self.scale,
            "flip_axial": self.flip_axial,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationParams":
        return cls(d["translation"], d["rotation_deg"], d["shear_deg"], d["scale"], d["flip_axial"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def augmentation_stream(seed: int, subject: int = 0) -> np.random.Generator:
    """Independent generator for one subject, stable under any scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(subject,)))


def sample_augmentation(stream: SeedLike) -> AugmentationParams:
    """Uniform draws inside every range; flip with probability 0.5."""
    rng = stream if isinstance(stream, np.random.Generator) else np.random.default_rng(stream)
    translation = rng.uniform(*TRANSLATION_RANGE, size=3)
    rotation = rng.uniform(*ROTATION_RANGE, size=3)
    shear = rng.uniform(*SHEAR_RANGE, size=3)
    scale = rng.uniform(*SCALE_RANGE)
    flip = rng.random() < 0.5
    return AugmentationParams(tuple(translation), tuple(rotation), tuple(shear), scale, flip)


def augmentation_transform(params: AugmentationParams, shape) -> AffineTransform:
    center = tuple((np.asarray(shape, dtype=float) - 1) / 2.0)
    s = params.scale
    return AffineTransform(
        translation=params.translation,
        rotation=params.rotation,
        scale=(s, s, s),
        shear=params.shear_slopes(),
        center=center,
        flip=params.flip_axial,
        flip_axis=AXIAL_AXIS,
    )


def apply_augmentation(volume, params: AugmentationParams):
    """Resample ``volume`` through the augmentation transform.

    Intensities use trilinear interpolation, label volumes and masks nearest.
    """
    t = augmentation_transform(params, volume.shape)
    det = abs(np.linalg.det(t.linear()))
    assert det > 0, "augmentation ranges cannot produce a singular transform"
    return resample(volume, t)
