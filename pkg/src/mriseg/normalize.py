"""Intensity scaling of a brain volume to a template from three tissue centroids."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateInput
from .segmentation.config import SegConfig
from .segmentation.kmeans import kmeans_segment
from .volume import BinaryMask, Volume3

__all__ = ["IntensityCentroids", "compute_centroids", "fit_gain", "fit_gain_offset", "apply_gain"]


@dataclass(frozen=True)
class IntensityCentroids:
    """Mean CSF, GM and WM intensities; strictly increasing, finite, >= 0."""

    csf: float
    gm: float
    wm: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)) or values.min() < 0:
            raise ValueError(f"centroids must be finite and >= 0, got {values.tolist()}")
        if not (self.csf < self.gm < self.wm):
            raise ValueError(f"centroids must satisfy csf < gm < wm, got {values.tolist()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.csf, self.gm, self.wm], dtype=float)

    @classmethod
    def from_sequence(cls, values) -> "IntensityCentroids":
        a, b, c = (float(v) for v in values)
        return cls(a, b, c)

    def to_dict(self) -> dict:
        return {"csf": self.csf, "gm": self.gm, "wm": self.wm}


def compute_centroids(volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> IntensityCentroids:
    """Three K-means centroids of the masked voxels, ascending.

    Raises
    ------
    DegenerateInput
        If the masked voxels hold fewer than three distinct intensities.
    """
    cfg = cfg or SegConfig()
    if cfg.k != 3:
        raise ValueError("normalization uses exactly three centroids")
    result = kmeans_segment(volume, mask, cfg)
    c = np.sort(result.centroids)
    try:
        return IntensityCentroids.from_sequence(c)
    except ValueError as exc:
        raise DegenerateInput(str(exc)) from exc


def fit_gain(image: IntensityCentroids, template: IntensityCentroids) -> float:
    """Least-squares gain through the origin: ``sum(t * i) / sum(i * i)``."""
    i = image.as_array()
    t = template.as_array()
    return float(np.dot(t, i) / np.dot(i, i))


def fit_gain_offset(image: IntensityCentroids, template: IntensityCentroids) -> Tuple[float, float]:
    """Least-squares ``(gain, offset)`` with ``gain * i + offset ~ t``; not used by default."""
    i = image.as_array()
    t = template.as_array()
    a = np.column_stack([i, np.ones(3)])
    (gain, offset), *_ = np.linalg.lstsq(a, t, rcond=None)
    return float(gain), float(offset)


def apply_gain(volume: Volume3, gain: float) -> Volume3:
    if not gain > 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    return volume.with_data(volume.data * gain)
