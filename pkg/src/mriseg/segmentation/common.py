"""Helpers shared by the intensity-clustering engines.

Every engine works on the 1D vector of masked intensities, taken in
x-fastest raster order, and scatters its class codes back into a
:class:`LabelVolume`. Centroids are always reported sorted ascending so
that label 1/2/3 means CSF/GM/WM for every engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DegenerateInput
from ..volume import BinaryMask, LabelVolume, Volume3, masked_values, scatter_labels


@dataclass
class SegmentationResult:
    labels: LabelVolume
    centroids: np.ndarray
    sse: float
    n_iter: int = 0
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def prepare(volume: Volume3, mask: BinaryMask, k: int) -> np.ndarray:
    """Masked intensities, checked to hold at least ``k`` distinct values."""
    x = masked_values(volume, mask)
    if x.size < k or np.unique(x).size < k:
        raise DegenerateInput(
            f"need at least {k} distinct masked intensities, got {np.unique(x).size}"
        )
    return x


def assign_nearest(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest of the (ascending) centroids; ties go to the lower one."""
    mids = 0.5 * (centroids[1:] + centroids[:-1])
    return np.searchsorted(mids, x, side="left")


def sse(x: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of squared distances to the nearest centroid."""
    c = np.sort(np.asarray(centroids, dtype=np.float64))
    d = x - c[assign_nearest(x, c)]
    return float(np.dot(d, d))


def to_label_volume(codes: np.ndarray, volume: Volume3, mask: BinaryMask, k: int) -> LabelVolume:
    """0-based class codes over masked voxels -> label volume with classes 1..k."""
    arr = scatter_labels(codes.astype(np.uint8) + 1, mask)
    return LabelVolume(arr, k, volume.spacing, volume.affine)


def intensity_range(x: np.ndarray) -> float:
    span = float(x.max() - x.min())
    return span if span > 0 else 1.0


class SortedSSE:
    """Fast exact-in-exact-arithmetic SSE for many candidate centroid sets.

    The masked intensities are sorted once; nearest-centroid assignment then
    reduces to cut points at the centroid midpoints, and each segment's SSE
    follows from prefix sums. Used to rank metaheuristic candidates; final
    reported SSE values always come from :func:`sse`.
    """

    def __init__(self, x: np.ndarray):
        self.shift = float(np.mean(x))
        xs = np.sort(x) - self.shift
        self.xs = xs
        self.s1 = np.concatenate(([0.0], np.cumsum(xs)))
        self.s2 = np.concatenate(([0.0], np.cumsum(xs * xs)))
        self.n = xs.size

    def __call__(self, candidates: np.ndarray) -> np.ndarray:
        c = np.sort(np.atleast_2d(candidates), axis=1) - self.shift
        mids = 0.5 * (c[:, 1:] + c[:, :-1])
        # x <= mid goes to the lower class, matching assign_nearest
        cuts = np.searchsorted(self.xs, mids.ravel(), side="right").reshape(mids.shape)
        n_cand = c.shape[0]
        bounds = np.concatenate(
            [np.zeros((n_cand, 1), dtype=np.int64), cuts, np.full((n_cand, 1), self.n)], axis=1
        )
        lo, hi = bounds[:, :-1], bounds[:, 1:]
        cnt = hi - lo
        s1 = self.s1[hi] - self.s1[lo]
        s2 = self.s2[hi] - self.s2[lo]
        out = (s2 - 2.0 * c * s1 + cnt * c * c).sum(axis=1)
        return np.maximum(out, 0.0)


def canonical_order(centroids: np.ndarray) -> np.ndarray:
    """Permutation sorting centroids ascending (stable)."""
    return np.argsort(centroids, kind="stable")


def check_init(init: Optional[np.ndarray], k: int) -> np.ndarray:
    c = np.asarray(init, dtype=np.float64)
    if c.shape != (k,) or not np.all(np.isfinite(c)):
        raise ValueError(f"need {k} finite initial centroids")
    return c
