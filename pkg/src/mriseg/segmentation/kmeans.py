"""Lloyd K-means on masked intensities with pre-defined initial centroids."""
from __future__ import annotations

import numpy as np

from ..volume import BinaryMask, Volume3, masked_values
from .common import (
    SegmentationResult,
    assign_nearest,
    canonical_order,
    intensity_range,
    prepare,
    sse,
    to_label_volume,
)
from .config import SegConfig

# Band positions of the initial centroids within the masked intensity range.
INIT_QUANTILES = (0.1, 0.5, 0.9)


def default_init_centroids(volume: Volume3, mask: BinaryMask, k: int = 3) -> np.ndarray:
    """Initial centroids placed at fixed fractions of the masked intensity range.

    For ``k == 3`` the fractions are 10%, 50% and 90%, so the CSF seed lands in
    the low band (25.5 on a 0..255 scale). Other ``k`` use evenly spaced
    fractions ``(i + 0.5) / k``.
    """
    x = masked_values(volume, mask)
    if x.size == 0:
        return np.zeros(k)
    lo, hi = float(x.min()), float(x.max())
    fracs = np.array(INIT_QUANTILES) if k == 3 else (np.arange(k) + 0.5) / k
    return lo + fracs * (hi - lo)


def lloyd(x: np.ndarray, init: np.ndarray, max_iter: int, tol_abs: float):
    """Plain 1D Lloyd iterations.

    Returns ascending centroids, 0-based codes, iteration count and the SSE
    recorded after each assignment step.
    """
    c = np.sort(np.asarray(init, dtype=np.float64))
    k = c.size
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        codes = assign_nearest(x, c)
        counts = np.bincount(codes, minlength=k)
        sums = np.bincount(codes, weights=x, minlength=k)
        history.append(sse(x, c))
        new = c.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled]
        for j in np.flatnonzero(~filled):
            # empty cluster: re-seed at the voxel farthest from its centroid
            dist = np.abs(x - new[assign_nearest(x, np.sort(new))])
            new[j] = x[int(np.argmax(dist))]
        new = np.sort(new)
        moved = float(np.max(np.abs(new - c)))
        c = new
        if moved < tol_abs:
            break
    codes = assign_nearest(x, c)
    return c, codes, n_iter, history


def kmeans_segment(volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> SegmentationResult:
    """K-means tissue segmentation.

    Labels are renumbered so class 1 has the lowest centroid (CSF) and class
    ``k`` the highest (WM).
    """
    cfg = cfg or SegConfig()
    x = prepare(volume, mask, cfg.k)
    if cfg.init_centroids is None:
        init = default_init_centroids(volume, mask, cfg.k)
    else:
        init = np.asarray(cfg.init_centroids, dtype=np.float64)
    tol_abs = cfg.tol * intensity_range(x)
    c, codes, n_iter, history = lloyd(x, init, cfg.max_iter, tol_abs)
    assert np.array_equal(canonical_order(c), np.arange(c.size))
    final = sse(x, c)
    history.append(final)
    return SegmentationResult(
        labels=to_label_volume(codes, volume, mask, cfg.k),
        centroids=c,
        sse=final,
        n_iter=n_iter,
        history=history,
    )
