"""Fuzzy C-means on masked intensities."""
from __future__ import annotations

import numpy as np

from ..volume import BinaryMask, Volume3
from .common import SegmentationResult, canonical_order, prepare, sse, to_label_volume
from .config import SegConfig
from .kmeans import default_init_centroids


def memberships(x: np.ndarray, centroids: np.ndarray, m: float) -> np.ndarray:
    """Standard FCM membership update, shape ``(n, c)``.

    A point lying exactly on a centroid gets membership 1 there and 0
    elsewhere (split evenly if it coincides with several centroids).
    """
    d = np.abs(x[:, None] - centroids[None, :])
    zero = d == 0
    p = 2.0 / (m - 1.0)
    with np.errstate(divide="ignore"):
        inv = np.where(zero, 0.0, d ** (-p))
    u = inv / inv.sum(axis=1, keepdims=True).clip(min=np.finfo(float).tiny)
    hit = zero.any(axis=1)
    if hit.any():
        u[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
    return u


def fcm_segment(volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> SegmentationResult:
    """Fuzzy C-means with fuzziness ``cfg.fcm_m``.

    Iterates centroid/membership updates until the largest membership change
    drops below ``cfg.tol``. Hard labels are the argmax membership.
    ``extra["memberships"]`` holds the ``(n_masked, k)`` matrix in raster order.
    """
    cfg = cfg or SegConfig()
    k, m = cfg.k, cfg.fcm_m
    x = prepare(volume, mask, k)
    if cfg.init_centroids is None:
        c = default_init_centroids(volume, mask, k)
    else:
        c = np.asarray(cfg.init_centroids, dtype=np.float64)
    u = memberships(x, c, m)
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        um = u**m
        c = (um * x[:, None]).sum(axis=0) / um.sum(axis=0)
        u_new = memberships(x, c, m)
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        if change < cfg.tol:
            break

    order = canonical_order(c)
    c = c[order]
    u = u[:, order]
    codes = np.argmax(u, axis=1)
    return SegmentationResult(
        labels=to_label_volume(codes, volume, mask, k),
        centroids=c,
        sse=sse(x, c),
        n_iter=n_iter,
        extra={"memberships": u},
    )
