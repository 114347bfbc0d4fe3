"""Multi-level Otsu thresholding by exhaustive search on a 256-bin histogram."""
from __future__ import annotations

import numpy as np

from ..volume import BinaryMask, Volume3
from .common import SegmentationResult, prepare, sse, to_label_volume

N_BINS = 256


def bin_index(x: np.ndarray, lo: float, hi: float, n_bins: int = N_BINS) -> np.ndarray:
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def between_class_scores(counts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """``score[t1, t2]`` = sum_k w_k * m_k**2 for the three bands cut after bins t1 < t2.

    Maximizing this is equivalent to maximizing the between-class variance,
    since the total mean is fixed. Invalid pairs (t1 >= t2) score -inf.
    """
    p = counts / counts.sum()
    w = np.cumsum(p)
    s = np.cumsum(p * centers)
    n = p.size
    t = np.arange(n - 1)
    w0, s0 = w[t][:, None], s[t][:, None]
    w01, s01 = w[t][None, :], s[t][None, :]
    w1, s1 = w01 - w0, s01 - s0
    w2, s2 = w[-1] - w01, s[-1] - s01

    def term(sk, wk):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(wk > 0, sk * sk / np.where(wk > 0, wk, 1.0), 0.0)

    score = term(s0, w0) + term(s1, w1) + term(s2, w2)
    valid = t[:, None] < t[None, :]
    return np.where(valid, score, -np.inf)


def otsu_multilevel(volume: Volume3, mask: BinaryMask, k: int = 3) -> SegmentationResult:
    """Two-threshold (``k=3``) or single-threshold (``k=2``) Otsu segmentation.

    ``extra["thresholds"]`` holds the upper intensity edge of each cut bin;
    ``extra["bins"]`` the cut bin indices.
    """
    if k not in (2, 3):
        raise ValueError("otsu_multilevel supports k = 2 or 3")
    x = prepare(volume, mask, k)
    lo, hi = float(x.min()), float(x.max())
    idx = bin_index(x, lo, hi)
    counts = np.bincount(idx, minlength=N_BINS).astype(np.float64)
    width = (hi - lo) / N_BINS
    centers = lo + (np.arange(N_BINS) + 0.5) * width

    if k == 3:
        scores = between_class_scores(counts, centers)
        t1, t2 = np.unravel_index(int(np.argmax(scores)), scores.shape)
        cuts = np.array([t1, t2])
    else:
        p = counts / counts.sum()
        w0 = np.cumsum(p)[:-1]
        s0 = np.cumsum(p * centers)[:-1]
        total = float((p * centers).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(
                (w0 > 0) & (w0 < 1), s0**2 / w0 + (total - s0) ** 2 / (1 - w0), -np.inf
            )
        cuts = np.array([int(np.argmax(score))])

    codes = np.searchsorted(cuts, idx, side="left")
    thresholds = lo + (cuts + 1) * width
    edges = np.concatenate(([lo], thresholds, [hi]))
    centroids = np.array(
        [x[codes == j].mean() if np.any(codes == j) else 0.5 * (edges[j] + edges[j + 1])
         for j in range(k)]
    )
    return SegmentationResult(
        labels=to_label_volume(codes, volume, mask, k),
        centroids=centroids,
        sse=sse(x, centroids),
        extra={"thresholds": thresholds, "bins": cuts},
    )
