"""Hidden Markov random field refinement: ICM labelling inside an EM loop.

Per voxel ``j`` and class ``l`` the ICM score is

    beta * (# of the 6 face neighbours currently labelled l) + log N(x_j; mu_l, var_l)

and the voxel takes the highest-scoring class (lowest index on ties).
Sweeps visit voxels in x-fastest raster order and each update is visible to
the voxels visited after it. With the model fixed, every sweep is
non-decreasing in

    sum_j log N(x_j; mu_{l_j}, var_{l_j}) + beta * (# face-adjacent pairs with equal labels)

which is what :func:`icm_objective` evaluates. The M-step re-estimates
per-class mean and variance from the hard labels (or, with
``soft_mstep``, from the local posteriors).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from ..errors import ObjectiveDecreased
from ..volume import BinaryMask, LabelVolume, Volume3, check_same_geometry
from .common import canonical_order
from .config import SegConfig

log = logging.getLogger(__name__)

VAR_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class TissueModel:
    means: np.ndarray
    variances: np.ndarray

    @property
    def k(self) -> int:
        return self.means.size

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """``(n, k)`` matrix of Gaussian log-densities."""
        # same operation order as the ICM kernel, so beta=0 matches bit for bit
        lognorm = -0.5 * np.log(2.0 * np.pi * self.variances)
        inv2var = 1.0 / (2.0 * self.variances)
        d = x[:, None] - self.means[None, :]
        return lognorm[None, :] - d * d * inv2var[None, :]

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "variances": self.variances.tolist()}


@dataclass
class IcmState:
    labels: np.ndarray  # uint8 grid, 0 outside the mask
    model: TissueModel
    beta: float
    iteration: int = 0


@numba.njit(cache=True)
def _sweep(values, mask, labels, means, variances, beta):
    nx, ny, nz = values.shape
    k = means.shape[0]
    lognorm = np.empty(k)
    inv2var = np.empty(k)
    for l in range(k):
        lognorm[l] = -0.5 * np.log(2.0 * np.pi * variances[l])
        inv2var[l] = 1.0 / (2.0 * variances[l])
    counts = np.zeros(k + 1, dtype=np.int64)
    changed = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[x, y, z]:
                    continue
                for l in range(k + 1):
                    counts[l] = 0
                if x > 0:
                    counts[labels[x - 1, y, z]] += 1
                if x < nx - 1:
                    counts[labels[x + 1, y, z]] += 1
                if y > 0:
                    counts[labels[x, y - 1, z]] += 1
                if y < ny - 1:
                    counts[labels[x, y + 1, z]] += 1
                if z > 0:
                    counts[labels[x, y, z - 1]] += 1
                if z < nz - 1:
                    counts[labels[x, y, z + 1]] += 1
                v = values[x, y, z]
                best = 1
                best_score = -np.inf
                for l in range(k):
                    d = v - means[l]
                    s = beta * counts[l + 1] + lognorm[l] - d * d * inv2var[l]
                    if s > best_score:
                        best_score = s
                        best = l + 1
                if labels[x, y, z] != best:
                    labels[x, y, z] = best
                    changed += 1
    return changed


def _grid(volume: Volume3, mask: BinaryMask):
    return np.ascontiguousarray(volume.data), np.ascontiguousarray(mask.bits)


def icm_sweep(volume: Volume3, mask: BinaryMask, state: IcmState) -> IcmState:
    """One sequential raster-order ICM sweep; returns the updated state."""
    check_same_geometry(volume, mask)
    values, bits = _grid(volume, mask)
    labels = np.array(state.labels, dtype=np.uint8, order="C")
    _sweep(values, bits, labels, state.model.means.astype(np.float64),
           state.model.variances.astype(np.float64), float(state.beta))
    return replace(state, labels=labels, iteration=state.iteration + 1)


def _sweep_inplace(values, bits, labels, model: TissueModel, beta: float) -> int:
    return int(_sweep(values, bits, labels, model.means, model.variances, float(beta)))


def same_label_pairs(labels: np.ndarray) -> int:
    """Number of face-adjacent voxel pairs sharing a nonzero label."""
    total = 0
    for axis in range(3):
        a = np.moveaxis(labels, axis, 0)
        total += int(np.count_nonzero((a[1:] == a[:-1]) & (a[1:] > 0)))
    return total


def icm_objective(volume: Volume3, mask: BinaryMask, labels: np.ndarray, model: TissueModel, beta: float) -> float:
    """Global energy that sequential ICM never decreases (see module docstring)."""
    bits = mask.bits
    x = volume.data[bits]
    codes = labels[bits].astype(np.int64) - 1
    var = model.variances[codes]
    data_term = np.sum(-0.5 * np.log(2.0 * np.pi * var) - (x - model.means[codes]) ** 2 / (2.0 * var))
    return float(data_term + beta * same_label_pairs(labels))


def variance_floor(x: np.ndarray) -> float:
    span = float(x.max() - x.min()) if x.size else 0.0
    return VAR_FLOOR_FRACTION * max(span, 1.0) ** 2


def estimate_model(x: np.ndarray, codes: np.ndarray, k: int, previous: TissueModel | None = None,
                   floor: float | None = None) -> TissueModel:
    """Hard-assignment Gaussian parameters; empty classes keep ``previous`` values."""
    floor = variance_floor(x) if floor is None else floor
    means = np.zeros(k)
    variances = np.ones(k)
    for l in range(k):
        sel = x[codes == l]
        if sel.size == 0:
            if previous is None:
                raise ValueError(f"class {l + 1} is empty and has no previous estimate")
            log.warning("class %d empty in M-step; parameters frozen", l + 1)
            means[l], variances[l] = previous.means[l], previous.variances[l]
            continue
        means[l] = sel.mean()
        variances[l] = max(float(sel.var()), floor)
    return TissueModel(means, variances)


def _neighbour_counts(labels: np.ndarray, k: int) -> np.ndarray:
    """``(nx, ny, nz, k)`` counts of face neighbours carrying each class."""
    out = np.zeros(labels.shape + (k,), dtype=np.int64)
    for l in range(k):
        hit = (labels == l + 1).astype(np.int64)
        c = np.zeros(labels.shape, dtype=np.int64)
        c[1:] += hit[:-1]
        c[:-1] += hit[1:]
        c[:, 1:] += hit[:, :-1]
        c[:, :-1] += hit[:, 1:]
        c[:, :, 1:] += hit[:, :, :-1]
        c[:, :, :-1] += hit[:, :, 1:]
        out[..., l] = c
    return out


def _soft_model(x, bits, labels, model, beta, floor):
    scores = model.log_density(x) + beta * _neighbour_counts(labels, model.k)[bits]
    scores -= scores.max(axis=1, keepdims=True)
    post = np.exp(scores)
    post /= post.sum(axis=1, keepdims=True)
    w = post.sum(axis=0)
    means = np.where(w > 0, (post * x[:, None]).sum(axis=0) / np.where(w > 0, w, 1), model.means)
    var = np.where(w > 0, (post * (x[:, None] - means) ** 2).sum(axis=0) / np.where(w > 0, w, 1),
                   model.variances)
    return TissueModel(means, np.maximum(var, floor))


@dataclass
class HmrfResult:
    labels: LabelVolume
    model: TissueModel
    log: list = field(default_factory=list)


def hmrf_em(volume: Volume3, mask: BinaryMask, init_labels: LabelVolume,
            cfg: SegConfig | None = None) -> HmrfResult:
    """Refine ``init_labels`` with ``cfg.em_iters`` rounds of (ICM sweeps, M-step).

    The initial model is the per-class sample statistics of ``init_labels``.
    Each log entry records ``em_iter``, the number of voxels whose label
    changed during that E-step, and the ICM objective after it.
    """
    cfg = cfg or SegConfig()
    check_same_geometry(volume, mask, init_labels)
    k = init_labels.class_count
    values, bits = _grid(volume, mask)
    labels = np.array(init_labels.labels, dtype=np.uint8, order="C")
    labels[~bits] = 0
    x = values[bits]
    if np.any(labels[bits] == 0):
        raise ValueError("init_labels must label every masked voxel")
    floor = variance_floor(x)
    model = estimate_model(x, labels[bits].astype(np.int64) - 1, k, floor=floor)
    history = []

    for em_iter in range(1, cfg.em_iters + 1):
        before = labels.copy()
        objective = icm_objective(volume, mask, labels, model, cfg.beta) if cfg.check_objective else None
        for _ in range(cfg.icm_iters):
            _sweep_inplace(values, bits, labels, model, cfg.beta)
            if cfg.check_objective:
                now = icm_objective(volume, mask, labels, model, cfg.beta)
                if now < objective - 1e-9 * max(1.0, abs(objective)):
                    raise ObjectiveDecreased(f"ICM objective fell from {objective} to {now}")
                objective = now
        changed = int(np.count_nonzero(before != labels))
        e_model = model
        if cfg.soft_mstep:
            model = _soft_model(x, bits, labels, model, cfg.beta, floor)
        else:
            model = estimate_model(x, labels[bits].astype(np.int64) - 1, k, previous=model, floor=floor)
        history.append({
            "em_iter": em_iter,
            "changed_voxels": changed,
            "sse_or_loglik": icm_objective(volume, mask, labels, e_model, cfg.beta),
        })
        log.debug("em_iter=%d changed=%d", em_iter, changed)

    order = canonical_order(model.means)
    if not np.array_equal(order, np.arange(k)):
        lut = np.zeros(k + 1, dtype=np.uint8)
        lut[order + 1] = np.arange(1, k + 1)
        labels = lut[labels]
        model = TissueModel(model.means[order], model.variances[order])
    out = LabelVolume(labels, k, volume.spacing, volume.affine)
    return HmrfResult(out, model, history)


def ml_classify(volume: Volume3, mask: BinaryMask, model: TissueModel) -> np.ndarray:
    """Per-voxel maximum-likelihood labels (ties to the lower class)."""
    x = volume.data[mask.bits]
    labels = np.zeros(volume.shape, dtype=np.uint8)
    labels[mask.bits] = np.argmax(model.log_density(x), axis=1) + 1
    return labels
