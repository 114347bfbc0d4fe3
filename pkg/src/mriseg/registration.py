"""Affine transforms, resampling, affine registration and template cropping.

Transforms act on voxel index coordinates. An :class:`AffineTransform` maps
a point ``p`` of the moving image to

    F(c + t + R @ Sh @ S @ (p - c))

with ``c`` the rotation centre, ``S`` the axis scales, ``Sh`` the unit upper
triangular shear ``[[1, sxy, sxz], [0, 1, syz], [0, 0, 1]]``, ``R`` the
rotation ``Rz @ Ry @ Rx`` (x applied first, angles in degrees), ``t`` the
translation and ``F`` an optional flip of one axis about ``c``. Resampling
fills output voxel ``v`` with the input sampled at the inverse map of ``v``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numba
import numpy as np
from scipy import ndimage

from .errors import DegenerateInput, OutOfBounds, SingularTransform
from .volume import BinaryMask, LabelVolume, Volume3, voxel_count

log = logging.getLogger(__name__)

__all__ = [
    "AffineTransform",
    "RegistrationConfig",
    "compose",
    "inverse",
    "resample",
    "ncc",
    "register_affine",
    "crop_to_template",
    "TEMPLATE_CROP_DIMS",
]

TEMPLATE_CROP_DIMS = (160, 160, 192)


def rotation_matrix(angles_deg) -> np.ndarray:
    ax, ay, az = np.deg2rad(np.asarray(angles_deg, dtype=float))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def euler_from_matrix(r: np.ndarray) -> np.ndarray:
    """Angles (deg) with ``rotation_matrix(angles) == r`` for ``|ay| < 90``."""
    ay = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    ax = np.arctan2(r[2, 1], r[2, 2])
    az = np.arctan2(r[1, 0], r[0, 0])
    return np.rad2deg([ax, ay, az])


@dataclass(frozen=True)
class AffineTransform:
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    shear: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    flip: bool = False
    flip_axis: int = 2

    def __post_init__(self):
        for name in ("translation", "rotation", "scale", "shear", "center"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ValueError(f"{name} needs 3 components")
            object.__setattr__(self, name, value)
        if not all(s > 0 for s in self.scale):
            raise SingularTransform(f"scales must be positive, got {self.scale}")

    @classmethod
    def identity(cls, center=(0.0, 0.0, 0.0)) -> "AffineTransform":
        return cls(center=center)

    @classmethod
    def from_params(cls, params: Sequence[float], center, flip: bool = False, flip_axis: int = 2):
        p = np.asarray(params, dtype=float)
        return cls(tuple(p[0:3]), tuple(p[3:6]), tuple(p[6:9]), tuple(p[9:12]), tuple(center),
                   flip, flip_axis)

    @property
    def params(self) -> np.ndarray:
        return np.array(self.translation + self.rotation + self.scale + self.shear)

    def linear(self) -> np.ndarray:
        sxy, sxz, syz = self.shear
        sh = np.array([[1.0, sxy, sxz], [0.0, 1.0, syz], [0.0, 0.0, 1.0]])
        lin = rotation_matrix(self.rotation) @ sh @ np.diag(self.scale)
        if self.flip:
            d = np.ones(3)
            d[self.flip_axis] = -1.0
            lin = np.diag(d) @ lin
        return lin

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix acting on column vectors."""
        c = np.asarray(self.center)
        t = np.asarray(self.translation)
        lin = self.linear()
        if self.flip:
            d = np.ones(3)
            d[self.flip_axis] = -1.0
            offset = c + d * t - lin @ c
        else:
            offset = c + t - lin @ c
        m = np.eye(4)
        m[:3, :3] = lin
        m[:3, 3] = offset
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray, center=(0.0, 0.0, 0.0), flip_axis: int = 2) -> "AffineTransform":
        """Decompose a 4x4 affine back into parameters about ``center``."""
        m = np.asarray(m, dtype=float)
        lin = m[:3, :3]
        det = np.linalg.det(lin)
        if not np.isfinite(det) or abs(det) < 1e-12:
            raise SingularTransform("matrix is singular")
        flip = det < 0
        d = np.ones(3)
        if flip:
            d[flip_axis] = -1.0
        core = np.diag(d) @ lin
        q, u = np.linalg.qr(core)
        signs = np.sign(np.diag(u))
        q = q * signs[None, :]
        u = signs[:, None] * u
        scale = np.diag(u).copy()
        sxy = u[0, 1] / scale[1]
        sxz = u[0, 2] / scale[2]
        syz = u[1, 2] / scale[2]
        c = np.asarray(center, dtype=float)
        t = d * (m[:3, :3] @ c + m[:3, 3] - c)
        return cls(tuple(t), tuple(euler_from_matrix(q)), tuple(scale), (sxy, sxz, syz),
                   tuple(c), bool(flip), flip_axis)

    def to_json(self) -> dict:
        return {
            "translation": list(self.translation),
            "rotation_deg": list(self.rotation),
            "scale": list(self.scale),
            "shear": list(self.shear),
            "params": self.params.tolist(),
            "center": list(self.center),
            "flip": self.flip,
            "flip_axis": self.flip_axis,
            "matrix": self.matrix.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, record: dict) -> "AffineTransform":
        return cls.from_params(record["params"], record.get("center", (0, 0, 0)),
                               record.get("flip", False), record.get("flip_axis", 2))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def compose(a: AffineTransform, b: AffineTransform) -> AffineTransform:
    """Transform applying ``b`` first, then ``a``; expressed about ``a.center``."""
    return AffineTransform.from_matrix(a.matrix @ b.matrix, a.center, a.flip_axis)


def inverse(t: AffineTransform) -> AffineTransform:
    m = t.matrix
    if abs(np.linalg.det(m[:3, :3])) < 1e-12:
        raise SingularTransform("transform is not invertible")
    return AffineTransform.from_matrix(np.linalg.inv(m), t.center, t.flip_axis)


def _sample_array(data: np.ndarray, m: np.ndarray, out_shape, order: int) -> np.ndarray:
    lin = m[:3, :3]
    if not np.isfinite(lin).all() or abs(np.linalg.det(lin)) < 1e-12:
        raise SingularTransform("transform is not invertible")
    inv = np.linalg.inv(m)
    return ndimage.affine_transform(
        data, inv[:3, :3], offset=inv[:3, 3], output_shape=tuple(out_shape),
        order=order, mode="constant", cval=0.0, prefilter=False,
    )


def resample(volume, t: AffineTransform | np.ndarray, interp: Optional[str] = None,
             out_shape=None, like=None):
    """Resample ``volume`` through ``t`` onto an output grid.

    The output grid is ``like``'s geometry when given, otherwise
    ``out_shape`` (default: the input shape) with the input's affine.
    ``interp`` defaults to trilinear for intensities and nearest for label
    volumes and masks. Samples falling outside the input are 0.
    """
    m = t.matrix if isinstance(t, AffineTransform) else np.asarray(t, dtype=float)
    if interp is None:
        interp = "trilinear" if isinstance(volume, Volume3) else "nearest"
    if interp not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interp!r}")
    order = 1 if interp == "trilinear" else 0
    if like is not None:
        shape, spacing, affine = like.shape, like.spacing, like.affine
    else:
        shape = volume.shape if out_shape is None else tuple(out_shape)
        spacing, affine = volume.spacing, volume.affine
    if isinstance(volume, Volume3):
        out = _sample_array(volume.data, m, shape, order)
        return Volume3(out, spacing, affine)
    if isinstance(volume, LabelVolume):
        out = _sample_array(volume.labels.astype(np.float64), m, shape, 0)
        return LabelVolume(np.rint(out).astype(np.uint8), volume.class_count, spacing, affine)
    if isinstance(volume, BinaryMask):
        out = _sample_array(volume.bits.astype(np.float64), m, shape, 0)
        return BinaryMask(out > 0.5, spacing, affine)
    raise TypeError(f"cannot resample {type(volume).__name__}")


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


@dataclass
class RegistrationConfig:
    """Settings of the multi-resolution coordinate-descent registration.

    The search runs over 12 coordinates of the affine map ``x -> c + t + L (x - c)``:
    3 translations and the weights of ``L - I`` on 3 infinitesimal rotations
    and 6 symmetric strains, so a rotation is a single coordinate rather than
    a correlated pair of matrix entries. Steps are expressed as voxel
    displacements: a linear coordinate's step is ``step / lever`` with ``lever``
    the mean distance of foreground voxels from the centre, so every
    coordinate moves typical object points by about the same amount.
    ``step`` is the initial displacement at the coarsest level; each finer
    level starts at ``refine_start`` times the previous start. Steps shrink
    by ``shrink`` after a pass over all coordinates without improvement; a
    level ends once the step falls below ``min_step`` (scaled by the pooling
    factor) or after ``max_iterations`` passes. With ``translation_first``
    the coarsest level is preceded by a translation-only search, so the
    linear coordinates start from aligned objects instead of compensating
    for an offset. Each finer level first checks whether discarding the
    linear part found so far (keeping the shift) already scores better.
    """

    cost: str = "NCC"
    pyramid_levels: int = 3
    max_iterations: int = 100
    step: float = 4.0
    min_step: float = 0.01
    shrink: float = 0.5
    tol: float = 1e-12
    refine_start: float = 0.25
    translation_first: bool = True

    def validate(self) -> None:
        from .errors import ConfigError

        if self.cost.upper() not in ("NCC", "SSD"):
            raise ConfigError(f"cost must be NCC or SSD, got {self.cost}")
        if self.pyramid_levels < 1 or self.max_iterations < 1:
            raise ConfigError("pyramid_levels and max_iterations must be >= 1")
        if not 0 < self.shrink < 1 or not 0 < self.refine_start <= 1:
            raise ConfigError("shrink and refine_start must lie in (0, 1)")
        if self.tol <= 0 or self.min_step <= 0 or self.step <= 0:
            raise ConfigError("tolerances and steps must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _pool(data: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return data
    shape = [max(n // f, 1) for n in data.shape]
    trimmed = data[: shape[0] * f, : shape[1] * f, : shape[2] * f]
    return trimmed.reshape(shape[0], f, shape[1], f, shape[2], f).mean(axis=(1, 3, 5))


def _level_map(f: int) -> np.ndarray:
    """Pooled index -> full-resolution coordinate of the pooled voxel centre."""
    p = np.eye(4)
    p[:3, :3] *= f
    p[:3, 3] = (f - 1) / 2.0
    return p


def _generators() -> np.ndarray:
    """Orthogonal basis of 3x3 matrices.

    Order: 3 infinitesimal rotations (about x, y, z), isotropic scaling,
    2 traceless diagonal strains, 3 symmetric off-diagonal strains.
    """
    g = []
    for i, j in ((1, 2), (2, 0), (0, 1)):
        a = np.zeros((3, 3))
        a[j, i], a[i, j] = 1.0, -1.0
        g.append(a)
    for d in ((1.0, 1.0, 1.0), (1.0, -1.0, 0.0), (1.0, 1.0, -2.0)):
        g.append(np.diag(d))
    for i, j in ((0, 1), (0, 2), (1, 2)):
        a = np.zeros((3, 3))
        a[i, j] = a[j, i] = 1.0
        g.append(a)
    return np.array(g)


_GEN = _generators()
_GEN_NORM = np.einsum("kij,kij->k", _GEN, _GEN)


def _matrix_from_coords(q: np.ndarray, center: np.ndarray) -> np.ndarray:
    lin = np.eye(3) + np.tensordot(q[3:], _GEN, axes=1)
    m = np.eye(4)
    m[:3, :3] = lin
    m[:3, 3] = center + q[:3] - lin @ center
    return m


def _coords_from_matrix(m: np.ndarray, center: np.ndarray) -> np.ndarray:
    lin = m[:3, :3]
    t = m[:3, 3] + lin @ center - center
    # the generators are mutually orthogonal, so projection recovers the weights
    w = np.einsum("kij,ij->k", _GEN, lin - np.eye(3)) / _GEN_NORM
    return np.concatenate([t, w])


@numba.njit(cache=True)
def _warp_stats(moving, fixed, a, b):
    """Sums over the fixed grid of w, f, w*w, f*f, w*f with ``w`` the moving image
    trilinearly sampled at ``a @ v + b`` (0 outside), as in :func:`resample`."""
    nx, ny, nz = fixed.shape
    mx, my, mz = moving.shape
    s_w = 0.0
    s_f = 0.0
    s_ww = 0.0
    s_ff = 0.0
    s_wf = 0.0
    for i in range(nx):
        for j in range(ny):
            bx = a[0, 0] * i + a[0, 1] * j + b[0]
            by = a[1, 0] * i + a[1, 1] * j + b[1]
            bz = a[2, 0] * i + a[2, 1] * j + b[2]
            for k in range(nz):
                px = bx + a[0, 2] * k
                py = by + a[1, 2] * k
                pz = bz + a[2, 2] * k
                w = 0.0
                if 0.0 <= px <= mx - 1 and 0.0 <= py <= my - 1 and 0.0 <= pz <= mz - 1:
                    x0 = min(int(px), mx - 2)
                    y0 = min(int(py), my - 2)
                    z0 = min(int(pz), mz - 2)
                    fx = px - x0
                    fy = py - y0
                    fz = pz - z0
                    c00 = moving[x0, y0, z0] * (1 - fx) + moving[x0 + 1, y0, z0] * fx
                    c10 = moving[x0, y0 + 1, z0] * (1 - fx) + moving[x0 + 1, y0 + 1, z0] * fx
                    c01 = moving[x0, y0, z0 + 1] * (1 - fx) + moving[x0 + 1, y0, z0 + 1] * fx
                    c11 = moving[x0, y0 + 1, z0 + 1] * (1 - fx) + moving[x0 + 1, y0 + 1, z0 + 1] * fx
                    c0 = c00 * (1 - fy) + c10 * fy
                    c1 = c01 * (1 - fy) + c11 * fy
                    w = c0 * (1 - fz) + c1 * fz
                f = fixed[i, j, k]
                s_w += w
                s_f += f
                s_ww += w * w
                s_ff += f * f
                s_wf += w * f
    return s_w, s_f, s_ww, s_ff, s_wf


def _cost_from_stats(stats, n: int, cost: str) -> float:
    s_w, s_f, s_ww, s_ff, s_wf = stats
    if cost == "SSD":
        return max(s_ww - 2.0 * s_wf + s_ff, 0.0) / n
    var_w = s_ww - s_w * s_w / n
    var_f = s_ff - s_f * s_f / n
    if var_w <= 0 or var_f <= 0:
        return 1.0
    return 1.0 - (s_wf - s_w * s_f / n) / np.sqrt(var_w * var_f)


class _Objective:
    def __init__(self, moving: np.ndarray, fixed: np.ndarray, f: int, center, cost: str):
        self.moving = np.ascontiguousarray(_pool(moving, f), dtype=np.float64)
        self.fixed = np.ascontiguousarray(_pool(fixed, f), dtype=np.float64)
        self.p = _level_map(f)
        self.p_inv = np.linalg.inv(self.p)
        self.center = np.asarray(center, dtype=float)
        self.cost = cost
        self.fast = min(self.moving.shape) >= 2
        self.evals = 0

    def __call__(self, q: np.ndarray) -> float:
        self.evals += 1
        m = _matrix_from_coords(q, self.center)
        if np.linalg.det(m[:3, :3]) <= 1e-6:
            return np.inf
        level = self.p_inv @ m @ self.p
        if self.fast:
            inv = np.linalg.inv(level)
            stats = _warp_stats(self.moving, self.fixed, np.ascontiguousarray(inv[:3, :3]), inv[:3, 3].copy())
            return float(_cost_from_stats(stats, self.fixed.size, self.cost))
        warped = _sample_array(self.moving, level, self.fixed.shape, 1)
        if self.cost == "SSD":
            d = (warped - self.fixed).ravel()
            return float(np.dot(d, d) / d.size)
        return 1.0 - ncc(warped, self.fixed)


def _explore(objective, q, best, deltas, tol):
    """One coordinate pass: keep the first improving +/- probe per coordinate."""
    for i in range(q.size):
        if deltas[i] == 0:
            continue
        for direction in (1.0, -1.0):
            trial = q.copy()
            trial[i] += direction * deltas[i]
            value = objective(trial)
            if value < best - tol:
                q, best = trial, value
                break
    return q, best


def _coordinate_descent(objective, q, step, min_step, scales, cfg: RegistrationConfig):
    """Coordinate search with step halving and Hooke-Jeeves pattern moves.

    After a pass that improves the cost, the search also tries continuing
    along the net displacement of that pass, which lets it follow curved
    valleys that plain one-axis probing crawls along.
    """
    best = objective(q)
    passes = 0
    while passes < cfg.max_iterations and step >= min_step:
        passes += 1
        deltas = step * scales
        base = q
        q, best = _explore(objective, base, best, deltas, cfg.tol)
        if best_improved := not np.array_equal(q, base):
            while passes < cfg.max_iterations:
                passes += 1
                pattern = q + (q - base)
                value = objective(pattern)
                cand, cand_best = _explore(objective, pattern, value, deltas, cfg.tol)
                if cand_best < best - cfg.tol:
                    base, q, best = q, cand, cand_best
                else:
                    break
        if not best_improved:
            step *= cfg.shrink
    return q, best, passes


def _lever(volume: Volume3, center: np.ndarray) -> float:
    """Mean distance (voxels) of above-mean voxels from ``center``."""
    data = volume.data
    idx = np.argwhere(data > data.mean())
    if idx.size == 0:
        return max(data.shape) / 4.0
    r = np.linalg.norm(idx - center[None, :], axis=1).mean()
    return max(float(r), 1.0)


def register_affine(moving: Volume3, fixed: Volume3, cfg: RegistrationConfig | None = None,
                    init: AffineTransform | None = None):
    """Find the affine ``t`` with ``resample(moving, t, like=fixed) ~ fixed``.

    Multi-resolution coordinate descent, mean-pooling by ``2**(levels-1)``
    down to 1. Returns ``(transform, final_cost)`` with cost ``1 - NCC`` (or
    the mean squared difference for SSD), evaluated at full resolution. The
    starting transform (identity up to centring, or ``init``) is returned
    when nothing improves on it.
    """
    cfg = cfg or RegistrationConfig()
    cfg.validate()
    cost = cfg.cost.upper()
    for name, v in (("moving", moving), ("fixed", fixed)):
        if np.ptp(v.data) == 0:
            raise DegenerateInput(f"{name} volume is constant")

    center = (np.asarray(moving.shape, dtype=float) - 1) / 2.0
    if init is None:
        fixed_center = (np.asarray(fixed.shape, dtype=float) - 1) / 2.0
        init = AffineTransform(translation=tuple(fixed_center - center), center=tuple(center))
    q0 = _coords_from_matrix(init.matrix, center)
    lever = _lever(moving, center)
    scales = np.concatenate([np.ones(3), np.full(9, 1.0 / lever)])

    q = q0.copy()
    start = cfg.step
    for level in range(cfg.pyramid_levels):
        f = 2 ** (cfg.pyramid_levels - 1 - level)
        objective = _Objective(moving.data, fixed.data, f, center, cost)
        if level == 0 and cfg.translation_first:
            shift_only = np.concatenate([np.ones(3), np.zeros(9)])
            q, _, _ = _coordinate_descent(objective, q, start, cfg.min_step * f, shift_only, cfg)
        elif level > 0:
            # pooling can favour a spurious linear term; drop it if the finer level agrees
            plain = np.concatenate([q[:3], q0[3:]])
            if objective(plain) < objective(q):
                q = plain
        q, best, passes = _coordinate_descent(objective, q, start, cfg.min_step * f, scales, cfg)
        log.debug("level f=%d cost=%.6g passes=%d evals=%d", f, best, passes, objective.evals)
        start *= cfg.refine_start

    final = _Objective(moving.data, fixed.data, 1, center, cost)
    start_cost = final(q0)
    final_cost = final(q)
    if not final_cost <= start_cost:
        return init, start_cost
    m = _matrix_from_coords(q, center)
    return AffineTransform.from_matrix(m, tuple(center)), final_cost


def crop_to_template(volume, crop_dims=TEMPLATE_CROP_DIMS, crop_offset=None):
    """Extract a ``crop_dims`` box starting at ``crop_offset`` (default: centred).

    Works for intensity volumes, label volumes and masks; the affine is
    shifted so world coordinates of kept voxels are unchanged.
    """
    dims = tuple(int(d) for d in crop_dims)
    shape = volume.shape
    if crop_offset is None:
        crop_offset = tuple((s - d) // 2 for s, d in zip(shape, dims))
    off = tuple(int(o) for o in crop_offset)
    if any(o < 0 or o + d > s for o, d, s in zip(off, dims, shape)):
        raise OutOfBounds(f"crop box {dims} at {off} exceeds volume {shape}")
    sl = tuple(slice(o, o + d) for o, d in zip(off, dims))
    affine = np.array(volume.affine, dtype=float)
    affine[:3, 3] = affine[:3, :3] @ np.asarray(off, dtype=float) + affine[:3, 3]
    if isinstance(volume, Volume3):
        out = Volume3(volume.data[sl], volume.spacing, affine)
    elif isinstance(volume, LabelVolume):
        out = LabelVolume(volume.labels[sl], volume.class_count, volume.spacing, affine)
    else:
        out = BinaryMask(volume.bits[sl], volume.spacing, affine)
    assert voxel_count(out) == dims[0] * dims[1] * dims[2]
    return out
