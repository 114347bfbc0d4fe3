"""Synthetic brain-like phantoms with exact ground truth, and synthetic cohorts.

The phantom is a set of nested, axis-aligned ellipsoids centred in the grid:
skull > CSF > GM > WM. Each voxel takes the innermost shell containing it.
Truth labels are 0 outside the brain (background and skull), 1 CSF, 2 GM,
3 WM. Intensities are tissue means times an optional smooth bias field plus
Gaussian noise, all driven by one seed.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import SpecInvalid
from .volume import BinaryMask, LabelVolume, Volume3

__all__ = [
    "PhantomSpec",
    "Phantom",
    "generate_phantom",
    "BiasField",
    "bias_field",
    "apply_bias_field",
    "SubjectRecord",
    "generate_cohort",
    "write_cohort_csv",
    "read_cohort_csv",
    "AGE_RANGE",
    "BENCHMARK_DIMS",
]

TISSUES = ("background", "csf", "gm", "wm", "skull")
BENCHMARK_DIMS = (160, 160, 192)
AGE_RANGE = (55.0, 95.0)

# Semi-axes as fractions of the grid size, outermost first.
_DEFAULT_AXES = {
    "skull": (0.46, 0.42, 0.38),
    "csf": (0.40, 0.36, 0.32),
    "gm": (0.36, 0.32, 0.28),
    "wm": (0.26, 0.22, 0.19),
}


@dataclass
class PhantomSpec:
    """Geometry and intensity model of a phantom.

    ``semi_axes`` maps shell name to (ax, ay, az) in voxels; when omitted the
    axes scale with ``dims``. ``sulci`` carves that many thin CSF-filled
    slots of width ``sulcus_width`` through the GM shell (default none).
    ``cavities`` places that many CSF-filled balls of radius
    ``cavity_radius`` at seeded off-centre positions inside the WM; they
    break the near-symmetry of the ellipsoids, which registration needs.
    ``texture_amplitude`` multiplies head intensities by ``1 + a * g`` with
    ``g`` a unit-variance Gaussian random field smoothed at
    ``texture_scale`` voxels, a stand-in for tissue heterogeneity.
    """

    dims: Tuple[int, int, int] = (64, 64, 64)
    semi_axes: Optional[dict] = None
    means: dict = field(
        default_factory=lambda: {"background": 0.0, "csf": 60.0, "gm": 110.0, "wm": 160.0, "skull": 220.0}
    )
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.0
    sulci: int = 0
    sulcus_width: float = 2.0
    cavities: int = 0
    cavity_radius: float = 3.0
    texture_amplitude: float = 0.0
    texture_scale: float = 3.0
    seed: int = 0

    def resolved_axes(self) -> dict:
        if self.semi_axes is not None:
            return {k: tuple(float(a) for a in v) for k, v in self.semi_axes.items()}
        return {k: tuple(f * d for f, d in zip(frac, self.dims)) for k, frac in _DEFAULT_AXES.items()}

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SpecInvalid(f"bad dims {self.dims}")
        axes = self.resolved_axes()
        order = ("skull", "csf", "gm", "wm")
        if set(axes) != set(order):
            raise SpecInvalid(f"semi_axes must name exactly {order}")
        for outer, inner in zip(order, order[1:]):
            if not all(o > i > 0 for o, i in zip(axes[outer], axes[inner])):
                raise SpecInvalid(f"{outer} shell must strictly contain {inner}")
        if set(self.means) != set(TISSUES):
            raise SpecInvalid(f"means must name exactly {TISSUES}")
        vals = [self.means[t] for t in TISSUES]
        if len(set(vals)) != len(vals):
            raise SpecInvalid("tissue means must be distinct")
        if self.noise_sigma < 0:
            raise SpecInvalid("noise_sigma must be >= 0")
        if not 0 <= self.bias_amplitude < 0.5:
            raise SpecInvalid("bias_amplitude must lie in [0, 0.5)")
        if self.sulci < 0 or self.sulcus_width <= 0:
            raise SpecInvalid("sulci must be >= 0 and sulcus_width > 0")
        if self.cavities < 0 or self.cavity_radius <= 0:
            raise SpecInvalid("cavities must be >= 0 and cavity_radius > 0")
        if not 0 <= self.texture_amplitude < 0.5 or self.texture_scale <= 0:
            raise SpecInvalid("texture_amplitude must lie in [0, 0.5) and texture_scale be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Phantom:
    volume: Volume3
    truth: LabelVolume
    brain_mask: BinaryMask
    head_mask: BinaryMask
    spec: PhantomSpec

    def tissue_mask(self, *classes: int) -> BinaryMask:
        return self.brain_mask.with_data(np.isin(self.truth.labels, classes))


def _grid_coords(dims):
    centre = [(n - 1) / 2.0 for n in dims]
    return np.meshgrid(*[np.arange(n) - c for n, c in zip(dims, centre)], indexing="ij", sparse=True)


def _inside(coords, axes) -> np.ndarray:
    x, y, z = coords
    return (x / axes[0]) ** 2 + (y / axes[1]) ** 2 + (z / axes[2]) ** 2 <= 1.0


def shell_codes(spec: PhantomSpec) -> np.ndarray:
    """Tissue code per voxel: 0 background, 1 CSF, 2 GM, 3 WM, 4 skull."""
    coords = _grid_coords(spec.dims)
    axes = spec.resolved_axes()
    codes = np.zeros(spec.dims, dtype=np.uint8)
    codes[_inside(coords, axes["skull"])] = 4
    codes[_inside(coords, axes["csf"])] = 1
    gm = _inside(coords, axes["gm"])
    codes[gm] = 2
    wm = _inside(coords, axes["wm"])
    codes[wm] = 3
    if spec.sulci:
        x, y, _ = coords
        half = spec.sulcus_width / 2.0
        for i in range(spec.sulci):
            theta = np.pi * i / spec.sulci
            dist = np.abs(np.cos(theta) * y - np.sin(theta) * x)
            codes[gm & ~wm & (dist < half)] = 1
    if spec.cavities:
        x, y, z = coords
        for cx, cy, cz in cavity_centres(spec):
            ball = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= spec.cavity_radius**2
            codes[ball & wm] = 1
    return codes


def texture_field(spec: PhantomSpec) -> np.ndarray:
    """Smooth zero-mean, unit-variance random field, clipped to +/-3."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(4)[3])
    g = ndimage.gaussian_filter(rng.standard_normal(spec.dims), spec.texture_scale, mode="wrap")
    g = (g - g.mean()) / max(float(g.std()), 1e-12)
    return np.clip(g, -3.0, 3.0)


def cavity_centres(spec: PhantomSpec) -> np.ndarray:
    """Seeded cavity centres, relative to the grid centre, inside the WM shell."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[2])
    axes = np.array(spec.resolved_axes()["wm"])
    # keep each ball clear of the WM boundary where possible
    room = np.maximum(axes - spec.cavity_radius, 0.5 * axes)
    out = []
    while len(out) < spec.cavities:
        p = rng.uniform(-1.0, 1.0, size=3)
        if np.sum(p**2) <= 1.0:
            out.append(p * room)
    return np.array(out).reshape(-1, 3)


@dataclass(frozen=True)
class BiasField:
    """Quadratic polynomial in normalized coordinates, rescaled to [1-a, 1+a].

    ``coefficients[i, j, l]`` multiplies ``u**i * v**j * w**l`` where
    ``u, v, w`` run over [-1, 1] across the grid; terms with total degree > 2
    are zero.
    """

    coefficients: np.ndarray
    amplitude: float
    pmin: float
    pmax: float

    def polynomial(self, u, v, w):
        total = 0.0
        for i, j, l in itertools.product(range(3), repeat=3):
            c = self.coefficients[i, j, l]
            if c:
                total = total + c * u**i * v**j * w**l
        return total

    def evaluate(self, u, v, w):
        p = self.polynomial(u, v, w)
        if self.pmax == self.pmin:
            return np.ones_like(np.asarray(p, dtype=float))
        return 1.0 + self.amplitude * (2.0 * (p - self.pmin) / (self.pmax - self.pmin) - 1.0)


def _normalized_axes(dims):
    return np.meshgrid(
        *[np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in dims], indexing="ij", sparse=True
    )


def bias_field(dims, amplitude: float, seed: int) -> Tuple[BiasField, np.ndarray]:
    """Random smooth multiplicative field and its values on the grid."""
    if not 0 <= amplitude < 0.5:
        raise ValueError("amplitude must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    coef = np.zeros((3, 3, 3))
    for i, j, l in itertools.product(range(3), repeat=3):
        if 0 < i + j + l <= 2:
            coef[i, j, l] = rng.uniform(-1.0, 1.0)
    u, v, w = _normalized_axes(dims)
    proto = BiasField(coef, amplitude, 0.0, 0.0)
    p = np.broadcast_to(proto.polynomial(u, v, w), tuple(dims))
    field_ = BiasField(coef, amplitude, float(p.min()), float(p.max()))
    return field_, np.asarray(field_.evaluate(u, v, w) * np.ones(tuple(dims)))


def apply_bias_field(volume: Volume3, amplitude: float, seed: int) -> Volume3:
    if amplitude == 0:
        return volume
    _, f = bias_field(volume.shape, amplitude, seed)
    return volume.with_data(volume.data * f)


def generate_phantom(spec: PhantomSpec | None = None) -> Phantom:
    spec = spec or PhantomSpec()
    spec.validate()
    codes = shell_codes(spec)
    lut = np.array([spec.means[t] for t in TISSUES])
    data = lut[codes]
    ss = np.random.SeedSequence(spec.seed)
    bias_seed, noise_seed = ss.spawn(2)
    if spec.bias_amplitude > 0:
        _, f = bias_field(spec.dims, spec.bias_amplitude, int(bias_seed.generate_state(1)[0]))
        data = data * f
    if spec.texture_amplitude > 0:
        data = data * (1.0 + spec.texture_amplitude * texture_field(spec) * (codes > 0))
    if spec.noise_sigma > 0:
        data = data + np.random.default_rng(noise_seed).normal(0.0, spec.noise_sigma, size=data.shape)
    truth = np.where(codes == 4, 0, codes).astype(np.uint8)
    return Phantom(
        volume=Volume3(data),
        truth=LabelVolume(truth, 3),
        brain_mask=BinaryMask((codes >= 1) & (codes <= 3)),
        head_mask=BinaryMask(codes > 0),
        spec=spec,
    )


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age: float
    diagnosis: str  # "AD" or "CN"

    def __post_init__(self):
        if self.diagnosis not in ("AD", "CN"):
            raise ValueError(f"diagnosis must be AD or CN, got {self.diagnosis!r}")
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            raise ValueError(f"age {self.age} outside {AGE_RANGE}")


def age_bin(age: float, bin_count: int = 5, age_range=AGE_RANGE) -> int:
    lo, hi = age_range
    idx = int((age - lo) / (hi - lo) * bin_count)
    return min(max(idx, 0), bin_count - 1)


def generate_cohort(n: int, ad_fraction: float = 0.5, seed: int = 0, bin_count: int = 5) -> List[SubjectRecord]:
    """Synthetic subjects with ages spread evenly over ``bin_count`` age bins.

    Exactly ``floor(n * ad_fraction + 0.5)`` subjects are AD. Within each
    diagnosis, subjects are dealt round-robin into the equal-width bins over
    [55, 95] and given a uniform age inside their bin.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= ad_fraction <= 1:
        raise ValueError("ad_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_ad = int(np.floor(n * ad_fraction + 0.5))
    lo, hi = AGE_RANGE
    width = (hi - lo) / bin_count
    records = []
    for diagnosis, count in (("AD", n_ad), ("CN", n - n_ad)):
        start = int(rng.integers(bin_count))
        for i in range(count):
            b = (start + i) % bin_count
            age = round(lo + width * (b + rng.uniform(0.05, 0.95)), 1)
            records.append((diagnosis, age))
    order = rng.permutation(len(records))
    return [
        SubjectRecord(f"S{idx + 1:04d}", records[j][1], records[j][0]) for idx, j in enumerate(order)
    ]


def write_cohort_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "age", "diagnosis"])
        for r in records:
            w.writerow([r.subject_id, r.age, r.diagnosis])


def read_cohort_csv(path) -> List[SubjectRecord]:
    with open(path, newline="") as fh:
        return [
            SubjectRecord(row["subject_id"], float(row["age"]), row["diagnosis"])
            for row in csv.DictReader(fh)
        ]
