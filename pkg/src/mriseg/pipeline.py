"""End-to-end preprocessing and segmentation of one subject, and the benchmark run.

Stages, in order: brain extraction (mask closing + masking), intensity
normalization, affine registration to a template, cropping, segmentation.
Each finished stage writes its outputs immediately, so a failing stage
leaves everything before it on disk together with a provenance record.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, MrisegError, NumericalError
from .metrics import (
    OverlapReport,
    benchmark_engines,
    confusion,
    overlap_report,
    write_reports_csv,
    write_reports_json,
)
from .morphology import apply_mask, ball, close_mask
from .nifti import read_mask, read_nifti, write_nifti
from .normalize import IntensityCentroids, apply_gain, compute_centroids, fit_gain
from .phantom import BENCHMARK_DIMS, PhantomSpec, generate_phantom
from .registration import (
    TEMPLATE_CROP_DIMS,
    AffineTransform,
    RegistrationConfig,
    crop_to_template,
    register_affine,
    resample,
)
from .segmentation import SegConfig, engine_names, run_engine
from .split import DEFAULT_RATIOS
from .volume import BinaryMask, LabelVolume, Volume3

log = logging.getLogger(__name__)

__all__ = [
    "STAGES",
    "StageToggles",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
    "benchmark_spec",
    "run_benchmark",
    "sha256_file",
]

STAGES = ("extract", "normalize", "register", "crop", "segment")


@dataclass
class StageToggles:
    extract: bool = True
    normalize: bool = True
    register: bool = True
    crop: bool = True
    segment: bool = True

    def enabled(self) -> List[str]:
        return [s for s in STAGES if getattr(self, s)]


@dataclass
class PipelineConfig:
    """Everything a pipeline run depends on.

    ``template_centroids`` (CSF, GM, WM) may replace the template volume for
    normalization. ``register_on`` picks the image registered to the
    template: the skull-stripped ``"extracted"`` one (default) or the
    ``"raw"`` input; the transform is applied to the extracted image either
    way.
    """

    input: Optional[str] = None
    mask: Optional[str] = None
    template: Optional[str] = None
    template_mask: Optional[str] = None
    template_centroids: Optional[Sequence[float]] = None
    truth: Optional[str] = None
    out_dir: Optional[str] = None
    stages: StageToggles = field(default_factory=StageToggles)
    engine: str = "kmeans"
    seg: SegConfig = field(default_factory=SegConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    se_radius: float = 3.0
    crop_dims: Sequence[int] = TEMPLATE_CROP_DIMS
    crop_offset: Optional[Sequence[int]] = None
    register_on: str = "extracted"
    split_ratios: Sequence[float] = DEFAULT_RATIOS
    age_bin_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.stages, dict):
            self.stages = StageToggles(**self.stages)
        if isinstance(self.seg, dict):
            self.seg = SegConfig(**self.seg)
        if isinstance(self.registration, dict):
            self.registration = RegistrationConfig(**self.registration)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("crop_dims", "crop_offset", "split_ratios", "template_centroids"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self, have_template: Optional[bool] = None) -> None:
        """Check settings; ``have_template`` overrides the template-path test."""
        ratios = [float(r) for r in self.split_ratios]
        if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be 3 non-negative numbers summing to 1, got {ratios}")
        if self.age_bin_count < 1:
            raise ConfigError("age_bin_count must be >= 1")
        if self.se_radius < 0:
            raise ConfigError("se_radius must be >= 0")
        if self.register_on not in ("extracted", "raw"):
            raise ConfigError("register_on must be 'extracted' or 'raw'")
        if len(self.crop_dims) != 3 or min(self.crop_dims) < 1:
            raise ConfigError(f"crop_dims must be 3 positive integers, got {self.crop_dims}")
        if self.stages.segment and self.engine not in engine_names():
            raise ConfigError(f"unknown engine {self.engine!r}; choose from {engine_names()}")
        if self.template_centroids is not None:
            try:
                IntensityCentroids.from_sequence(self.template_centroids)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"template_centroids: {exc}") from exc
        self.seg.validate()
        self.registration.validate()
        template = self.template is not None if have_template is None else have_template
        if self.stages.normalize and not template and self.template_centroids is None:
            raise ConfigError("normalization needs a template volume or template_centroids")

    def check_paths(self) -> None:
        for name in ("input", "mask", "template", "template_mask", "truth"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"{name} path does not exist: {path}")


@dataclass
class PipelineResult:
    preprocessed: Volume3
    mask: BinaryMask
    labels: Optional[LabelVolume]
    report: Optional[OverlapReport]
    transform: Optional[AffineTransform]
    provenance: dict


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Recorder:
    """Collects per-stage timing and output hashes; writes the provenance record."""

    def __init__(self, cfg: PipelineConfig, out_dir: Optional[str]):
        self.out_dir = out_dir
        self.record = {
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "engine": cfg.engine,
            "stage_order": [],
            "stages": [],
            "outputs": {},
            "status": "running",
        }
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    def stage(self, name: str, status: str, seconds: float, **detail) -> None:
        if status == "ok":
            self.record["stage_order"].append(name)
        self.record["stages"].append({"name": name, "status": status, "seconds": seconds, **detail})

    def write_image(self, name: str, image, dtype=None) -> None:
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, name)
        write_nifti(image, path, dtype=dtype)
        self.record["outputs"][name] = sha256_file(path)

    def write_json(self, name: str, payload) -> None:
        if self.out_dir is None:
            return
        path = os.path.join(self.out_dir, name)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        self.record["outputs"][name] = sha256_file(path)

    def finish(self, status: str) -> None:
        self.record["status"] = status
        order = self.record["stage_order"]
        assert order == [s for s in STAGES if s in order], f"stages ran out of order: {order}"
        if self.out_dir is not None:
            with open(os.path.join(self.out_dir, "provenance.json"), "w") as fh:
                json.dump(self.record, fh, indent=2, sort_keys=True, default=str)


def _load(path, kind):
    if path is None:
        return None
    return read_mask(path) if kind == "mask" else read_nifti(path)


def as_labels(image, class_count: int = 3) -> LabelVolume:
    """Accept a label volume, or an intensity volume holding integer labels."""
    if isinstance(image, LabelVolume):
        return image
    data = image.data
    if not np.array_equal(data, np.rint(data)) or data.min() < 0 or data.max() > class_count:
        raise DataError(f"truth must hold integer labels in 0..{class_count}")
    return LabelVolume(data.astype(np.uint8), class_count, image.spacing, image.affine)


def _check_label_values(labels: LabelVolume) -> int:
    distinct = int(np.unique(labels.labels).size)
    if distinct > labels.class_count + 1:
        raise NumericalError(f"segmentation holds {distinct} distinct values, expected <= {labels.class_count + 1}")
    return distinct


def run_pipeline(cfg: PipelineConfig, volume: Optional[Volume3] = None, mask: Optional[BinaryMask] = None,
                 template: Optional[Volume3] = None, truth: Optional[LabelVolume] = None,
                 template_mask: Optional[BinaryMask] = None) -> PipelineResult:
    """Run the enabled stages on one subject.

    Arrays passed directly take precedence over the corresponding paths in
    ``cfg``. ``template_mask`` (default: nonzero template voxels) selects
    the template voxels whose centroids normalization targets. With
    ``cfg.out_dir`` set, every intermediate is written as NIfTI along with
    ``transform.json``, ``report.json`` (when ``truth`` is known) and
    ``provenance.json``. A stage error is re-raised with the stage name
    attached after the provenance record is saved.
    """
    have_template = template is not None or cfg.template is not None
    cfg.validate(have_template=have_template)
    cfg.check_paths()
    volume = volume if volume is not None else _load(cfg.input, "volume")
    if volume is None:
        raise ConfigError("no input volume given")
    if not isinstance(volume, Volume3):
        raise ConfigError("input must be an intensity volume")
    mask = mask if mask is not None else _load(cfg.mask, "mask")
    if mask is None:
        mask = BinaryMask.full(volume)
    template = template if template is not None else _load(cfg.template, "volume")
    template_mask = template_mask if template_mask is not None else _load(cfg.template_mask, "mask")
    truth = truth if truth is not None else _load(cfg.truth, "volume")
    if truth is not None:
        truth = as_labels(truth, cfg.seg.k)
    seg_cfg = dataclasses.replace(cfg.seg, seed=cfg.seed)

    rec = _Recorder(cfg, cfg.out_dir)
    current, raw = volume, volume
    transform = None
    labels = None
    report = None
    stage = None
    try:
        stage = "extract"
        if cfg.stages.extract:
            t0 = time.perf_counter()
            mask = close_mask(mask, ball(cfg.se_radius))
            current = apply_mask(current, mask)
            rec.stage(stage, "ok", time.perf_counter() - t0, mask_voxels=mask.count())
            rec.write_image("closed_mask.nii", mask)
            rec.write_image("extracted.nii", current, dtype=np.float32)
        else:
            rec.stage(stage, "disabled", 0.0)

        stage = "normalize"
        if cfg.stages.normalize:
            t0 = time.perf_counter()
            if cfg.template_centroids is not None:
                target = IntensityCentroids.from_sequence(cfg.template_centroids)
            else:
                tmask = template_mask if template_mask is not None else BinaryMask(template.data != 0)
                target = compute_centroids(template, tmask, seg_cfg)
            own = compute_centroids(current, mask, seg_cfg)
            gain = fit_gain(own, target)
            current = apply_gain(current, gain)
            raw = apply_gain(raw, gain)
            rec.stage(stage, "ok", time.perf_counter() - t0, gain=gain,
                      image_centroids=own.to_dict(), template_centroids=target.to_dict())
            rec.write_image("normalized.nii", current, dtype=np.float32)
        else:
            rec.stage(stage, "disabled", 0.0)

        stage = "register"
        if cfg.stages.register and template is None:
            log.warning("no registration template given; skipping registration")
            rec.stage(stage, "skipped", 0.0, reason="no template")
        elif cfg.stages.register:
            t0 = time.perf_counter()
            moving = current if cfg.register_on == "extracted" else raw
            transform, cost = register_affine(moving, template, cfg.registration)
            current = resample(current, transform, like=template)
            mask = resample(mask, transform, like=template)
            if truth is not None:
                truth = resample(truth, transform, like=template)
            rec.stage(stage, "ok", time.perf_counter() - t0, final_cost=cost)
            rec.write_json("transform.json", transform.to_json())
            rec.write_image("registered.nii", current, dtype=np.float32)
            rec.write_image("registered_mask.nii", mask)
        else:
            rec.stage(stage, "disabled", 0.0)

        stage = "crop"
        if cfg.stages.crop:
            t0 = time.perf_counter()
            current = crop_to_template(current, cfg.crop_dims, cfg.crop_offset)
            mask = crop_to_template(mask, cfg.crop_dims, cfg.crop_offset)
            if truth is not None:
                truth = crop_to_template(truth, cfg.crop_dims, cfg.crop_offset)
            rec.stage(stage, "ok", time.perf_counter() - t0, dims=list(current.shape))
            rec.write_image("cropped.nii", current, dtype=np.float32)
            rec.write_image("cropped_mask.nii", mask)
        else:
            rec.stage(stage, "disabled", 0.0)

        stage = "segment"
        if cfg.stages.segment:
            t0 = time.perf_counter()
            result = run_engine(cfg.engine, current, mask, seg_cfg)
            seconds = time.perf_counter() - t0
            labels = result.labels
            distinct = _check_label_values(labels)
            rec.stage(stage, "ok", seconds, centroids=np.asarray(result.centroids).tolist(),
                      sse=result.sse, n_iter=result.n_iter, distinct_label_values=distinct)
            rec.write_image("labels.nii", labels)
            if truth is not None:
                eval_mask = mask & BinaryMask(truth.labels > 0, mask.spacing, mask.affine)
                report = overlap_report(confusion(labels, truth, eval_mask), seconds, cfg.engine)
                rec.write_json("report.json", report.to_dict())
        else:
            rec.stage(stage, "disabled", 0.0)
        stage = None
    except MrisegError as exc:
        log.error("stage %s failed: %s", stage, exc)
        rec.stage(stage, "failed", 0.0, error=f"{type(exc).__name__}: {exc}")
        rec.finish("failed")
        exc.stage = stage
        raise
    rec.finish("ok")
    return PipelineResult(current, mask, labels, report, transform, rec.record)


def benchmark_spec(seed: int, dims=BENCHMARK_DIMS, noise_fraction: float = 0.15) -> PhantomSpec:
    """The benchmark phantom: default tissue means, noise as a fraction of the class gap."""
    spec = PhantomSpec(dims=tuple(dims), seed=seed)
    gap = spec.means["gm"] - spec.means["csf"]
    spec.noise_sigma = noise_fraction * gap
    return spec


def run_benchmark(cfg: PipelineConfig, engines: Sequence[str], out_dir: Optional[str] = None,
                  dims=BENCHMARK_DIMS, noise_fraction: float = 0.15, repetitions: int = 1) -> List[OverlapReport]:
    """Benchmark ``engines`` on the seeded phantom; writes benchmark.json and benchmark.csv."""
    for name in engines:
        if name not in engine_names():
            raise ConfigError(f"unknown engine {name!r}; choose from {engine_names()}")
    ph = generate_phantom(benchmark_spec(cfg.seed, dims, noise_fraction))
    seg_cfg = dataclasses.replace(cfg.seg, seed=cfg.seed)
    reports = benchmark_engines(ph.volume, ph.brain_mask, ph.truth, list(engines), seg_cfg, repetitions)
    out_dir = out_dir or cfg.out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_reports_json(reports, os.path.join(out_dir, "benchmark.json"))
        write_reports_csv(reports, os.path.join(out_dir, "benchmark.csv"))
    return reports
