"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .augment import apply_augmentation, augmentation_stream, sample_augmentation
from .errors import ConfigError, DataError, NumericalError
from .metrics import confusion, overlap_report
from .nifti import read_mask, read_nifti, write_nifti
from .phantom import PhantomSpec, generate_cohort, generate_phantom, read_cohort_csv, write_cohort_csv
from .pipeline import PipelineConfig, as_labels, run_benchmark, run_pipeline
from .segmentation import engine_names
from .split import downsample, split_dataset, write_split_csv

log = logging.getLogger("mriseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _floats(n: int):
    def parse(text: str):
        parts = [float(p) for p in text.split(",")]
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return parts
    return parse


def _ints3(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected 3 comma-separated integers")
    return parts


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    overrides = {
        "input": getattr(args, "input", None),
        "mask": getattr(args, "mask", None),
        "template": getattr(args, "template", None),
        "template_mask": getattr(args, "template_mask", None),
        "template_centroids": getattr(args, "template_centroids", None),
        "truth": getattr(args, "truth", None),
        "out_dir": getattr(args, "out", None),
        "engine": getattr(args, "engine", None),
        "seed": getattr(args, "seed", None),
        "crop_dims": getattr(args, "crop_dims", None),
        "se_radius": getattr(args, "se_radius", None),
        "register_on": getattr(args, "register_on", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    for stage in ("extract", "normalize", "register", "crop"):
        if getattr(args, f"no_{stage}", False):
            setattr(cfg.stages, stage, False)
    return cfg


def _write_json(path: str, payload) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def cmd_phantom(args) -> int:
    spec = PhantomSpec(
        dims=tuple(args.dims),
        noise_sigma=args.noise_sigma,
        bias_amplitude=args.bias,
        sulci=args.sulci,
        cavities=args.cavities,
        texture_amplitude=args.texture,
        seed=args.seed,
    )
    ph = generate_phantom(spec)
    os.makedirs(args.out, exist_ok=True)
    write_nifti(ph.volume, os.path.join(args.out, "phantom.nii"))
    write_nifti(ph.truth, os.path.join(args.out, "truth.nii"))
    write_nifti(ph.brain_mask, os.path.join(args.out, "brain_mask.nii"))
    write_nifti(ph.head_mask, os.path.join(args.out, "head_mask.nii"))
    _write_json(os.path.join(args.out, "phantom.json"), spec.to_dict())
    if args.cohort:
        records = generate_cohort(args.cohort, args.ad_fraction, seed=args.seed)
        write_cohort_csv(records, os.path.join(args.out, "cohort.csv"))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    cfg.stages.segment = False
    if cfg.input is None:
        raise ConfigError("--input is required")
    run_pipeline(cfg)
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _load_config(args)
    if cfg.input is None:
        raise ConfigError("--input is required")
    if not args.pipeline:
        for stage in ("extract", "normalize", "register", "crop"):
            setattr(cfg.stages, stage, False)
    cfg.stages.segment = True
    result = run_pipeline(cfg)
    if result.report is not None:
        print(json.dumps(result.report.macro))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = as_labels(read_nifti(args.input))
    truth = as_labels(read_nifti(args.truth))
    mask = read_mask(args.mask) if args.mask else None
    report = overlap_report(confusion(pred, truth, mask), 0.0, args.method)
    _write_json(os.path.join(args.out, "report.json"), report.to_dict())
    print(json.dumps(report.macro))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    engines = args.engines.split(",")
    reports = run_benchmark(cfg, engines, args.out, dims=tuple(args.dims), noise_fraction=args.noise_fraction,
                            repetitions=args.repetitions)
    for r in reports:
        status = r.error or f"dice={r.macro['dice']:.5f} time={r.wall_time_seconds:.4f}s"
        print(f"{r.method}: {status}")
    return EXIT_OK if all(r.error is None for r in reports) else EXIT_NUMERIC


def cmd_split(args) -> int:
    records = read_cohort_csv(args.cohort)
    if args.downsample_to is not None:
        records = downsample(records, args.downsample_to, args.downsample_diagnosis, args.age_bins, args.seed)
        os.makedirs(args.out, exist_ok=True)
        write_cohort_csv(records, os.path.join(args.out, "cohort_downsampled.csv"))
    assignment = split_dataset(records, args.ratios, args.age_bins, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_split_csv(assignment, os.path.join(args.out, "split.csv"))
    print(json.dumps(assignment.counts()))
    return EXIT_OK


def cmd_augment(args) -> int:
    volume = read_nifti(args.input)
    params = sample_augmentation(augmentation_stream(args.seed, args.subject))
    os.makedirs(args.out, exist_ok=True)
    write_nifti(apply_augmentation(volume, params), os.path.join(args.out, "augmented.nii"))
    if args.labels:
        labels = read_nifti(args.labels)
        write_nifti(apply_augmentation(labels, params), os.path.join(args.out, "augmented_labels.nii"))
    _write_json(os.path.join(args.out, "augmentation.json"), params.to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mriseg", description="Brain MRI preprocessing and tissue segmentation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, seeded):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON PipelineConfig; flags override it")
        p.add_argument("--out", required=True, help="output directory")
        if seeded:
            p.add_argument("--seed", type=_seed, required=True)
        return p

    def add_inputs(p):
        p.add_argument("--input", help="input NIfTI volume")
        p.add_argument("--mask", help="brain mask NIfTI")
        grp = p.add_mutually_exclusive_group()
        grp.add_argument("--template", help="template NIfTI (normalization and registration target)")
        grp.add_argument("--template-centroids", type=_floats(3), metavar="CSF,GM,WM")
        p.add_argument("--template-mask")
        p.add_argument("--truth", help="ground-truth label NIfTI")
        p.add_argument("--crop-dims", type=_ints3, metavar="X,Y,Z")
        p.add_argument("--se-radius", type=float)
        p.add_argument("--register-on", choices=("extracted", "raw"))
        for stage in ("extract", "normalize", "register", "crop"):
            p.add_argument(f"--no-{stage}", action="store_true", help=f"disable the {stage} stage")

    p = add("phantom", cmd_phantom, "write a synthetic phantom (and optionally a cohort)", True)
    p.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64])
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--sulci", type=int, default=0)
    p.add_argument("--cavities", type=int, default=0)
    p.add_argument("--texture", type=float, default=0.0)
    p.add_argument("--cohort", type=int, default=0, help="also write cohort.csv with this many subjects")
    p.add_argument("--ad-fraction", type=float, default=0.5)

    p = add("preprocess", cmd_preprocess, "extraction, normalization, registration, crop", False)
    add_inputs(p)

    p = add("segment", cmd_segment, "segment a volume (optionally after preprocessing)", True)
    add_inputs(p)
    p.add_argument("--engine", choices=engine_names(), default=None)
    p.add_argument("--pipeline", action="store_true", help="run the enabled preprocessing stages first")

    p = add("evaluate", cmd_evaluate, "overlap metrics of a label volume against truth", False)
    p.add_argument("--input", required=True, help="predicted label NIfTI")
    p.add_argument("--truth", required=True)
    p.add_argument("--mask")
    p.add_argument("--method", default="")

    p = add("benchmark", cmd_benchmark, "time engines on the benchmark phantom", True)
    p.add_argument("--engines", default="otsu,kmeans,pso,ga")
    p.add_argument("--dims", type=int, nargs=3, default=[160, 160, 192])
    p.add_argument("--noise-fraction", type=float, default=0.15)
    p.add_argument("--repetitions", type=int, default=1)

    p = add("split", cmd_split, "stratified train/val/test split of a cohort", True)
    p.add_argument("--cohort", required=True, help="cohort.csv")
    p.add_argument("--ratios", type=_floats(3), default=[0.6, 0.2, 0.2])
    p.add_argument("--age-bins", type=int, default=5)
    p.add_argument("--downsample-to", type=int)
    p.add_argument("--downsample-diagnosis", choices=("AD", "CN"))

    p = add("augment", cmd_augment, "apply one random augmentation", True)
    p.add_argument("--input", required=True)
    p.add_argument("--labels", help="label NIfTI transformed with the same parameters")
    p.add_argument("--subject", type=int, default=0, help="subject index of the seed stream")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError) as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"data error: {prefix}{exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"numerical error: {prefix}{exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
