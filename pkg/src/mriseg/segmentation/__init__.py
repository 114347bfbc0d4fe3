"""Tissue segmentation engines and the engine registry used by the CLI."""
from __future__ import annotations

from typing import Callable, Dict

from ..volume import BinaryMask, Volume3
from .common import SegmentationResult, assign_nearest, sse
from .config import GaConfig, PsoConfig, SegConfig
from .fcm import fcm_segment, memberships
from .hmrf import (
    HmrfResult,
    IcmState,
    TissueModel,
    estimate_model,
    hmrf_em,
    icm_objective,
    icm_sweep,
    ml_classify,
)
from .kmeans import default_init_centroids, kmeans_segment
from .metaheuristic import ga_refine, pso_refine
from .otsu import otsu_multilevel

__all__ = [
    "SegConfig", "PsoConfig", "GaConfig", "SegmentationResult", "TissueModel", "IcmState",
    "HmrfResult", "kmeans_segment", "default_init_centroids", "otsu_multilevel", "fcm_segment",
    "memberships", "pso_refine", "ga_refine", "icm_sweep", "hmrf_em", "icm_objective",
    "ml_classify", "estimate_model", "assign_nearest", "sse", "ENGINES", "run_engine",
    "engine_names",
]

Engine = Callable[[Volume3, BinaryMask, SegConfig], SegmentationResult]

ENGINES: Dict[str, Engine] = {
    "kmeans": kmeans_segment,
    "otsu": lambda v, m, cfg: otsu_multilevel(v, m, cfg.k),
    "fcm": fcm_segment,
    "pso": pso_refine,
    "ga": ga_refine,
}


def engine_names() -> list[str]:
    base = list(ENGINES)
    return base + [f"{name}+hmrf" for name in base]


def run_engine(name: str, volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> SegmentationResult:
    """Run ``name`` (one of :func:`engine_names`), e.g. ``"kmeans+hmrf"``.

    The ``+hmrf`` suffix feeds the base engine's labels to :func:`hmrf_em`;
    the result then carries the HMRF labels, the refined class means as
    centroids, and the EM log as ``history``.
    """
    cfg = cfg or SegConfig()
    base, _, refine = name.partition("+")
    if base not in ENGINES or refine not in ("", "hmrf"):
        raise KeyError(f"unknown engine {name!r}; choose from {engine_names()}")
    result = ENGINES[base](volume, mask, cfg)
    if not refine:
        return result
    refined = hmrf_em(volume, mask, result.labels, cfg)
    x = volume.data[mask.bits]
    return SegmentationResult(
        labels=refined.labels,
        centroids=refined.model.means,
        sse=sse(x, refined.model.means),
        n_iter=len(refined.log),
        history=refined.log,
        extra={"model": refined.model.to_dict(), "init_centroids": result.centroids.tolist()},
    )
