from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from ..errors import ConfigError


@dataclass
class PsoConfig:
    swarm_size: int = 30
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    iters: int = 100
    # std of the perturbation applied to the K-means seed, as a fraction of
    # the masked intensity range
    spread: float = 0.05


@dataclass
class GaConfig:
    population: int = 30
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    generations: int = 100
    tournament: int = 3
    blend_alpha: float = 0.5
    # mutation std as a fraction of the masked intensity range
    mutation_scale: float = 0.02
    spread: float = 0.05


@dataclass
class SegConfig:
    """Parameters shared by every segmentation engine.

    ``tol`` is relative: K-means stops when no centroid moves more than
    ``tol * intensity_range``; FCM stops when no membership changes by more
    than ``tol``.
    """

    k: int = 3
    init_centroids: Optional[Sequence[float]] = None  # None means "auto"
    max_iter: int = 100
    tol: float = 1e-4
    beta: float = 0.7
    icm_iters: int = 5
    em_iters: int = 10
    fcm_m: float = 2.0
    soft_mstep: bool = False
    check_objective: bool = False
    pso: PsoConfig = field(default_factory=PsoConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.pso, dict):
            self.pso = PsoConfig(**self.pso)
        if isinstance(self.ga, dict):
            self.ga = GaConfig(**self.ga)
        self.validate()

    def validate(self) -> None:
        counts = {
            "k": self.k,
            "max_iter": self.max_iter,
            "pso.swarm_size": self.pso.swarm_size,
            "pso.iters": self.pso.iters,
            "ga.population": self.ga.population,
            "ga.generations": self.ga.generations,
            "ga.tournament": self.ga.tournament,
        }
        for name, value in counts.items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.icm_iters < 0 or self.em_iters < 0:
            raise ConfigError("icm_iters and em_iters must be >= 0")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if not self.fcm_m > 1:
            raise ConfigError("fcm_m must be > 1")
        if not self.beta >= 0:
            raise ConfigError("beta must be >= 0")
        for name in ("crossover_rate", "mutation_rate"):
            rate = getattr(self.ga, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"ga.{name} must lie in [0, 1], got {rate}")
        if self.init_centroids is not None and len(self.init_centroids) != self.k:
            raise ConfigError(f"init_centroids needs {self.k} values")

    def to_dict(self) -> dict:
        return asdict(self)
