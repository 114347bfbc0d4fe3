"""Population-based refinement of K-means centroids (PSO and GA).

Both optimizers search centroid triples minimizing the K-means SSE and are
seeded with the K-means solution, so they can never end worse than it.
"""
from __future__ import annotations

import numpy as np

from ..volume import BinaryMask, Volume3
from .common import (
    SegmentationResult,
    SortedSSE,
    assign_nearest,
    intensity_range,
    prepare,
    sse,
    to_label_volume,
)
from .config import SegConfig
from .kmeans import kmeans_segment


def _finish(x, volume, mask, cfg, seed_result, best, history, n_iter):
    best = np.sort(best)
    best_sse = sse(x, best)
    # candidates were ranked with prefix sums; re-check against the direct sum
    if best_sse > seed_result.sse:
        best, best_sse = seed_result.centroids.copy(), seed_result.sse
    codes = assign_nearest(x, best)
    return SegmentationResult(
        labels=to_label_volume(codes, volume, mask, cfg.k),
        centroids=best,
        sse=best_sse,
        n_iter=n_iter,
        history=history,
        extra={"kmeans_sse": seed_result.sse},
    )


def _seed_population(rng, seed_centroids, size, spread, span):
    pop = np.repeat(seed_centroids[None, :], size, axis=0)
    pop[1:] += rng.normal(0.0, spread * span, size=pop[1:].shape)
    return pop


def pso_refine(volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> SegmentationResult:
    """Global-best particle swarm over centroid sets.

    Particle 0 starts at the K-means centroids, the rest at Gaussian
    perturbations of them; velocities start at zero. ``history`` is the
    global-best fitness after each iteration.
    """
    cfg = cfg or SegConfig()
    p = cfg.pso
    x = prepare(volume, mask, cfg.k)
    seed = kmeans_segment(volume, mask, cfg)
    rng = np.random.default_rng(cfg.seed)
    span = intensity_range(x)
    fitness = SortedSSE(x)

    pos = _seed_population(rng, seed.centroids, p.swarm_size, p.spread, span)
    vel = np.zeros_like(pos)
    pbest = pos.copy()
    pbest_f = fitness(pos)
    g = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g].copy(), pbest_f[g]
    history = [float(gbest_f)]
    for _ in range(p.iters):
        r1 = rng.random(pos.shape)
        r2 = rng.random(pos.shape)
        vel = p.inertia * vel + p.cognitive * r1 * (pbest - pos) + p.social * r2 * (gbest - pos)
        pos = pos + vel
        f = fitness(pos)
        better = f < pbest_f
        pbest[better] = pos[better]
        pbest_f[better] = f[better]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < gbest_f:
            gbest, gbest_f = pbest[g].copy(), pbest_f[g]
        history.append(float(gbest_f))
    return _finish(x, volume, mask, cfg, seed, gbest, history, p.iters)


def ga_refine(volume: Volume3, mask: BinaryMask, cfg: SegConfig | None = None) -> SegmentationResult:
    """Generational GA over centroid sets.

    Tournament selection, BLX-alpha blend crossover, per-gene Gaussian
    mutation and elitism of one; the K-means centroids are individual 0 of
    generation 0. ``history`` is the best fitness of each generation and is
    non-increasing because of elitism.
    """
    cfg = cfg or SegConfig()
    ga = cfg.ga
    x = prepare(volume, mask, cfg.k)
    seed = kmeans_segment(volume, mask, cfg)
    rng = np.random.default_rng(cfg.seed)
    span = intensity_range(x)
    fitness = SortedSSE(x)
    n, k = ga.population, cfg.k

    pop = _seed_population(rng, seed.centroids, n, ga.spread, span)
    fit = fitness(pop)
    history = [float(fit.min())]
    for _ in range(ga.generations):
        elite = pop[int(np.argmin(fit))].copy()
        entrants = rng.integers(0, n, size=(n, ga.tournament))
        winners = entrants[np.arange(n), np.argmin(fit[entrants], axis=1)]
        parents = pop[winners]
        mates = parents[rng.permutation(n)]
        lo = np.minimum(parents, mates)
        hi = np.maximum(parents, mates)
        ext = ga.blend_alpha * (hi - lo)
        blend = rng.uniform(lo - ext, hi + ext)
        cross = rng.random(n) < ga.crossover_rate
        children = np.where(cross[:, None], blend, parents)
        mutate = rng.random((n, k)) < ga.mutation_rate
        children = children + mutate * rng.normal(0.0, ga.mutation_scale * span, size=(n, k))
        children[0] = elite
        pop = children
        fit = fitness(pop)
        history.append(float(fit.min()))
    best = pop[int(np.argmin(fit))]
    return _finish(x, volume, mask, cfg, seed, best, history, ga.generations)
