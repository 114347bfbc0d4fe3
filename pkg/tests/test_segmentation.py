import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mriseg.errors import ConfigError, DegenerateInput
from mriseg.metrics import confusion, overlap_report
from mriseg.segmentation import (
    IcmState,
    SegConfig,
    TissueModel,
    default_init_centroids,
    estimate_model,
    fcm_segment,
    ga_refine,
    hmrf_em,
    icm_objective,
    icm_sweep,
    kmeans_segment,
    memberships,
    ml_classify,
    otsu_multilevel,
    pso_refine,
    run_engine,
)
from mriseg.segmentation.common import SortedSSE, sse
from mriseg.segmentation.otsu import between_class_scores
from mriseg.volume import BinaryMask, LabelVolume, Volume3

from oracles import icm_scores_bf, icm_sweep_bf, otsu3_bf


def _vol(values):
    a = np.asarray(values, dtype=float)
    return Volume3(a.reshape(a.size, 1, 1)), BinaryMask(np.ones((a.size, 1, 1), bool))


def _dice(result, ph):
    return overlap_report(confusion(result.labels, ph.truth, ph.brain_mask)).macro["dice"]


# K-means

def test_kmeans_fixed_point():
    v, m = _vol([10, 10, 50, 50, 90, 90])
    r = kmeans_segment(v, m, SegConfig(init_centroids=[10, 50, 90]))
    assert r.centroids.tolist() == [10, 50, 90] and r.sse == 0.0


def test_kmeans_one_lloyd_step():
    v, m = _vol([0, 1, 9, 10, 20, 21])
    r = kmeans_segment(v, m, SegConfig(init_centroids=[0, 10, 20]))
    assert r.centroids.tolist() == [0.5, 9.5, 20.5]
    assert r.labels.labels.ravel().tolist() == [1, 1, 2, 2, 3, 3]


def test_kmeans_noise_free_phantom(clean_phantom):
    r = kmeans_segment(clean_phantom.volume, clean_phantom.brain_mask)
    assert r.labels == clean_phantom.truth


def test_kmeans_sse_non_increasing(noisy_phantom):
    r = kmeans_segment(noisy_phantom.volume, noisy_phantom.brain_mask)
    h = np.array(r.history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])


def test_kmeans_empty_cluster_repaired():
    v, m = _vol([0, 0, 1, 1, 100, 100])
    # the middle seed attracts nothing at first
    r = kmeans_segment(v, m, SegConfig(init_centroids=[0.5, 300, 400]))
    assert np.all(np.bincount(r.labels.labels.ravel(), minlength=4)[1:] > 0)


def test_kmeans_degenerate():
    v, m = _vol([1, 1, 2, 2])
    with pytest.raises(DegenerateInput):
        kmeans_segment(v, m)


def test_default_init_uniform_range():
    v, m = _vol(np.linspace(0, 255, 256))
    init = default_init_centroids(v, m)
    np.testing.assert_allclose(init, [25.5, 127.5, 229.5])
    assert init[0] <= 50
    v2, _ = _vol(np.linspace(0, 255, 256) + 17.0)
    np.testing.assert_allclose(default_init_centroids(v2, m), init + 17.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        SegConfig(fcm_m=1.0)
    with pytest.raises(ConfigError):
        SegConfig(tol=0)
    with pytest.raises(ConfigError):
        SegConfig(ga={"crossover_rate": 1.5})


# Otsu

def test_otsu_spikes():
    v, m = _vol([10] * 20 + [100] * 30 + [200] * 25)
    r = otsu_multilevel(v, m)
    assert np.bincount(r.labels.labels.ravel()).tolist() == [0, 20, 30, 25]
    t1, t2 = r.extra["thresholds"]
    assert 10 < t1 <= 100 < t2 <= 200


def test_otsu_scores_match_bruteforce(rng):
    for _ in range(5):
        counts = rng.integers(0, 50, 40).astype(float)
        centers = np.sort(rng.uniform(0, 255, 40))
        scores = between_class_scores(counts, centers)
        t1, t2 = np.unravel_index(int(np.argmax(scores)), scores.shape)
        (b1, b2), _ = otsu3_bf(counts.tolist(), centers.tolist())
        assert (t1, t2) == (b1, b2)


def test_otsu_full_histogram_bruteforce():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(60, 9, 400), rng.normal(110, 9, 600), rng.normal(160, 9, 500)])
    v, m = _vol(x)
    r = otsu_multilevel(v, m)
    lo, hi = x.min(), x.max()
    idx = np.minimum(((x - lo) / (hi - lo) * 256).astype(int), 255)
    counts = np.bincount(idx, minlength=256).tolist()
    centers = [lo + (i + 0.5) * (hi - lo) / 256 for i in range(256)]
    best, _ = otsu3_bf(counts, centers)
    assert tuple(r.extra["bins"].tolist()) == best


def test_otsu_phantom_dice():
    from mriseg.phantom import PhantomSpec, generate_phantom

    ph = generate_phantom(PhantomSpec(noise_sigma=2.0, seed=5))
    r = otsu_multilevel(ph.volume, ph.brain_mask)
    per = overlap_report(confusion(r.labels, ph.truth)).per_class
    assert all(per[c]["dice"] >= 0.99 for c in per)


# FCM

def test_fcm_singularity():
    u = memberships(np.array([5.0, 7.0]), np.array([1.0, 5.0, 9.0]), 2.0)
    assert u[0].tolist() == [0.0, 1.0, 0.0]
    assert abs(u[1].sum() - 1) < 1e-12


def test_fcm_memberships_normalized(noisy_phantom):
    r = fcm_segment(noisy_phantom.volume, noisy_phantom.brain_mask)
    assert np.max(np.abs(r.extra["memberships"].sum(axis=1) - 1)) <= 1e-9


def test_fcm_two_value_fixed_point():
    v, m = _vol([0] * 10 + [100] * 10)
    r = fcm_segment(v, m, SegConfig(k=2))
    np.testing.assert_allclose(r.centroids, [0, 100], atol=1e-9)
    u = r.extra["memberships"]
    np.testing.assert_allclose(u, np.repeat([[1, 0], [0, 1]], 10, axis=0), atol=1e-9)


# ICM / HMRF

def _model(means, variances):
    return TissueModel(np.asarray(means, float), np.asarray(variances, float))


def test_icm_beta_zero_is_ml(noisy_phantom):
    v, m = noisy_phantom.volume, noisy_phantom.brain_mask
    model = _model([60, 110, 160], [50, 60, 70])
    init = kmeans_segment(v, m).labels.labels
    out = icm_sweep(v, m, IcmState(init.copy(), model, 0.0))
    assert np.array_equal(out.labels, ml_classify(v, m, model))


def test_icm_center_flips_to_majority():
    labels = np.ones((3, 3, 3), np.uint8)
    labels[1, 1, 1] = 2
    values = np.full((3, 3, 3), 5.0)
    model = _model([0.0, 10.0], [4.0, 4.0])  # equal densities at 5
    mask = np.zeros((3, 3, 3), bool)
    mask[1, 1, 1] = True
    scores = icm_scores_bf(values, labels, 1, 1, 1, model.means, model.variances, 0.7)
    assert int(np.argmax(scores)) == 0
    out = icm_sweep(Volume3(values), BinaryMask(mask), IcmState(labels, model, 0.7))
    assert out.labels[1, 1, 1] == 1


def test_icm_fixed_point_on_clean_phantom(clean_phantom):
    v, m = clean_phantom.volume, clean_phantom.brain_mask
    truth = clean_phantom.truth.labels
    x = v.data[m.bits]
    model = estimate_model(x, truth[m.bits].astype(int) - 1, 3)
    out = icm_sweep(v, m, IcmState(truth.copy(), model, 0.7))
    assert np.array_equal(out.labels, truth)


@settings(max_examples=60, deadline=None)
@given(
    shape=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
    seed=st.integers(0, 2**31),
    beta=st.floats(0.0, 3.0),
)
def test_icm_matches_exhaustive_oracle(shape, seed, beta):
    r = np.random.default_rng(seed)
    values = r.normal(0, 2, shape)
    mask = r.random(shape) < 0.8
    labels = np.where(mask, r.integers(1, 3, shape), 0).astype(np.uint8)
    model = _model(sorted(r.normal(0, 2, 2)), r.uniform(0.5, 3, 2))
    ours = icm_sweep(Volume3(values), BinaryMask(mask), IcmState(labels.copy(), model, beta)).labels
    ref = icm_sweep_bf(values, mask, labels, model.means, model.variances, beta)
    assert np.array_equal(ours, ref)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), beta=st.floats(0.0, 3.0))
def test_icm_objective_non_decreasing(seed, beta):
    r = np.random.default_rng(seed)
    shape = (5, 4, 3)
    v = Volume3(r.normal(0, 2, shape))
    m = BinaryMask(r.random(shape) < 0.9)
    labels = np.where(m.bits, r.integers(1, 4, shape), 0).astype(np.uint8)
    model = _model([-2, 0, 2], r.uniform(0.5, 2, 3))
    state = IcmState(labels, model, beta)
    prev = icm_objective(v, m, state.labels, model, beta)
    for _ in range(4):
        state = icm_sweep(v, m, state)
        now = icm_objective(v, m, state.labels, model, beta)
        assert now >= prev - 1e-9 * max(1, abs(prev))
        prev = now


def test_hmrf_noise_free_fixed_point(clean_phantom):
    v, m = clean_phantom.volume, clean_phantom.brain_mask
    res = hmrf_em(v, m, clean_phantom.truth)
    assert res.labels == clean_phantom.truth
    np.testing.assert_allclose(res.model.means, [60, 110, 160])


def test_hmrf_zero_icm_iters_keeps_init(noisy_phantom):
    v, m = noisy_phantom.volume, noisy_phantom.brain_mask
    init = kmeans_segment(v, m).labels
    res = hmrf_em(v, m, init, SegConfig(icm_iters=0))
    assert res.labels == init
    x = v.data[m.bits]
    codes = init.labels[m.bits]
    np.testing.assert_allclose(res.model.means, [x[codes == c].mean() for c in (1, 2, 3)])


def test_hmrf_beats_kmeans_on_noisy_phantom(noisy_phantom):
    ph = noisy_phantom
    km = run_engine("kmeans", ph.volume, ph.brain_mask)
    hm = run_engine("kmeans+hmrf", ph.volume, ph.brain_mask)
    assert _dice(hm, ph) > _dice(km, ph)
    assert [h["em_iter"] for h in hm.history] == list(range(1, 11))


def test_hmrf_objective_checked_in_loop(noisy_phantom):
    ph = noisy_phantom
    cfg = SegConfig(check_objective=True, em_iters=3)
    res = hmrf_em(ph.volume, ph.brain_mask, kmeans_segment(ph.volume, ph.brain_mask).labels, cfg)
    assert len(res.log) == 3


def test_hmrf_beta_zero_equals_ml(noisy_phantom):
    ph = noisy_phantom
    init = kmeans_segment(ph.volume, ph.brain_mask).labels
    cfg = SegConfig(beta=0.0, em_iters=1, icm_iters=1)
    res = hmrf_em(ph.volume, ph.brain_mask, init, cfg)
    x = ph.volume.data[ph.brain_mask.bits]
    model = estimate_model(x, init.labels[ph.brain_mask.bits].astype(int) - 1, 3)
    assert np.array_equal(res.labels.labels, ml_classify(ph.volume, ph.brain_mask, model))


def test_otsu_hmrf_wiring(noisy_phantom):
    ph = noisy_phantom
    r = run_engine("otsu+hmrf", ph.volume, ph.brain_mask)
    assert _dice(r, ph) > _dice(run_engine("otsu", ph.volume, ph.brain_mask), ph)


# PSO / GA

def test_metaheuristics_exact_clusters():
    v, m = _vol([10] * 5 + [50] * 5 + [90] * 5)
    for f in (pso_refine, ga_refine):
        r = f(v, m, SegConfig(seed=1))
        assert r.sse == 0.0 and r.centroids.tolist() == [10, 50, 90]


@settings(max_examples=25, deadline=None)
@given(data=hnp.arrays(float, st.integers(8, 60), elements=st.floats(0, 255)), seed=st.integers(0, 1000))
def test_metaheuristics_never_worse_than_kmeans(data, seed):
    if np.unique(data).size < 3:
        return
    v, m = _vol(data)
    cfg = SegConfig(seed=seed, pso={"iters": 15}, ga={"generations": 15})
    base = kmeans_segment(v, m, cfg).sse
    assert pso_refine(v, m, cfg).sse <= base
    assert ga_refine(v, m, cfg).sse <= base


def test_metaheuristics_deterministic(noisy_phantom):
    ph = noisy_phantom
    for f in (pso_refine, ga_refine):
        a = f(ph.volume, ph.brain_mask, SegConfig(seed=4))
        b = f(ph.volume, ph.brain_mask, SegConfig(seed=4))
        assert np.array_equal(a.centroids, b.centroids)


def test_ga_elitism_monotone(noisy_phantom):
    h = ga_refine(noisy_phantom.volume, noisy_phantom.brain_mask, SegConfig(seed=2)).history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_ga_agrees_with_pso(noisy_phantom):
    ph = noisy_phantom
    p = pso_refine(ph.volume, ph.brain_mask, SegConfig(seed=0))
    g = ga_refine(ph.volume, ph.brain_mask, SegConfig(seed=0))
    rep = overlap_report(confusion(g.labels, p.labels, ph.brain_mask))
    assert rep.macro["dice"] >= 0.999


def test_sorted_sse_matches_direct(rng):
    x = rng.normal(100, 30, 500)
    cands = rng.uniform(0, 200, (20, 3))
    fast = SortedSSE(x)(cands)
    direct = [sse(x, c) for c in cands]
    np.testing.assert_allclose(fast, direct, rtol=1e-9)


@pytest.mark.parametrize("engine", ["kmeans", "otsu", "fcm", "pso", "ga", "kmeans+hmrf"])
def test_labels_sorted_by_mean(noisy_phantom, engine):
    ph = noisy_phantom
    r = run_engine(engine, ph.volume, ph.brain_mask)
    means = [ph.volume.data[r.labels.labels == c].mean() for c in (1, 2, 3)]
    assert means[0] < means[1] < means[2]


def test_unknown_engine(noisy_phantom):
    with pytest.raises(KeyError):
        run_engine("svm", noisy_phantom.volume, noisy_phantom.brain_mask)


def test_seed_in_config_changes_pso_only_through_rng(noisy_phantom):
    ph = noisy_phantom
    a = pso_refine(ph.volume, ph.brain_mask, SegConfig(seed=1))
    b = pso_refine(ph.volume, ph.brain_mask, dataclasses.replace(SegConfig(), seed=1))
    assert np.array_equal(a.centroids, b.centroids)
