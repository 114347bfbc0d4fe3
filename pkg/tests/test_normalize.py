import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mriseg.errors import DegenerateInput
from mriseg.normalize import IntensityCentroids, apply_gain, compute_centroids, fit_gain, fit_gain_offset
from mriseg.phantom import PhantomSpec, generate_phantom
from mriseg.volume import BinaryMask, Volume3


def _three_values(n=10):
    data = np.repeat([10.0, 50.0, 90.0], n).reshape(3, n, 1) * np.ones((1, 1, 2))
    return Volume3(data)


def test_exact_three_values():
    v = _three_values()
    c = compute_centroids(v, BinaryMask.full(v))
    assert c.as_array().tolist() == [10.0, 50.0, 90.0]


def test_phantom_centroids_near_truth():
    ph = generate_phantom(PhantomSpec(noise_sigma=5.0, seed=1))
    c = compute_centroids(ph.volume, ph.brain_mask).as_array()
    assert np.all(np.abs(c - [60, 110, 160]) <= 2)


def test_two_values_degenerate():
    v = Volume3(np.repeat([1.0, 2.0], 8).reshape(2, 2, 4))
    with pytest.raises(DegenerateInput):
        compute_centroids(v, BinaryMask.full(v))


def test_centroid_order_enforced():
    with pytest.raises(ValueError):
        IntensityCentroids(5, 3, 9)


def test_fit_gain_examples():
    a = IntensityCentroids(10, 50, 90)
    assert fit_gain(a, a) == 1.0
    assert fit_gain(a, IntensityCentroids(20, 100, 180)) == 2.0
    assert fit_gain(IntensityCentroids(20, 100, 180), a) == 0.5


def test_fit_gain_offset_recovers_affine():
    g, o = fit_gain_offset(IntensityCentroids(10, 50, 90), IntensityCentroids(25, 105, 185))
    assert g == pytest.approx(2.0) and o == pytest.approx(5.0)


def test_apply_gain():
    ramp = Volume3(np.linspace(0, 10, 11).reshape(11, 1, 1))
    assert apply_gain(ramp, 1.0) == ramp
    np.testing.assert_array_equal(apply_gain(ramp, 2.0).data.ravel(), np.linspace(0, 20, 11))
    with pytest.raises(ValueError):
        apply_gain(ramp, 0.0)


@settings(max_examples=25, deadline=None)
@given(c=st.tuples(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 100)), g=st.floats(0.05, 20))
def test_fit_gain_exact_for_proportional(c, g):
    cs = sorted(c)
    if not cs[0] < cs[1] < cs[2]:
        return
    img = IntensityCentroids(*cs)
    tpl = IntensityCentroids(*(g * v for v in cs))
    assert fit_gain(img, tpl) == pytest.approx(g, rel=1e-14)


@pytest.mark.parametrize("g", [0.5, 1.7, 3.0])
def test_scale_equivariance_and_round_trip(noisy_phantom, g):
    v, m = noisy_phantom.volume, noisy_phantom.brain_mask
    base = compute_centroids(v, m).as_array()
    scaled = compute_centroids(apply_gain(v, g), m).as_array()
    span = np.ptp(v.data[m.bits]) * g
    assert np.all(np.abs(scaled - g * base) <= 1e-3 * span)
    gain = fit_gain(IntensityCentroids(*scaled), IntensityCentroids(*base))
    assert gain == pytest.approx(1 / g, rel=0.01)
