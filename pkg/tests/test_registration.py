import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mriseg.errors import DegenerateInput, OutOfBounds, SingularTransform
from mriseg.phantom import PhantomSpec, generate_phantom
from mriseg.registration import (
    AffineTransform,
    RegistrationConfig,
    compose,
    crop_to_template,
    inverse,
    ncc,
    register_affine,
    resample,
)
from mriseg.volume import BinaryMask, LabelVolume, Volume3, voxel_count

small = st.floats(-5, 5)
params = st.tuples(
    st.tuples(small, small, small),
    st.tuples(small, small, small),
    st.tuples(st.floats(0.9, 1.1), st.floats(0.9, 1.1), st.floats(0.9, 1.1)),
    st.tuples(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1)),
)


def _t(p, center=(3.0, 4.0, 5.0)):
    return AffineTransform(*p, center=center)


@pytest.fixture(scope="module")
def textured():
    return generate_phantom(PhantomSpec(bias_amplitude=0.2, texture_amplitude=0.15, seed=3)).volume


def test_compose_identity():
    t = _t(((1, 2, 3), (4, 5, 6), (1, 1.05, 0.95), (0.01, 0, 0.02)))
    np.testing.assert_allclose(compose(AffineTransform.identity(t.center), t).matrix, t.matrix, atol=1e-12)


def test_compose_translations():
    a = AffineTransform(translation=(1, 2, 3))
    b = AffineTransform(translation=(4, 5, 6))
    np.testing.assert_allclose(compose(a, b).translation, (5, 7, 9), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(p=params, q=params)
def test_group_axioms(p, q):
    a, b = _t(p), _t(q)
    np.testing.assert_allclose(compose(a, inverse(a)).matrix, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(compose(a, b).matrix, a.matrix @ b.matrix, atol=1e-10)
    back = AffineTransform.from_matrix(a.matrix, a.center)
    np.testing.assert_allclose(back.params, a.params, atol=1e-9)


def test_flip_parameters_round_trip():
    t = AffineTransform(translation=(1, 0, 2), rotation=(2, -1, 3), center=(5, 5, 5), flip=True)
    assert np.linalg.det(t.linear()) < 0
    back = AffineTransform.from_matrix(t.matrix, t.center)
    assert back.flip and np.allclose(back.params, t.params)


def test_json_record():
    t = _t(((1, 2, 3), (4, 5, 6), (1, 1.05, 0.95), (0.01, 0, 0.02)))
    rec = json.loads(t.dumps())
    assert len(rec["params"]) == 12 and len(rec["matrix"]) == 16
    np.testing.assert_allclose(np.array(rec["matrix"]).reshape(4, 4), t.matrix)
    assert AffineTransform.from_json(rec) == t


def test_nonpositive_scale_rejected():
    with pytest.raises(SingularTransform):
        AffineTransform(scale=(1, 0, 1))


def test_singular_matrix_rejected():
    m = np.eye(4)
    m[2, 2] = 0
    with pytest.raises(SingularTransform):
        resample(Volume3(np.ones((3, 3, 3))), m)


def test_resample_identity_exact(rng):
    v = Volume3(rng.normal(0, 1, (6, 7, 8)))
    assert resample(v, AffineTransform.identity()) == v
    lab = LabelVolume(rng.integers(0, 4, (6, 7, 8)), 3)
    assert resample(lab, AffineTransform.identity()) == lab


def test_resample_integer_shift_nearest(rng):
    data = rng.normal(0, 1, (6, 5, 4))
    out = resample(Volume3(data), AffineTransform(translation=(2, 0, 0)), interp="nearest").data
    assert np.all(out[:2] == 0)
    np.testing.assert_array_equal(out[2:], data[:-2])


def test_resample_half_voxel_ramp():
    x = np.arange(10, dtype=float)
    ramp = Volume3(np.broadcast_to(x[:, None, None], (10, 4, 4)))
    out = resample(ramp, AffineTransform(translation=(0.5, 0, 0))).data
    np.testing.assert_allclose(out[1:, :, :], ramp.data[1:] - 0.5, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(p=params, seed=st.integers(0, 1000))
def test_trilinear_convex(p, seed):
    data = np.random.default_rng(seed).uniform(1, 5, (7, 7, 7))
    out = resample(Volume3(data), _t(p, center=(3, 3, 3))).data
    # samples outside the grid are 0, so the hull includes 0
    assert out.min() >= min(0.0, data.min()) - 1e-12 and out.max() <= data.max() + 1e-12
    interior = out[out > 0]
    assert interior.size == 0 or interior.max() <= data.max() + 1e-12


def test_crop_256_160_256():
    v = Volume3(np.zeros((256, 160, 256), dtype=np.float32))
    out = crop_to_template(v)
    assert out.shape == (160, 160, 192) and voxel_count(out) == 4_915_200


def test_crop_full_identity_and_bounds(rng):
    v = Volume3(rng.normal(0, 1, (5, 6, 7)))
    assert crop_to_template(v, (5, 6, 7), (0, 0, 0)).data.tolist() == v.data.tolist()
    with pytest.raises(OutOfBounds):
        crop_to_template(v, (4, 4, 4), (2, 0, 0))
    m = crop_to_template(BinaryMask(np.ones((5, 6, 7))), (2, 2, 2), (1, 1, 1))
    assert isinstance(m, BinaryMask) and m.affine[0, 3] == 1.0


def test_degenerate_registration():
    with pytest.raises(DegenerateInput):
        register_affine(Volume3(np.ones((8, 8, 8))), Volume3(np.arange(512.0).reshape(8, 8, 8)))


def test_self_registration(textured):
    t, cost = register_affine(textured, textured)
    assert np.abs(np.array(t.translation)).max() < 0.05
    assert np.abs(np.array(t.rotation)).max() < 0.05
    assert ncc(resample(textured, t).data, textured.data) >= 0.999


def _recover(base, truth):
    fixed = resample(base, truth)
    est, cost = register_affine(base, fixed)
    err = est.params - truth.params
    return np.abs(err[:3]).max(), np.abs(err[3:6]).max(), ncc(resample(base, est).data, fixed.data), cost


def test_recover_translation(textured):
    c = tuple((np.array(textured.shape) - 1) / 2)
    te, re, score, _ = _recover(textured, AffineTransform(translation=(4, -3, 2), center=c))
    assert te <= 0.5 and re <= 0.5 and score >= 0.99


def test_recover_rotation_z(textured):
    c = tuple((np.array(textured.shape) - 1) / 2)
    te, re, score, _ = _recover(textured, AffineTransform(rotation=(0, 0, 5), center=c))
    assert te <= 0.5 and re <= 0.5 and score >= 0.99


def test_final_cost_not_worse_than_identity(textured):
    c = tuple((np.array(textured.shape) - 1) / 2)
    fixed = resample(textured, AffineTransform(translation=(1.5, 0, 0), center=c))
    _, cost = register_affine(textured, fixed)
    assert cost <= 1 - ncc(textured.data, fixed.data)


def test_ssd_cost_runs(textured):
    small = Volume3(textured.data[::2, ::2, ::2])
    c = tuple((np.array(small.shape) - 1) / 2)
    fixed = resample(small, AffineTransform(translation=(1, 0, -1), center=c))
    t, cost = register_affine(small, fixed, RegistrationConfig(cost="SSD", pyramid_levels=2))
    np.testing.assert_allclose(t.translation, (1, 0, -1), atol=0.5)


def test_plain_phantom_translation(clean_phantom):
    c = tuple((np.array(clean_phantom.volume.shape) - 1) / 2)
    te, _, score, _ = _recover(clean_phantom.volume, AffineTransform(translation=(4, -3, 2), center=c))
    assert te <= 0.5 and score >= 0.99
