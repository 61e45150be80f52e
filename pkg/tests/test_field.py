import math

import numpy as np
import pytest

from statefield import autodiff as ad
from statefield.autodiff import NumericError, Tape, Tensor
from statefield.field import (
    FieldConfig,
    FieldConfigError,
    RayBatch,
    composite,
    encode_frequency,
    field_forward,
    init_field_weights,
    render_rays,
    sample_ray,
)
from statefield.losses import smooth_l1_photometric

SMALL = FieldConfig(pos_freqs=2, dir_freqs=1, geo_widths=[8, 8, 8], tex_widths=[8, 8], feature_size=3, samples_per_ray=4)


def weights64(cfg=SMALL, seed=0):
    return init_field_weights(cfg, np.random.default_rng(seed), np.float64)


def zero_weights(cfg=SMALL):
    w = weights64(cfg)
    for t in w.values():
        t.data = np.zeros_like(t.data)
    return w


def constant_composite(sigma, n, near=0.0, far=1.0, rng=None):
    s = sample_ray(n, near, far, rng)
    sig = Tensor(np.full((1, n), float(sigma)))
    rgb = Tensor(np.zeros((1, n, 3)))
    return composite(sig, rgb, s, far, [1.0, 1.0, 1.0])


# -- config ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(FieldConfigError):
        FieldConfig(geo_widths=[8, 16, 8])
    with pytest.raises(FieldConfigError):
        FieldConfig(near=3.0, far=2.0)
    with pytest.raises(FieldConfigError):
        FieldConfig(samples_per_ray=0)


# -- encoding ----------------------------------------------------------------


def test_encoding_examples():
    np.testing.assert_array_equal(encode_frequency(np.array([0.0]), 3), [0, 0, 1, 0, 1, 0, 1])
    v = np.array([[0.3, -0.2, 0.9]])
    np.testing.assert_array_equal(encode_frequency(v, 0), v)
    np.testing.assert_allclose(encode_frequency(np.array([0.5]), 1), [0.5, 1.0, 0.0], atol=1e-15)
    assert encode_frequency(np.zeros((5, 3)), 6).shape == (5, 39)


# -- field -------------------------------------------------------------------


def test_zero_weights_give_ln2_and_grey():
    rgb, sigma = field_forward(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1)), zero_weights(), SMALL)
    np.testing.assert_allclose(sigma.data, math.log(2.0), rtol=0, atol=1e-15)
    np.testing.assert_allclose(rgb.data, 0.5, rtol=0, atol=1e-15)


def test_density_ignores_direction():
    w = weights64()
    x = np.random.default_rng(1).normal(size=(4, 3))
    d1 = np.tile([0, 0, 1.0], (4, 1))
    d2 = np.tile([1.0, 0, 0], (4, 1))
    rgb1, s1 = field_forward(x, d1, w, SMALL)
    rgb2, s2 = field_forward(x, d2, w, SMALL)
    np.testing.assert_array_equal(s1.data, s2.data)
    assert not np.array_equal(rgb1.data, rgb2.data)


def test_field_forward_grad_check():
    w = weights64(seed=2)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 3))
    d = rng.normal(size=(3, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    proj = Tensor(rng.normal(size=(3, 3)))
    for key in ("geo.0.w", "geo.out.w", "tex.1.w", "tex.out.b"):

        def f(p, key=key):
            ww = dict(w)
            ww[key] = p
            rgb, sigma = field_forward(x, d, ww, SMALL)
            return ad.sum_(rgb * proj) + ad.sum_(sigma)

        assert ad.grad_check(f, w[key].data, 1e-5) <= 1e-4


def test_non_finite_weights_rejected():
    w = weights64()
    w["geo.1.w"].data[0, 0] = np.nan
    with pytest.raises(NumericError):
        field_forward(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), w, SMALL)


# -- sampling ----------------------------------------------------------------


def test_sample_midpoints():
    np.testing.assert_allclose(sample_ray(1, 2.0, 4.0), [[3.0]])
    np.testing.assert_allclose(sample_ray(4, 0.0, 1.0), [[0.125, 0.375, 0.625, 0.875]])


def test_jittered_samples_stay_in_bins():
    s = sample_ray(16, 1.0, 3.0, np.random.default_rng(0), count=200)
    lo = 1.0 + np.arange(16) * 2.0 / 16
    assert np.all(s >= lo) and np.all(s <= lo + 2.0 / 16)


# -- compositing -------------------------------------------------------------


def test_single_sample_half_alpha():
    s = np.array([[0.0]])
    out = composite(Tensor(np.array([[math.log(2.0)]])), Tensor(np.zeros((1, 1, 3))), s, 1.0, [1, 1, 1])
    np.testing.assert_allclose(out.weights.data, [[0.5]])
    np.testing.assert_allclose(out.opacity.data, [0.5])
    np.testing.assert_allclose(out.color.data, [[0.5, 0.5, 0.5]])


def test_zero_density_is_background():
    out = constant_composite(0.0, 8)
    np.testing.assert_array_equal(out.opacity.data, [0.0])
    np.testing.assert_array_equal(out.color.data, [[1.0, 1.0, 1.0]])


def test_constant_density_matches_closed_form():
    out = constant_composite(2.0, 512)
    assert abs(out.opacity.data[0] - (1 - math.exp(-2.0))) <= 1e-3


def test_quadrature_error_halves():
    exact = 1 - math.exp(-2.0)
    errs = [abs(constant_composite(2.0, n).opacity.data[0] - exact) for n in (32, 64, 128, 256)]
    for a, b in zip(errs, errs[1:]):
        assert 0.5 * 0.7 <= b / a <= 0.5 * 1.3


def test_weights_sub_probability_and_monotone():
    rng = np.random.default_rng(5)
    sigma = rng.uniform(0, 3, size=(20, 16))
    s = sample_ray(16, 2.0, 4.0, rng, count=20)
    rgb = Tensor(rng.uniform(size=(20, 16, 3)))
    out = composite(Tensor(sigma), rgb, s, 4.0, [1, 1, 1])
    w = out.weights.data
    assert np.all(w >= 0)
    assert np.all(w.sum(axis=1) <= 1 + 1e-12)
    np.testing.assert_allclose(out.opacity.data, w.sum(axis=1), rtol=0, atol=1e-12)
    for k in (0, 7, 15):
        bumped = sigma.copy()
        bumped[:, k] += 0.5
        out2 = composite(Tensor(bumped), rgb, s, 4.0, [1, 1, 1])
        assert np.all(out2.opacity.data >= out.opacity.data - 1e-15)


def test_depth_guard_on_empty_ray():
    out = constant_composite(0.0, 4)
    assert np.isfinite(out.depth.data).all() and out.depth.data[0] == 0.0


def test_ray_batch_requires_unit_dirs():
    with pytest.raises(ValueError):
        RayBatch(np.zeros((1, 3)), np.array([[0, 0, 2.0]]))


def test_end_to_end_photometric_gradient():
    cfg = FieldConfig(
        pos_freqs=1, dir_freqs=1, geo_widths=[4] * 3, tex_widths=[4] * 2, feature_size=2, samples_per_ray=4, near=0.5, far=2.0
    )
    w = init_field_weights(cfg, np.random.default_rng(8), np.float64)
    rng = np.random.default_rng(9)
    d = rng.normal(size=(3, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = RayBatch(rng.normal(size=(3, 3)) * 0.1, d)
    gt = rng.uniform(size=(3, 3))

    def f(p):
        ww = dict(w)
        ww["geo.1.w"] = p
        return smooth_l1_photometric(render_rays(batch, ww, cfg).color, gt)

    assert ad.grad_check(f, w["geo.1.w"].data, 1e-6) <= 1e-3


def test_render_rays_shapes():
    cfg = SMALL
    w = weights64()
    batch = RayBatch(np.zeros((5, 3)), np.tile([0, 0, 1.0], (5, 1)))
    with Tape():
        out = render_rays(batch, w, cfg, np.random.default_rng(0))
    assert out.color.shape == (5, 3) and out.sigma.shape == (5, 4) and out.depth.shape == (5,)
