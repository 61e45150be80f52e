import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation
from skimage.metrics import structural_similarity

from statefield.evaluate import (
    PSNR_CAP,
    SSIM_C1,
    EmptyFieldError,
    EvalError,
    AblationResult,
    chamfer,
    eval_interpolation,
    extract_points,
    median_by_variant,
    near_surface_fraction,
    psnr,
    scene_cube,
    ssim,
    write_frames,
)
from statefield.field import FieldConfig
from statefield.hyper import HyperConfig
from statefield.model import ModulatedField
from statefield.synthdata import generate_dataset

TINY_FIELD = FieldConfig(pos_freqs=2, dir_freqs=1, geo_widths=[8] * 3, tex_widths=[8] * 2, feature_size=3, samples_per_ray=8)
TINY_HYPER = HyperConfig(latent_dim=8, rank=2, hidden=8)


def tiny_model(n_states=3, zero=False):
    m = ModulatedField(TINY_FIELD, TINY_HYPER, n_states, seed=0, dtype=np.float64)
    if zero:
        for t in m.base.values():
            t.data[...] = 0.0
    return m


@pytest.fixture(scope="module")
def tiny_ds():
    return generate_dataset("drawer-box", n_states=3, n_cameras=8, width=16, height=16, n_points=200, seed=0)


# -- psnr --------------------------------------------------------------------


def test_psnr_examples():
    gt = np.zeros((4, 4, 3))
    assert psnr(gt + 0.1, gt) == pytest.approx(20.0, abs=1e-9)
    assert psnr(gt, gt) == PSNR_CAP
    assert psnr(np.ones((4, 4, 3)), gt) == 0.0
    with pytest.raises(EvalError):
        psnr(gt, gt[:2])


def test_psnr_decreases_with_noise_variance():
    rng = np.random.default_rng(0)
    gt = rng.uniform(0.2, 0.8, size=(32, 32, 3))
    noise = rng.normal(size=gt.shape)
    vals = [psnr(gt + s * noise, gt) for s in (0.01, 0.02, 0.04, 0.08, 0.16)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# -- ssim --------------------------------------------------------------------


def test_ssim_identical_is_one():
    img = np.random.default_rng(0).uniform(size=(20, 24, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_inverted_binary_is_negative():
    img = (np.random.default_rng(1).uniform(size=(16, 16)) > 0.5).astype(float)
    assert ssim(1.0 - img, img) < 0


def test_ssim_constant_offset_closed_form():
    a, b = 0.3, 0.4
    expected = (2 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1)
    assert ssim(np.full((12, 12), a), np.full((12, 12), b)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(size=(23, 31, 3))
    pred = np.clip(gt + rng.normal(scale=0.1, size=gt.shape), 0, 1)
    ref = structural_similarity(
        pred.mean(-1), gt.mean(-1), gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0
    )
    assert ssim(pred, gt) == pytest.approx(ref, abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(EvalError):
        ssim(np.zeros((10, 12)), np.zeros((10, 12)))


# -- chamfer -----------------------------------------------------------------


def brute_chamfer(p, q):
    d = np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1)
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def test_chamfer_examples():
    p = np.random.default_rng(0).normal(size=(10, 3))
    assert chamfer(p, p) == 0.0
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    with pytest.raises(EvalError):
        chamfer(np.zeros((0, 3)), p)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 512), st.integers(1, 512), st.integers(0, 2**31))
def test_chamfer_matches_brute_force_and_is_symmetric(n, m, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    c = chamfer(p, q)
    assert c == pytest.approx(brute_chamfer(p, q), rel=1e-12, abs=1e-12)
    assert c == pytest.approx(chamfer(q, p), abs=1e-12)
    assert c > 0


def test_chamfer_rigid_invariance():
    rng = np.random.default_rng(3)
    p, q = rng.normal(size=(100, 3)), rng.normal(size=(80, 3))
    rot = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    shift = np.array([5.0, -2.0, 0.5])
    assert chamfer(p @ rot.T + shift, q @ rot.T + shift) == pytest.approx(chamfer(p, q), abs=1e-9)


# -- point extraction --------------------------------------------------------


def test_zero_field_below_threshold_is_empty():
    m = tiny_model(zero=True)
    with pytest.raises(EmptyFieldError):
        extract_points(m, m.latent(0), scene_cube(1.0), n=100, grid_res=16, threshold=1.0)


def test_threshold_zero_fills_bounds_uniformly():
    m = tiny_model(zero=True)
    lo, hi = scene_cube(1.0)
    pts = extract_points(m, m.latent(0), (lo, hi), n=20000, grid_res=16, threshold=0.0)
    assert pts.shape == (20000, 3)
    assert np.all(pts >= lo) and np.all(pts <= hi)
    # each octant should hold about an eighth of the points
    octant = (pts > 0).astype(int) @ [1, 2, 4]
    np.testing.assert_allclose(np.bincount(octant, minlength=8) / 20000, 1 / 8, atol=0.01)
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=0.02)


def test_extraction_validates_grid_and_is_seeded():
    m = tiny_model(zero=True)
    with pytest.raises(EvalError):
        extract_points(m, m.latent(0), scene_cube(1.0), grid_res=8, threshold=0.0)
    a = extract_points(m, m.latent(0), scene_cube(1.0), n=50, grid_res=16, threshold=0.0, seed=4)
    b = extract_points(m, m.latent(0), scene_cube(1.0), n=50, grid_res=16, threshold=0.0, seed=4)
    np.testing.assert_array_equal(a, b)


def test_near_surface_fraction():
    surface = np.array([[0.0, 0.0, 0.0]])
    pts = np.array([[0.05, 0, 0], [0.5, 0, 0], [0, 0.09, 0], [1, 1, 1]])
    assert near_surface_fraction(pts, surface, 0.1) == 0.5


# -- interpolation reports ---------------------------------------------------


def test_endpoint_betas_reproduce_seen_metrics(tiny_ds):
    m = tiny_model()
    kw = dict(cameras=[0, 3], with_chamfer=False)
    for t, beta in ((0, 0.0), (2, 1.0)):
        rep = eval_interpolation(m, tiny_ds, (0, 2), betas=(beta,), target=tiny_ds.states[t].id, **kw)
        seen = [(r.camera, r.psnr, r.ssim) for r in rep.select("seen", tiny_ds.states[t].id)]
        interp = [(r.camera, r.psnr, r.ssim) for r in rep.select("interp", beta=beta)]
        assert seen == interp


def test_report_means_csv_and_summary(tiny_ds, tmp_path):
    m = tiny_model()
    extract = dict(n=200, grid_res=16, threshold=0.0)
    rep = eval_interpolation(m, tiny_ds, betas=(0.0, 0.5), cameras=[0, 1], extract=extract, frames_dir=tmp_path / "frames")
    rows = rep.select("interp", beta=0.5)
    assert rep.mean("psnr", "interp", beta=0.5) == pytest.approx(np.mean([r.psnr for r in rows]), abs=1e-9)
    text = rep.images_csv()
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == "state,beta,camera,psnr,ssim"
    assert len(parsed) == 3 * 2 + 2 * 2
    assert parsed[0]["beta"] == "" and float(parsed[-1]["beta"]) == 0.5
    assert len(rep.chamfer) == 3 + 2 and all(c["chamfer"] >= 0 for c in rep.chamfer)
    paths = rep.write(tmp_path / "report")
    summary = json.loads(paths[2].read_text())
    assert summary["meta"]["target"] == str(tiny_ds.eval_states[0].id)
    for e in summary["images"]:
        sel = rep.select(e["kind"], e["state"], e["beta"])
        assert e["psnr_mean"] == pytest.approx(np.mean([r.psnr for r in sel]), abs=1e-9)
    assert sorted(p.name for p in (tmp_path / "frames" / "beta_0.500").iterdir()) == ["frame_000.png", "frame_001.png"]


def test_workers_do_not_change_results(tiny_ds):
    m = tiny_model()
    a = eval_interpolation(m, tiny_ds, betas=(0.5,), cameras=[0], include_seen=False, with_chamfer=False)
    b = eval_interpolation(m, tiny_ds, betas=(0.5,), cameras=[0], include_seen=False, with_chamfer=False, workers=3)
    assert a.rows == b.rows


def test_missing_ground_truth_is_error(tiny_ds):
    with pytest.raises(EvalError):
        eval_interpolation(tiny_model(), tiny_ds, target="no-such-state", with_chamfer=False)


def test_write_frames_pngs(tmp_path):
    from PIL import Image

    paths = write_frames([np.zeros((4, 5, 3)), np.ones((4, 5, 3))], tmp_path)
    assert [p.name for p in paths] == ["frame_000.png", "frame_001.png"]
    assert np.asarray(Image.open(paths[1])).min() == 255


def test_median_by_variant():
    res = [AblationResult("full", s, v) for s, v in enumerate([20.0, 25.0, 21.0])] + [AblationResult("no-pe", 0, 18.0)]
    assert median_by_variant(res) == {"full": 21.0, "no-pe": 18.0}
