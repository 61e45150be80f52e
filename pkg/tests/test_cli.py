import csv
import importlib
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from statefield import autodiff as ad
from statefield.checkpoint import load_checkpoint
from statefield.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from statefield.hyper import read_latents_csv
from statefield.synthdata import read_dataset

# the package exports train(), which shadows the submodule attribute
train_mod = importlib.import_module("statefield.train")

TINY = {
    "rays_per_batch": 64,
    "patches_per_batch": 1,
    "eval_every": 0,
    "checkpoint_every": 0,
    "field": {"pos_freqs": 2, "dir_freqs": 1, "geo_widths": [8, 8, 8], "tex_widths": [8, 8], "feature_size": 3, "samples_per_ray": 8},
    "hyper": {"latent_dim": 8, "rank": 2, "hidden": 8},
}


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["datagen", "--preset", "hinge-box", "--states", "3", "--cameras", "8", "--size", "16", "--points", "300", "--out", str(data)]) == 0
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    run = root / "run"
    assert main(["train", "--dataset", str(data), "--out", str(run), "--config", str(cfg), "--iters", "3"]) == 0
    return root, data, cfg, run / "checkpoint.ckpt"


# -- datagen -----------------------------------------------------------------


def test_datagen_contract(tmp_path):
    out = tmp_path / "d"
    assert main(["datagen", "--preset", "hinge-box", "--states", "4", "--cameras", "40", "--size", "12", "--points", "100", "--out", str(out)]) == 0
    ds = read_dataset(out)
    assert ds.n_states == 4 and len(ds.cameras) == 40
    assert len(ds.eval_states) == 1 and ds.eval_states[0].fraction == 0.5 and ds.eval_states[0].parts == [0.5]


def test_datagen_two_part_fractions_and_determinism(tmp_path):
    args = ["datagen", "--preset", "two-part", "--states", "3", "--cameras", "4", "--size", "12", "--points", "50", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    ds = read_dataset(tmp_path / "a")
    assert all(len(s.parts) == 2 for s in ds.states)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_bad_preset_is_usage_error(tmp_path, capsys):
    assert main(["datagen", "--preset", "teapot", "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "teapot" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_flags():
    assert main(["fly"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["--workers", "0", "export-latents", "--checkpoint", "x", "--out", "y"]) == EXIT_USAGE


# -- train -------------------------------------------------------------------


def test_train_missing_dataset_is_usage_error(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "does not exist" in capsys.readouterr().err


def test_train_config_typo_is_usage_error(workspace, tmp_path):
    _, data, _, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"lr_feild": 0.1}))
    assert main(["train", "--dataset", str(data), "--out", str(tmp_path / "o"), "--config", str(bad)]) == EXIT_USAGE


def test_train_zero_iters_writes_init_checkpoint(workspace, tmp_path):
    _, data, cfg, _ = workspace
    assert main(["train", "--dataset", str(data), "--out", str(tmp_path), "--config", str(cfg), "--iters", "0"]) == 0
    ck = load_checkpoint(tmp_path / "checkpoint.ckpt")
    assert ck.iteration == 0 and ck.optimizer_step == 0


def test_ablation_flags_map_to_config(workspace, tmp_path):
    _, data, cfg, _ = workspace
    argv = ["train", "--dataset", str(data), "--out", str(tmp_path), "--config", str(cfg), "--iters", "1"]
    assert main(argv + ["--no-manifold", "--no-occ", "--no-ds", "--pe", "--seed", "7"]) == 0
    conf = load_checkpoint(tmp_path / "checkpoint.ckpt").config
    assert conf["use_manifold"] is False and conf["use_occ"] is False and conf["use_ds"] is False
    assert conf["hyper"]["use_pe"] is True and conf["seed"] == 7


def test_numeric_abort_exit_code(workspace, tmp_path, monkeypatch):
    _, data, cfg, _ = workspace
    real = train_mod.smooth_l1_photometric
    monkeypatch.setattr(train_mod, "smooth_l1_photometric", lambda p, g, *a, **k: real(p, g) * ad.Tensor(np.array(np.nan, np.float32)))
    assert main(["train", "--dataset", str(data), "--out", str(tmp_path), "--config", str(cfg), "--iters", "2"]) == EXIT_NUMERIC


# -- render / interp ---------------------------------------------------------


def test_render_writes_frames(workspace, tmp_path):
    _, data, _, ck = workspace
    assert main(["render", "--checkpoint", str(ck), "--state", "1", "--dataset", str(data), "--cameras", "0,2", "--out", str(tmp_path)]) == 0
    frames = sorted(tmp_path.glob("frame_*.png"))
    assert len(frames) == 2 and np.asarray(Image.open(frames[0])).shape == (16, 16, 3)
    assert main(["render", "--checkpoint", str(ck), "--state", "9", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["render", "--checkpoint", str(ck), "--state", "0", "--dataset", str(data), "--cameras", "99", "--out", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.parametrize("alpha,betas", [(2, [0.0, 0.5, 1.0]), (4, [0.0, 0.25, 0.5, 0.75, 1.0])])
def test_interp_frame_counts(workspace, tmp_path, alpha, betas):
    _, data, _, ck = workspace
    argv = ["interp", "--checkpoint", str(ck), "--t-a", "0", "--t-b", "2", "--alpha", str(alpha), "--dataset", str(data), "--cameras", "0,1"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "frames.csv").open()))
    assert [float(r["beta"]) for r in rows] == betas
    for cam in ("cam_000", "cam_001"):
        assert len(list((tmp_path / cam).glob("frame_*.png"))) == alpha + 1


def test_interp_endpoints_equal_render(workspace, tmp_path):
    _, data, _, ck = workspace
    cams = ["--dataset", str(data), "--cameras", "3"]
    assert main(["interp", "--checkpoint", str(ck), "--t-a", "0", "--t-b", "2", "--alpha", "2", "--out", str(tmp_path / "i")] + cams) == 0
    assert main(["render", "--checkpoint", str(ck), "--state", "0", "--out", str(tmp_path / "r0")] + cams) == 0
    assert main(["render", "--checkpoint", str(ck), "--state", "2", "--out", str(tmp_path / "r2")] + cams) == 0
    assert (tmp_path / "i/cam_000/frame_000.png").read_bytes() == (tmp_path / "r0/frame_000.png").read_bytes()
    assert (tmp_path / "i/cam_000/frame_002.png").read_bytes() == (tmp_path / "r2/frame_000.png").read_bytes()


def test_interp_rejects_bad_alpha_and_states(workspace, tmp_path):
    _, _, _, ck = workspace
    base = ["interp", "--checkpoint", str(ck), "--out", str(tmp_path)]
    assert main(base + ["--t-a", "0", "--t-b", "1", "--alpha", "1"]) == EXIT_USAGE
    assert main(base + ["--t-a", "0", "--t-b", "5"]) == EXIT_USAGE


# -- eval / export -----------------------------------------------------------


def test_eval_report_and_determinism(workspace, tmp_path):
    _, data, _, ck = workspace
    argv = ["eval", "--checkpoint", str(ck), "--dataset", str(data), "--grid", "16", "--threshold", "0", "--points", "200", "--export-latents"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    a = tmp_path / "a"
    assert (a / "metrics.csv").read_text().splitlines()[0] == "state,beta,camera,psnr,ssim"
    assert (a / "chamfer.csv").read_text().splitlines()[0] == "state,beta,chamfer"
    assert (a / "psnr_vs_beta.png").exists() and (a / "latents.png").exists()
    z, fractions = read_latents_csv((a / "latents.csv").read_text())
    assert z.shape[0] == 3 and len(fractions) == 3
    assert tree_bytes(a) == tree_bytes(tmp_path / "b")


def test_export_latents_matches_checkpoint(workspace, tmp_path):
    _, _, _, ck = workspace
    out = tmp_path / "z.csv"
    assert main(["export-latents", "--checkpoint", str(ck), "--out", str(out)]) == 0
    z, _ = read_latents_csv(out.read_text())
    np.testing.assert_array_equal(z, load_checkpoint(ck).tensors["latents"].astype(np.float64))


def test_corrupt_checkpoint_is_io_error(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"LEIA\x01\x00\x00\x00garbage")
    assert main(["export-latents", "--checkpoint", str(bad), "--out", str(tmp_path / "z.csv")]) == EXIT_IO
    assert "I/O error" in capsys.readouterr().err


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "statefield", "--help"], capture_output=True, text=True)
    assert res.returncode == EXIT_OK
    for cmd in ("datagen", "train", "render", "interp", "eval", "export-latents"):
        assert cmd in res.stdout
