import numpy as np
from PIL import Image

from statefield.evaluate import EvalReport, ImageRow
from statefield.plotting import plot_latents, plot_psnr_vs_beta, plot_training_curves, read_metrics_csv


def is_png(path):
    img = Image.open(path)
    return img.format == "PNG" and min(img.size) > 100


def test_training_curves_skip_empty_columns(tmp_path):
    csv_path = tmp_path / "metrics.csv"
    csv_path.write_text(
        "iter,loss_total,loss_photo,loss_mask,loss_manifold,loss_occ,loss_ds,psnr_holdout\n"
        "1,0.5,0.4,0.3,,0.1,0.01,\n"
        "2,0.4,0.3,0.2,,0.1,0.01,12.5\n"
    )
    cols = read_metrics_csv(csv_path)
    assert cols["iter"] == [1.0, 2.0] and np.isnan(cols["psnr_holdout"][0])
    assert is_png(plot_training_curves(csv_path, tmp_path / "curves.png"))


def test_psnr_vs_beta_and_latents_are_byte_stable(tmp_path):
    rows = [ImageRow("seen", "0", None, 0, 25.0, 0.9), ImageRow("interp", "eval0", 0.0, 0, 20.0, 0.8)]
    rows += [ImageRow("interp", "eval0", 0.5, 0, 22.0, 0.85), ImageRow("interp", "eval0", 1.0, 0, 19.0, 0.8)]
    rep = EvalReport(rows, meta={"target": "eval0"})
    a = plot_psnr_vs_beta(rep, tmp_path / "a.png")
    b = plot_psnr_vs_beta(rep, tmp_path / "b.png")
    assert is_png(a) and a.read_bytes() == b.read_bytes()

    z = np.random.default_rng(0).normal(size=(6, 8))
    p = plot_latents(z, np.linspace(0, 1, 6), tmp_path / "z.png", groups=[0, 0, 0, 1, 1, 1])
    assert is_png(p)
    assert is_png(plot_latents(z[:1], [0.0], tmp_path / "one.png"))
