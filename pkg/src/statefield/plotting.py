"""Matplotlib figures written next to CSV/JSON reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def read_metrics_csv(path) -> dict[str, list]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols: dict[str, list] = {k: [] for k in (rows[0].keys() if rows else [])}
    for r in rows:
        for k, v in r.items():
            cols[k].append(float(v) if v not in ("", None) else np.nan)
    return cols


def plot_training_curves(metrics_csv, out_path) -> Path:
    cols = read_metrics_csv(metrics_csv)
    fig, (ax_loss, ax_psnr) = plt.subplots(1, 2, figsize=(10, 4))
    it = np.asarray(cols.get("iter", []))
    for name in ("loss_total", "loss_photo", "loss_mask", "loss_manifold", "loss_occ", "loss_ds"):
        y = np.asarray(cols.get(name, []))
        if y.size and np.any(np.isfinite(y)):
            ax_loss.plot(it, y, label=name.removeprefix("loss_"), lw=1)
    ax_loss.set_yscale("log")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    p = np.asarray(cols.get("psnr_holdout", []))
    ok = np.isfinite(p)
    ax_psnr.plot(it[ok], p[ok], marker="o")
    ax_psnr.set_xlabel("iteration")
    ax_psnr.set_ylabel("held-out PSNR (dB)")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_psnr_vs_beta(report, out_path) -> Path:
    """Interpolated PSNR per beta with seen-state means as horizontal references."""
    betas = sorted({r.beta for r in report.rows if r.kind == "interp"})
    means = [report.mean("psnr", "interp", beta=b) for b in betas]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(betas, means, marker="o", label=f"vs state {report.meta.get('target', '?')}")
    for state in sorted({r.state for r in report.rows if r.kind == "seen"}):
        ax.axhline(report.mean("psnr", "seen", state=state), ls=":", lw=1, color="gray")
    ax.set_xlabel("beta")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_latents(latents, fractions, out_path, groups=None) -> Path:
    """2-D PCA projection of the latent table, consecutive states joined."""
    z = np.asarray(latents, dtype=np.float64)
    centered = z - z.mean(axis=0)
    if len(z) > 1:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        comps = vt[: min(2, len(vt))]
        xy = centered @ comps.T
    else:
        xy = np.zeros((len(z), 2))
    if xy.shape[1] < 2:
        xy = np.pad(xy, ((0, 0), (0, 2 - xy.shape[1])))
    fig, ax = plt.subplots(figsize=(5, 4))
    groups = np.zeros(len(z), dtype=int) if groups is None else np.asarray(groups)
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        ax.plot(xy[idx, 0], xy[idx, 1], marker="o", label=f"group {g}")
    for i, f in enumerate(fractions):
        ax.annotate(f"{i}:{f:.2f}", xy[i], fontsize=7)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    if len(np.unique(groups)) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)
