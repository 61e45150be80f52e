"""Image and geometry metrics, interpolated-state evaluation and ablation sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from . import autodiff as ad
from .hyper import interpolate_latent
from .model import ModulatedField
from .synthdata.dataset import StateDataset, StateRecord

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class EvalError(ValueError):
    pass


class EmptyFieldError(EvalError):
    pass


# ---------------------------------------------------------------------------
# metrics


def psnr(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvalError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(pred, gt) -> float:
    """Single-scale SSIM on the channel-mean image, averaged over all full-window positions."""
    x = _gray(pred)
    y = _gray(gt)
    if x.shape != y.shape:
        raise EvalError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise EvalError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    w = _gaussian_window()

    def filt(a):
        return convolve2d(a, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def chamfer(p, q) -> float:
    """mean_p min_q |p-q|^2 + mean_q min_p |p-q|^2."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(q) == 0:
        raise EvalError("chamfer needs two nonempty point sets")
    dpq, _ = cKDTree(q).query(p)
    dqp, _ = cKDTree(p).query(q)
    return float(np.mean(dpq**2) + np.mean(dqp**2))


# ---------------------------------------------------------------------------
# geometry extraction


def scene_cube(radius: float, margin: float = 1.05) -> tuple[np.ndarray, np.ndarray]:
    r = radius * margin
    return np.full(3, -r), np.full(3, r)


def extract_points(
    model: ModulatedField,
    z,
    bounds,
    n: int = 10000,
    grid_res: int = 128,
    threshold: float = 5.0,
    seed: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Sample ``n`` points from grid cells whose center density exceeds ``threshold``."""
    if grid_res < 16:
        raise EvalError("grid resolution must be at least 16")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    cell = (hi - lo) / grid_res
    axes = [lo[i] + (np.arange(grid_res) + 0.5) * cell[i] for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    sigma = model.density(centers, z, workers=workers)
    kept = np.flatnonzero(sigma > threshold)
    if kept.size == 0:
        raise EmptyFieldError(f"no grid cell has density above {threshold}")
    rng = np.random.default_rng(seed)
    pick = kept[rng.integers(kept.size, size=n)]
    jitter = rng.uniform(-0.5, 0.5, size=(n, 3)) * cell
    return centers[pick] + jitter


def near_surface_fraction(points, surface, tol: float) -> float:
    d, _ = cKDTree(np.asarray(surface, dtype=np.float64)).query(np.asarray(points, dtype=np.float64))
    return float(np.mean(d <= tol))


# ---------------------------------------------------------------------------
# reports


@dataclass
class ImageRow:
    kind: str  # "seen" or "interp"
    state: str
    beta: float | None
    camera: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[ImageRow] = field(default_factory=list)
    chamfer: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def select(self, kind: str, state=None, beta=None) -> list[ImageRow]:
        out = [r for r in self.rows if r.kind == kind]
        if state is not None:
            out = [r for r in out if r.state == str(state)]
        if beta is not None:
            out = [r for r in out if r.beta == beta]
        return out

    def mean(self, metric: str, kind: str, state=None, beta=None) -> float:
        rows = self.select(kind, state, beta)
        if not rows:
            raise EvalError(f"no {kind} rows for state={state} beta={beta}")
        return float(np.mean([getattr(r, metric) for r in rows]))

    def summary(self) -> dict:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.kind, r.state, r.beta), []).append(r)
        entries = []
        for (kind, state, beta), rows in groups.items():
            entries.append(
                {
                    "kind": kind,
                    "state": state,
                    "beta": beta,
                    "cameras": len(rows),
                    "psnr_mean": float(np.mean([r.psnr for r in rows])),
                    "ssim_mean": float(np.mean([r.ssim for r in rows])),
                }
            )
        return {"meta": self.meta, "images": entries, "chamfer": self.chamfer}

    def images_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "beta", "camera", "psnr", "ssim"])
        # seen-state rows leave beta empty
        for r in self.rows:
            w.writerow([r.state, "" if r.beta is None else repr(r.beta), r.camera, repr(r.psnr), repr(r.ssim)])
        return buf.getvalue()

    def chamfer_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "beta", "chamfer"])
        for c in self.chamfer:
            w.writerow([c["state"], "" if c["beta"] is None else repr(c["beta"]), repr(c["chamfer"])])
        return buf.getvalue()

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "metrics.csv", out / "chamfer.csv", out / "summary.json"]
        paths[0].write_text(self.images_csv())
        paths[1].write_text(self.chamfer_csv())
        paths[2].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return paths


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_frames(frames: list[np.ndarray], directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(frames):
        p = d / f"frame_{i:03d}.png"
        Image.fromarray(to_uint8(img)).save(p, optimize=False)
        paths.append(p)
    return paths


def eval_cameras(ds: StateDataset, holdout_every: int) -> list[int]:
    from .train import holdout_split

    _, held = holdout_split(len(ds.cameras), holdout_every)
    return [int(c) for c in (held if len(held) else range(len(ds.cameras)))]


def _score_views(model, z, ds: StateDataset, gt: StateRecord, cams, workers):
    frames, scores = [], []
    with ad.no_tape():
        weights = model.weights_for(z)
    for c in cams:
        cam = ds.cameras[c]
        origins, dirs = cam.rays()
        rgb, _, _ = model.render_numpy(origins, dirs, z, workers=workers, weights=weights)
        img = rgb.reshape(cam.height, cam.width, 3)
        target = gt.views[c].rgb.astype(np.float64) / 255.0
        frames.append(img)
        scores.append((c, psnr(img, target), ssim(img, target)))
    return frames, scores


def _lookup_gt(ds: StateDataset, sid) -> StateRecord:
    try:
        return ds.state(sid)
    except (KeyError, IndexError, ValueError) as exc:
        raise EvalError(f"dataset has no ground truth for state {sid!r}") from exc


def eval_interpolation(
    model: ModulatedField,
    ds: StateDataset,
    endpoints: tuple[int, int] | None = None,
    betas=(0.0, 0.5, 1.0),
    *,
    target=None,
    cameras=None,
    holdout_every: int = 8,
    include_seen: bool = True,
    with_chamfer: bool = True,
    extract: dict | None = None,
    frames_dir=None,
    workers: int = 1,
    meta: dict | None = None,
) -> EvalReport:
    """Render interpolated latents between two seen states and score them against ``target`` ground truth.

    ``target`` defaults to the dataset's first evaluation state. Seen states are scored against their
    own ground truth when ``include_seen`` is set. Frames go to ``frames_dir/beta_<b>/`` and
    ``frames_dir/seen_<id>/`` when given.
    """
    if endpoints is None:
        endpoints = (0, ds.n_states - 1)
    a, b = endpoints
    if target is None:
        if not ds.eval_states:
            raise EvalError("dataset has no evaluation state; pass target explicitly")
        target = ds.eval_states[0].id
    gt = _lookup_gt(ds, target)
    cams = list(cameras) if cameras is not None else eval_cameras(ds, holdout_every)
    bounds = scene_cube(ds.scene_radius())
    extract = dict(extract or {})
    report = EvalReport(
        meta={
            "endpoints": [int(a), int(b)],
            "target": str(target),
            "betas": [float(x) for x in betas],
            "cameras": cams,
            **(meta or {}),
        }
    )
    frames_dir = Path(frames_dir) if frames_dir is not None else None

    if include_seen:
        for t in range(ds.n_states):
            rec = ds.states[t]
            z = model.latent(t)
            frames, scores = _score_views(model, z, ds, rec, cams, workers)
            report.rows += [ImageRow("seen", str(rec.id), None, c, p, s) for c, p, s in scores]
            if frames_dir is not None:
                write_frames(frames, frames_dir / f"seen_{rec.id}")
            if with_chamfer:
                pts = extract_points(model, z, bounds, workers=workers, **extract)
                report.chamfer.append({"kind": "seen", "state": str(rec.id), "beta": None, "chamfer": chamfer(pts, rec.points)})

    za, zb = model.latent(a), model.latent(b)
    for beta in betas:
        beta = float(beta)
        with ad.no_tape():
            z = interpolate_latent(za, zb, beta)
        frames, scores = _score_views(model, z, ds, gt, cams, workers)
        report.rows += [ImageRow("interp", str(gt.id), beta, c, p, s) for c, p, s in scores]
        if frames_dir is not None:
            write_frames(frames, frames_dir / f"beta_{beta:.3f}")
        if with_chamfer:
            pts = extract_points(model, z, bounds, workers=workers, **extract)
            report.chamfer.append({"kind": "interp", "state": str(gt.id), "beta": beta, "chamfer": chamfer(pts, gt.points)})
    return report


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationResult:
    variant: str
    seed: int
    mid_psnr: float


def mid_state_psnr(model: ModulatedField, ds: StateDataset, cameras=None, holdout_every: int = 8) -> float:
    """Mean PSNR of the beta=0.5 extreme-state interpolation against the first evaluation state."""
    rep = eval_interpolation(
        model, ds, betas=(0.5,), cameras=cameras, holdout_every=holdout_every, include_seen=False, with_chamfer=False
    )
    return rep.mean("psnr", "interp")


def run_ablation(
    datasets: dict,
    variants: dict,
    base,
    seeds=(0, 1, 2),
    *,
    workers: int = 1,
    progress=None,
) -> list[AblationResult]:
    """Train every (variant, seed) pair and score its interpolated mid-state.

    ``datasets`` maps a dataset key to a StateDataset; ``variants`` maps a variant name to
    ``(dataset_key, overrides)`` where overrides are TrainConfig field replacements.
    """
    from .train import train

    results = []
    for name, (key, overrides) in variants.items():
        ds = datasets[key]
        for seed in seeds:
            cfg = dataclasses.replace(base, seed=int(seed), **overrides)
            res = train(ds, cfg, None, workers=workers)
            score = mid_state_psnr(res.model, ds, holdout_every=cfg.holdout_every)
            results.append(AblationResult(name, int(seed), score))
            if progress is not None:
                progress(results[-1])
    return results


def median_by_variant(results: list[AblationResult]) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in results:
        out.setdefault(r.variant, []).append(r.mid_psnr)
    return {k: float(np.median(v)) for k, v in out.items()}
