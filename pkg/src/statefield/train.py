"""Optimization loop: one state per batch, AdamW, periodic held-out PSNR and checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from dataclasses import field as dfield
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .field import FieldConfig, RayBatch
from .hyper import HyperConfig
from .losses import (
    LossWeights,
    depth_smoothness,
    manifold_loss,
    mask_bce,
    occlusion_loss,
    smooth_l1_photometric,
    total_loss,
)
from .model import ModulatedField
from .optim import AdamW
from .synthdata.dataset import StateDataset

log = logging.getLogger(__name__)

LOG_HEADER = ["iter", "loss_total", "loss_photo", "loss_mask", "loss_manifold", "loss_occ", "loss_ds", "psnr_holdout"]


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, iteration: int, reason: str, checkpoint: Path | None):
        super().__init__(f"training aborted at iteration {iteration}: {reason}")
        self.iteration = iteration
        self.reason = reason
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    iterations: int = 5000
    rays_per_batch: int = 1024
    patches_per_batch: int = 8
    lr_field: float = 1e-3
    lr_latent: float = 1e-2
    betas: list[float] = dfield(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    use_manifold: bool = True
    use_occ: bool = True
    use_ds: bool = True
    eval_every: int = 1000
    checkpoint_every: int = 1000
    holdout_every: int = 8
    bound_margin: float = 1.05
    dtype: str = "float32"
    loss: LossWeights = dfield(default_factory=LossWeights)
    field: FieldConfig = dfield(default_factory=FieldConfig)
    hyper: HyperConfig = dfield(default_factory=HyperConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.lr_field <= 0 or self.lr_latent <= 0:
            raise ConfigError("learning rates must be positive")
        if self.rays_per_batch < 1:
            raise ConfigError("rays_per_batch must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    def effective_loss(self) -> LossWeights:
        lw = dataclasses.replace(self.loss)
        if not self.use_manifold:
            lw.manifold = 0.0
        if not self.use_occ:
            lw.occ = 0.0
        if not self.use_ds:
            lw.ds = 0.0
        return lw

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Strict parse: unknown keys anywhere are an error."""
        d = dict(d)
        nested = {"loss": LossWeights, "field": FieldConfig, "hyper": HyperConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, sub in nested.items():
            if key in d:
                if not isinstance(d[key], dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = sorted(set(d[key]) - sub_known)
                if bad:
                    raise ConfigError(f"unknown keys in {key!r}: {bad}")
                d[key] = sub(**d[key])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# data preparation and batch sampling


@dataclass
class TrainingArrays:
    colors: np.ndarray  # (T, C, H*W, 3) in [0, 1]
    masks: np.ndarray  # (T, C, H*W) in {0, 1}
    origins: np.ndarray  # (C, H*W, 3)
    dirs: np.ndarray  # (C, H*W, 3)
    width: int
    height: int
    train_cams: np.ndarray
    holdout_cams: np.ndarray


def holdout_split(n_cameras: int, every: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n_cameras)
    if every <= 0 or n_cameras < 2:
        return idx, idx[:0]
    held = idx[idx % every == 0]
    return idx[idx % every != 0], held


def prepare_arrays(ds: StateDataset, holdout_every: int) -> TrainingArrays:
    cams = ds.cameras
    h, w = cams[0].height, cams[0].width
    rays = [c.rays() for c in cams]
    colors = np.stack([[v.rgb.reshape(-1, 3) for v in s.views] for s in ds.states]).astype(np.float32) / 255.0
    masks = np.stack([[v.hit.reshape(-1) for v in s.views] for s in ds.states]).astype(np.float32)
    train, held = holdout_split(len(cams), holdout_every)
    return TrainingArrays(
        colors,
        masks,
        np.stack([r[0] for r in rays]),
        np.stack([r[1] for r in rays]),
        w,
        h,
        train,
        held,
    )


def scene_bounds(ds: StateDataset, margin: float = 1.05) -> tuple[float, float]:
    radius = ds.scene_radius() * margin
    dists = [float(np.linalg.norm(c.position - c.target)) for c in ds.cameras]
    return max(min(dists) - radius, 1e-3), max(dists) + radius


@dataclass
class Batch:
    state: int
    rays: RayBatch
    colors: np.ndarray
    masks: np.ndarray
    n_patches: int
    patch_size: int


def sample_batch(arrays: TrainingArrays, rng: np.random.Generator, n_rays: int, n_patches: int, patch: int) -> Batch:
    """One state, random pixels across training cameras, plus contiguous pixel patches from that state."""
    n_states = arrays.colors.shape[0]
    t = int(rng.integers(n_states))
    cams = rng.choice(arrays.train_cams, size=n_rays)
    pix = rng.integers(arrays.width * arrays.height, size=n_rays)
    if n_patches:
        pcams = rng.choice(arrays.train_cams, size=n_patches)
        y0 = rng.integers(arrays.height - patch + 1, size=n_patches)
        x0 = rng.integers(arrays.width - patch + 1, size=n_patches)
        dy, dx = np.meshgrid(np.arange(patch), np.arange(patch), indexing="ij")
        ppix = ((y0[:, None, None] + dy) * arrays.width + (x0[:, None, None] + dx)).reshape(-1)
        cams = np.concatenate([cams, np.repeat(pcams, patch * patch)])
        pix = np.concatenate([pix, ppix])
    rays = RayBatch(arrays.origins[cams, pix], arrays.dirs[cams, pix], t)
    return Batch(t, rays, arrays.colors[t, cams, pix], arrays.masks[t, cams, pix], n_patches, patch)


# ---------------------------------------------------------------------------
# model <-> checkpoint


def resolve_config(cfg: TrainConfig, ds: StateDataset) -> TrainConfig:
    """Fill dataset-dependent field settings (bounds, background)."""
    near, far = scene_bounds(ds, cfg.bound_margin)
    fcfg = dataclasses.replace(cfg.field, near=near, far=far, background=[float(v) for v in ds.scene.background])
    return dataclasses.replace(cfg, field=fcfg)


def build_model(cfg: TrainConfig, n_states: int) -> ModulatedField:
    return ModulatedField(cfg.field, cfg.hyper, n_states, seed=cfg.seed, dtype=np.dtype(cfg.dtype))


def make_checkpoint(
    model: ModulatedField, opt: AdamW, cfg: TrainConfig, iteration: int, fractions, scene_radius: float | None = None
) -> Checkpoint:
    tensors = {k: t.data.copy() for k, t in model.parameters().items()}
    for k in model.parameters():
        if k in opt.state.m:
            tensors[f"adam.m/{k}"] = opt.state.m[k].copy()
            tensors[f"adam.v/{k}"] = opt.state.v[k].copy()
    meta = {"n_states": model.n_states, "fractions": [float(f) for f in fractions]}
    if scene_radius is not None:
        meta["scene_radius"] = float(scene_radius)
    return Checkpoint(iteration, cfg.to_dict(), tensors, opt.state.step, meta)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[ModulatedField, TrainConfig]:
    cfg = TrainConfig.from_dict(ckpt.config)
    model = build_model(cfg, int(ckpt.meta["n_states"]))
    model.load_parameters(ckpt.params())
    return model, cfg


def load_model(path) -> tuple[ModulatedField, TrainConfig, Checkpoint]:
    ckpt = load_checkpoint(path)
    model, cfg = model_from_checkpoint(ckpt)
    return model, cfg, ckpt


def make_optimizer(model: ModulatedField, cfg: TrainConfig) -> AdamW:
    params = model.parameters()
    lrs = {k: (cfg.lr_latent if k == "latents" else cfg.lr_field) for k in params}
    wds = {k: (0.0 if k == "latents" else cfg.weight_decay) for k in params}
    return AdamW(params, lrs, tuple(cfg.betas), cfg.eps, wds)


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    model: ModulatedField
    config: TrainConfig
    checkpoint: Checkpoint
    history: list[dict]
    checkpoint_path: Path | None = None


def psnr_value(pred: np.ndarray, gt: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(gt, np.float64)) ** 2))
    return 99.0 if mse == 0.0 else min(99.0, 10.0 * math.log10(1.0 / mse))


def holdout_psnr(model: ModulatedField, arrays: TrainingArrays, workers: int = 1) -> float:
    """Mean PSNR over held-out cameras of every seen state."""
    cams = arrays.holdout_cams if len(arrays.holdout_cams) else arrays.train_cams[:1]
    scores = []
    for t in range(model.n_states):
        with ad.no_tape():
            z = model.latent(t)
            weights = model.weights_for(z)
        for c in cams:
            rgb, _, _ = model.render_numpy(arrays.origins[c], arrays.dirs[c], z, workers=workers, weights=weights)
            scores.append(psnr_value(rgb, arrays.colors[t, c]))
    return float(np.mean(scores))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def train(
    ds: StateDataset,
    cfg: TrainConfig,
    out_dir=None,
    *,
    workers: int = 1,
    progress=None,
) -> TrainResult:
    """Train a modulated field on ``ds``. Writes ``checkpoint.ckpt`` and ``metrics.csv`` into ``out_dir``."""
    cfg = resolve_config(cfg, ds)
    loss_w = cfg.effective_loss()
    n_states = ds.n_states
    if loss_w.manifold > 0 and loss_w.knn_k >= n_states:
        raise ConfigError(f"knn_k={loss_w.knn_k} needs more than {n_states} states")
    occ_index = loss_w.resolved_occ_index(cfg.field.samples_per_ray)
    arrays = prepare_arrays(ds, cfg.holdout_every)
    model = build_model(cfg, n_states)
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "checkpoint.ckpt" if out_dir is not None else None
    log_rows: list[dict] = []
    last_saved: Path | None = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def write_log():
        if out_dir is None:
            return
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in log_rows:
            writer.writerow([r["iter"]] + [_fmt(r.get(k)) for k in LOG_HEADER[1:]])
        (out_dir / "metrics.csv").write_text(buf.getvalue())

    def save(iteration):
        nonlocal last_saved
        ckpt = make_checkpoint(model, opt, cfg, iteration, ds.fractions, ds.scene_radius())
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, ckpt)
            last_saved = ckpt_path
        return ckpt

    p = loss_w.patch_size
    n_patch_rays = cfg.patches_per_batch * p * p
    for it in range(1, cfg.iterations + 1):
        batch = sample_batch(arrays, rng, cfg.rays_per_batch, cfg.patches_per_batch, p)
        try:
            with Tape() as tape:
                z = model.latent(batch.state)
                out = model.render(batch.rays, z, rng)
                parts = {
                    "photo": smooth_l1_photometric(out.color, batch.colors),
                    "mask": mask_bce(out.opacity, batch.masks),
                }
                if loss_w.manifold > 0:
                    parts["manifold"] = manifold_loss(model.table.values, None, loss_w.knn_k)
                if loss_w.occ > 0:
                    parts["occ"] = occlusion_loss(out.sigma, occ_index)
                if loss_w.ds > 0 and cfg.patches_per_batch:
                    pd = out.depth[len(batch.rays) - n_patch_rays :]
                    parts["ds"] = depth_smoothness(ad.reshape(pd, (cfg.patches_per_batch, p, p)))
                loss = total_loss(parts, loss_w)
            if not np.isfinite(loss.item()):
                raise NumericError("total loss is not finite")
            opt.zero_grad()
            ad.backward(tape, loss, retain_grads=False)
            opt.step()
        except NumericError as exc:
            write_log()
            log.error("numeric failure at iteration %d: %s", it, exc)
            raise TrainingAborted(it, str(exc), last_saved) from exc
        row = {"iter": it, "loss_total": loss.item()}
        for name in ("photo", "mask", "manifold", "occ", "ds"):
            row[f"loss_{name}"] = parts[name].item() if name in parts else None
        del tape, loss, parts, out, z
        if cfg.eval_every and (it % cfg.eval_every == 0 or it == cfg.iterations):
            row["psnr_holdout"] = holdout_psnr(model, arrays, workers)
            log.info("iter %d loss %.5f holdout psnr %.2f", it, row["loss_total"], row["psnr_holdout"])
        log_rows.append(row)
        if progress is not None:
            progress(row)
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and it != cfg.iterations:
            save(it)
            write_log()

    final = save(cfg.iterations)
    write_log()
    return TrainResult(model, cfg, final, log_rows, last_saved)
