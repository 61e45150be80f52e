"""Training objectives and their weighted combination."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ShapeError, Tensor

BCE_EPS = 1e-7
LOSS_NAMES = ("photo", "mask", "manifold", "occ", "ds")


class LossConfigError(ValueError):
    pass


@dataclass
class LossWeights:
    photo: float = 1.0
    mask: float = 0.1
    manifold: float = 0.01
    occ: float = 0.01
    ds: float = 0.001
    knn_k: int = 2
    occ_index: int | None = None  # defaults to floor(0.15 * samples_per_ray)
    patch_size: int = 4

    def __post_init__(self):
        for name in LOSS_NAMES:
            if getattr(self, name) < 0:
                raise LossConfigError(f"loss weight {name} must be nonnegative")
        if self.knn_k < 1:
            raise LossConfigError("knn_k must be at least 1")
        if self.patch_size < 2:
            raise LossConfigError("patch side must be at least 2")

    def resolved_occ_index(self, samples_per_ray: int) -> int:
        m = int(math.floor(0.15 * samples_per_ray)) if self.occ_index is None else self.occ_index
        if not 0 <= m <= samples_per_ray:
            raise LossConfigError(f"occlusion index {m} outside [0, {samples_per_ray}]")
        return m

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype if like is not None else None))


def smooth_l1_photometric(pred, gt, reduction: str = "mean") -> Tensor:
    """Per-channel SmoothL1 summed over channels and rays; divided by the ray count in mean mode."""
    pred = _t(pred)
    gt = _t(gt, pred)
    if pred.shape != gt.shape:
        raise ShapeError(f"smooth_l1: prediction {pred.shape} vs target {gt.shape}")
    a = ad.abs_(pred - gt)
    small = ad.minimum(a, 1.0)
    per = 0.5 * ad.square(small) + (a - small)
    total = ad.sum_(per)
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total * (1.0 / pred.shape[0])


def mask_bce(opacity, mask) -> Tensor:
    # float32 weight sums can overshoot 1 by a few ulps
    o = ad.minimum(ad.maximum(_t(opacity), 0.0), 1.0)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=o.dtype)
    pos = ad.log(o + BCE_EPS) * m
    neg = ad.log((1.0 + BCE_EPS) - o) * (1.0 - m)
    return -ad.mean(pos + neg)


def nearest_neighbors(values: np.ndarray, i: int, k: int) -> np.ndarray:
    """Indices of the k nearest other rows by Euclidean distance (ties broken by index)."""
    d = np.sum((values - values[i]) ** 2, axis=1)
    d[i] = np.inf
    return np.argsort(d, kind="stable")[:k]


def manifold_loss(latents, selected=None, knn_k: int = 2) -> Tensor:
    """Mean over selected latents of the mean squared distance to their knn_k nearest other latents."""
    z = _t(latents)
    n = z.shape[0]
    if knn_k >= n:
        raise LossConfigError(f"knn_k={knn_k} needs at least {knn_k + 1} latents, have {n}")
    ids = list(range(n)) if selected is None else list(selected)
    vals = z.data
    terms = []
    for i in ids:
        nbrs = nearest_neighbors(vals, i, knn_k)
        diff = ad.broadcast(z[i], (knn_k, z.shape[1])) - z[nbrs]
        terms.append(ad.sum_(ad.square(diff)) * (1.0 / knn_k))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(ids))


def occlusion_loss(sigma, occ_index: int) -> Tensor:
    """Per ray (1/Ns) * sum of the first ``occ_index`` densities, averaged over rays."""
    s = _t(sigma)
    n = s.shape[1]
    if not 0 <= occ_index <= n:
        raise LossConfigError(f"occlusion index {occ_index} outside [0, {n}]")
    mask = np.zeros(n, dtype=s.dtype)
    mask[:occ_index] = 1.0
    return ad.mean(ad.sum_(s * mask, axis=1)) * (1.0 / n)


def depth_smoothness(patches) -> Tensor:
    """Sum of squared vertical and horizontal neighbour differences per patch, averaged over patches.

    ``patches`` is (P, side, side) or a single (side, side) patch.
    """
    d = _t(patches)
    if d.ndim == 2:
        d = ad.reshape(d, (1,) + d.shape)
    if d.ndim != 3 or d.shape[1] != d.shape[2]:
        raise ShapeError(f"depth patches must be square, got {d.shape}")
    side = d.shape[1]
    if side < 2:
        raise ShapeError("depth patch side must be at least 2")
    core = d[:, : side - 1, : side - 1]
    down = d[:, 1:, : side - 1]
    right = d[:, : side - 1, 1:]
    per = ad.square(core - down) + ad.square(core - right)
    return ad.sum_(per) * (1.0 / d.shape[0])


def total_loss(parts: dict, weights: LossWeights) -> Tensor:
    """Weighted sum; parts whose weight is zero are skipped."""
    total = None
    for name in LOSS_NAMES:
        lam = getattr(weights, name)
        if lam == 0 or name not in parts:
            continue
        part = parts[name]
        value = part.data if isinstance(part, Tensor) else np.asarray(part)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"loss part {name!r} is not finite")
        term = part * lam
        total = term if total is None else total + term
    if total is None:
        raise LossConfigError("no loss part has a positive weight")
    return total
