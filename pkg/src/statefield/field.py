"""Base radiance field, frequency encodings and the stratified volume renderer."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEPTH_EPS = 1e-8


class FieldConfigError(ValueError):
    pass


@dataclass
class FieldConfig:
    pos_freqs: int = 6
    dir_freqs: int = 2
    geo_widths: list[int] = field(default_factory=lambda: [64, 64, 64])
    tex_widths: list[int] = field(default_factory=lambda: [64, 64])
    feature_size: int = 15
    samples_per_ray: int = 64
    near: float = 2.0
    far: float = 4.0
    background: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def __post_init__(self):
        widths = list(self.geo_widths) + list(self.tex_widths)
        if not widths or len(set(widths)) != 1:
            raise FieldConfigError(f"all block widths must be equal, got {widths}")
        if not self.near < self.far:
            raise FieldConfigError("near bound must be below far bound")
        if self.samples_per_ray < 1:
            raise FieldConfigError("samples_per_ray must be at least 1")
        if min(self.pos_freqs, self.dir_freqs) < 0:
            raise FieldConfigError("frequency counts must be nonnegative")

    @property
    def width(self) -> int:
        return self.geo_widths[0]

    @property
    def pos_dim(self) -> int:
        return 3 * (2 * self.pos_freqs + 1)

    @property
    def dir_dim(self) -> int:
        return 3 * (2 * self.dir_freqs + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(**d)


def layer_shapes(cfg: FieldConfig) -> dict[str, tuple[int, int]]:
    """Weight-matrix shape per layer, in evaluation order."""
    k = cfg.width
    shapes = {"geo.0": (cfg.pos_dim, k)}
    for i in range(1, len(cfg.geo_widths)):
        shapes[f"geo.{i}"] = (k, k)
    shapes["geo.out"] = (k, 1 + cfg.feature_size)
    shapes["tex.0"] = (cfg.feature_size + cfg.dir_dim, k)
    for i in range(1, len(cfg.tex_widths)):
        shapes[f"tex.{i}"] = (k, k)
    shapes["tex.out"] = (k, 3)
    return shapes


def modulated_layers(cfg: FieldConfig) -> list[str]:
    """Hidden layers whose weights are K x K (the ones the hypernets modulate)."""
    k = cfg.width
    return [name for name, shp in layer_shapes(cfg).items() if shp == (k, k) and not name.endswith("out")]


def init_field_weights(cfg: FieldConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    weights = {}
    for name, (fan_in, fan_out) in layer_shapes(cfg).items():
        gain = 1.0 if name.endswith("out") else 2.0
        w = rng.normal(0.0, math.sqrt(gain / fan_in), size=(fan_in, fan_out))
        weights[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True, name=f"field.{name}.w")
        weights[f"{name}.b"] = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True, name=f"field.{name}.b")
    return weights


def encode_frequency(v, n_freqs: int) -> np.ndarray:
    """[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)] along the last axis."""
    v = np.asarray(v)
    if n_freqs < 0:
        raise FieldConfigError("frequency count must be nonnegative")
    parts = [v]
    for i in range(n_freqs):
        arg = (2.0**i * math.pi) * v
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def _dense(x: Tensor, weights: dict, name: str) -> Tensor:
    return ad.affine(x, weights[f"{name}.w"], weights[f"{name}.b"])


def field_forward(x, d, weights: dict, cfg: FieldConfig) -> tuple[Tensor, Tensor]:
    """Evaluate F(x, d) -> (rgb (N,3), sigma (N,)). ``x`` and ``d`` are (N, 3) arrays."""
    dtype = weights["geo.0.w"].dtype
    for key, w in weights.items():
        if not np.all(np.isfinite(w.data)):
            raise ad.NumericError(f"non-finite values in weight {key}")
    xe = Tensor(encode_frequency(np.asarray(x, dtype=dtype), cfg.pos_freqs))
    de = Tensor(encode_frequency(np.asarray(d, dtype=dtype), cfg.dir_freqs))

    h = xe
    for i in range(len(cfg.geo_widths)):
        h = ad.relu(_dense(h, weights, f"geo.{i}"))
    geo = _dense(h, weights, "geo.out")
    sigma = ad.softplus(geo[:, 0])
    feat = geo[:, 1:]

    h = ad.concat([feat, de], axis=1)
    for i in range(len(cfg.tex_widths)):
        h = ad.relu(_dense(h, weights, f"tex.{i}"))
    rgb = ad.sigmoid(_dense(h, weights, "tex.out"))
    return rgb, sigma


def density_forward(x, weights: dict, cfg: FieldConfig) -> Tensor:
    """Geometry block only: sigma (N,) at positions ``x``."""
    dtype = weights["geo.0.w"].dtype
    h = Tensor(encode_frequency(np.asarray(x, dtype=dtype), cfg.pos_freqs))
    for i in range(len(cfg.geo_widths)):
        h = ad.relu(_dense(h, weights, f"geo.{i}"))
    return ad.softplus(_dense(h, weights, "geo.out")[:, 0])


# ---------------------------------------------------------------------------
# rays and compositing


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    state: int = 0

    def __post_init__(self):
        norms = np.linalg.norm(self.dirs, axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValueError("ray directions must have unit norm")

    def __len__(self) -> int:
        return len(self.origins)


@dataclass
class RenderOutput:
    color: Tensor  # (B, 3)
    opacity: Tensor  # (B,)
    depth: Tensor  # (B,)
    sigma: Tensor  # (B, Ns)
    weights: Tensor  # (B, Ns)


def sample_ray(n_samples: int, near: float, far: float, rng: np.random.Generator | None = None, count: int = 1):
    """Stratified sample positions, shape (count, n_samples); bin midpoints when ``rng`` is None."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    width = (far - near) / n_samples
    k = np.arange(n_samples, dtype=np.float64)
    if rng is None:
        offs = np.full((count, n_samples), 0.5)
    else:
        offs = rng.uniform(0.0, 1.0, size=(count, n_samples))
    return near + (k + offs) * width


_UPPER_CACHE: dict = {}


def _strict_upper(n: int, dtype) -> np.ndarray:
    key = (n, np.dtype(dtype).str)
    if key not in _UPPER_CACHE:
        _UPPER_CACHE[key] = np.triu(np.ones((n, n), dtype=dtype), k=1)
    return _UPPER_CACHE[key]


def composite(sigma: Tensor, rgb: Tensor, s_vals: np.ndarray, far: float, background) -> RenderOutput:
    """Alpha-composite per-sample densities (B,Ns) and colors (B,Ns,3) along each ray."""
    dtype = sigma.dtype
    s_vals = np.asarray(s_vals, dtype=dtype)
    deltas = np.concatenate([np.diff(s_vals, axis=1), far - s_vals[:, -1:]], axis=1)
    n = s_vals.shape[1]

    sd = sigma * Tensor(deltas)
    # T_k = exp(-sum_{j<k} sigma_j delta_j) == prod_{j<k} (1 - alpha_j)
    trans = ad.exp(-ad.matmul(sd, Tensor(_strict_upper(n, dtype))))
    alpha = 1.0 - ad.exp(-sd)
    w = trans * alpha
    opacity = ad.sum_(w, axis=1)

    b, _ = w.shape
    w3 = ad.broadcast(ad.reshape(w, (b, n, 1)), (b, n, 3))
    color = ad.sum_(w3 * rgb, axis=1)
    bg = Tensor(np.asarray(background, dtype=dtype))
    residual = ad.broadcast(ad.reshape(1.0 - opacity, (b, 1)), (b, 3))
    color = color + residual * bg

    depth = ad.sum_(w * Tensor(s_vals), axis=1) / ad.maximum(opacity, DEPTH_EPS)
    return RenderOutput(color, opacity, depth, sigma, w)


def render_rays(batch: RayBatch, weights: dict, cfg: FieldConfig, rng: np.random.Generator | None = None) -> RenderOutput:
    b = len(batch)
    n = cfg.samples_per_ray
    s_vals = sample_ray(n, cfg.near, cfg.far, rng, count=b)
    pts = batch.origins[:, None, :] + s_vals[..., None] * batch.dirs[:, None, :]
    dirs = np.broadcast_to(batch.dirs[:, None, :], pts.shape)
    rgb, sigma = field_forward(pts.reshape(-1, 3), dirs.reshape(-1, 3), weights, cfg)
    return composite(
        ad.reshape(sigma, (b, n)), ad.reshape(rgb, (b, n, 3)), s_vals, cfg.far, cfg.background
    )
