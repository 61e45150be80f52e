"""The checkpointable unit: base field weights, per-layer hypernets and the latent table."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .field import (
    FieldConfig,
    RayBatch,
    RenderOutput,
    density_forward,
    init_field_weights,
    modulated_layers,
    render_rays,
)
from .hyper import (
    HyperConfig,
    HyperNet,
    LatentTable,
    apply_modulation,
    predict_modulation,
    with_state_pe,
)


class ModulatedField:
    def __init__(
        self,
        field_cfg: FieldConfig,
        hyper_cfg: HyperConfig,
        n_states: int,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.field_cfg = field_cfg
        self.hyper_cfg = hyper_cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.base = init_field_weights(field_cfg, rng, dtype)
        self.hyper = HyperNet(modulated_layers(field_cfg), field_cfg.width, hyper_cfg, rng, dtype)
        self.table = LatentTable(n_states, hyper_cfg.latent_dim, rng, hyper_cfg.latent_init_std, dtype)

    @property
    def n_states(self) -> int:
        return self.table.n_states

    def parameters(self) -> dict[str, Tensor]:
        """Every trainable tensor under a stable, fully qualified name."""
        params = {f"field.{k}": v for k, v in self.base.items()}
        params.update({f"hyper.{k}": v for k, v in self.hyper.params.items()})
        params["latents"] = self.table.values
        return params

    def load_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        for name, t in params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    # -- conditioning ------------------------------------------------------

    def latent(self, t: int) -> Tensor:
        """Latent for a seen state, with the positional code added when enabled."""
        return with_state_pe(self.table.lookup(t), t, self.hyper_cfg.use_pe)

    def weights_for(self, z: Tensor) -> dict[str, Tensor]:
        return apply_modulation(self.base, predict_modulation(self.hyper, z))

    # -- rendering ---------------------------------------------------------

    def render(self, batch: RayBatch, z: Tensor, rng: np.random.Generator | None = None) -> RenderOutput:
        return render_rays(batch, self.weights_for(z), self.field_cfg, rng)

    def render_numpy(self, origins, dirs, z, *, chunk: int = 4096, workers: int = 1, weights=None):
        """Gradient-free render; returns (rgb, opacity, depth) arrays. Chunks may run on worker threads."""
        with ad.no_tape():
            if weights is None:
                weights = self.weights_for(z if isinstance(z, Tensor) else Tensor(np.asarray(z, self.dtype)))
            origins = np.asarray(origins, dtype=np.float64)
            dirs = np.asarray(dirs, dtype=np.float64)
            spans = [(i, min(i + chunk, len(origins))) for i in range(0, len(origins), chunk)]

            def run(span):
                lo, hi = span
                with ad.no_tape():
                    out = render_rays(RayBatch(origins[lo:hi], dirs[lo:hi]), weights, self.field_cfg, None)
                return out.color.data, out.opacity.data, out.depth.data

            if workers > 1 and len(spans) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    parts = list(pool.map(run, spans))
            else:
                parts = [run(s) for s in spans]
        rgb = np.concatenate([p[0] for p in parts])
        opacity = np.concatenate([p[1] for p in parts])
        depth = np.concatenate([p[2] for p in parts])
        return rgb, opacity, depth

    def render_camera(self, camera, z, *, chunk: int = 4096, workers: int = 1):
        origins, dirs = camera.rays()
        rgb, opacity, depth = self.render_numpy(origins, dirs, z, chunk=chunk, workers=workers)
        shape = (camera.height, camera.width)
        return rgb.reshape(*shape, 3), opacity.reshape(shape), depth.reshape(shape)

    def density(self, points, z, *, chunk: int = 65536, workers: int = 1) -> np.ndarray:
        with ad.no_tape():
            weights = self.weights_for(z if isinstance(z, Tensor) else Tensor(np.asarray(z, self.dtype)))
            pts = np.asarray(points, dtype=np.float64)
            spans = [(i, min(i + chunk, len(pts))) for i in range(0, len(pts), chunk)]

            def run(span):
                with ad.no_tape():
                    return density_forward(pts[span[0] : span[1]], weights, self.field_cfg).data

            if workers > 1 and len(spans) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    parts = list(pool.map(run, spans))
            else:
                parts = [run(s) for s in spans]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=self.dtype)
