"""State conditioning: latent table, per-layer low-rank hypernets, modulation, interpolation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class HyperConfigError(ValueError):
    pass


class LatentLookupError(IndexError):
    pass


@dataclass
class HyperConfig:
    latent_dim: int = 32
    rank: int = 4
    hidden: int = 64
    use_pe: bool = False
    latent_init_std: float = 0.1
    head_init_std: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        return cls(**d)


class LatentTable:
    """Auto-decoder embeddings: one trainable D-vector per state id."""

    def __init__(self, n_states: int, dim: int, rng: np.random.Generator, std: float = 0.1, dtype=np.float32):
        self.values = Tensor(
            rng.normal(0.0, std, size=(n_states, dim)).astype(dtype), requires_grad=True, name="latents"
        )

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def lookup(self, t: int) -> Tensor:
        if not 0 <= t < self.n_states:
            raise LatentLookupError(f"state id {t} outside [0, {self.n_states})")
        return self.values[t]


def lookup_latent(table: LatentTable, t: int) -> Tensor:
    return table.lookup(t)


def encode_state_pe(t: float, dim: int) -> np.ndarray:
    """Sinusoidal position code: pe[2i] = sin(t / 10000^(2i/D)), pe[2i+1] = cos(...)."""
    if dim % 2:
        raise HyperConfigError(f"positional encoding needs an even latent size, got {dim}")
    i = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2.0 * i / dim))
    pe = np.empty(dim)
    pe[0::2] = np.sin(t * freq)
    pe[1::2] = np.cos(t * freq)
    return pe


def with_state_pe(z: Tensor, t: float, enabled: bool) -> Tensor:
    if not enabled:
        return z
    pe = encode_state_pe(t, z.shape[-1])
    if pe.shape[-1] != z.shape[-1]:
        raise HyperConfigError("positional encoding length must equal the latent size")
    return z + pe.astype(z.dtype)


class HyperNet:
    """One two-layer perceptron per modulated layer, emitting a K x r / r x K pair.

    The Q half of every output head starts at zero, so P @ Q = 0 and the
    initial modulation is exactly the identity. The P half is random: an
    all-zero head would be a stationary point of the bilinear product.
    """

    def __init__(self, layers: list[str], width: int, cfg: HyperConfig, rng: np.random.Generator, dtype=np.float32):
        if not cfg.rank < width:
            raise HyperConfigError(f"rank {cfg.rank} must be below the field width {width}")
        self.layers = list(layers)
        self.width = width
        self.rank = cfg.rank
        d, h, kr = cfg.latent_dim, cfg.hidden, width * cfg.rank
        self.params: dict[str, Tensor] = {}
        for name in self.layers:
            w1 = rng.normal(0.0, math.sqrt(2.0 / d), size=(d, h))
            w2 = np.zeros((h, 2 * kr))
            w2[:, :kr] = rng.normal(0.0, cfg.head_init_std / math.sqrt(h), size=(h, kr))
            for key, arr in (
                ("w1", w1),
                ("b1", np.zeros(h)),
                ("w2", w2),
                ("b2", np.zeros(2 * kr)),
            ):
                self.params[f"{name}.{key}"] = Tensor(arr.astype(dtype), requires_grad=True, name=f"hyper.{name}.{key}")

    def head_param_count(self) -> int:
        return sum(self.params[f"{n}.w2"].data.size + self.params[f"{n}.b2"].data.size for n in self.layers)

    def low_rank(self, z: Tensor, name: str) -> tuple[Tensor, Tensor]:
        p = self.params
        z2 = ad.reshape(z, (1, z.shape[-1]))
        hid = ad.relu(ad.matmul(z2, p[f"{name}.w1"]) + p[f"{name}.b1"])
        out = ad.reshape(ad.matmul(hid, p[f"{name}.w2"]) + p[f"{name}.b2"], (-1,))
        kr = self.width * self.rank
        P = ad.reshape(out[:kr], (self.width, self.rank))
        Q = ad.reshape(out[kr:], (self.rank, self.width))
        return P, Q


def modulation_multiplier(P: Tensor, Q: Tensor) -> Tensor:
    """eta(P Q) with eta(x) = 1 + tanh(x); entries lie in (0, 2)."""
    return 1.0 + ad.tanh(ad.matmul(P, Q))


def predict_modulation(hyper: HyperNet, z: Tensor) -> dict[str, Tensor]:
    mods = {}
    for name in hyper.layers:
        P, Q = hyper.low_rank(z, name)
        mods[name] = modulation_multiplier(P, Q)
    return mods


def apply_modulation(base: dict[str, Tensor], mods: dict[str, Tensor]) -> dict[str, Tensor]:
    """Elementwise-scale each modulated layer's weight matrix; biases and other layers pass through."""
    out = dict(base)
    for name, mult in mods.items():
        w = base[f"{name}.w"]
        if w.shape != mult.shape:
            raise ad.ContractError(f"multiplier shape {mult.shape} does not match weight {name} {w.shape}")
        out[f"{name}.w"] = w * mult
    return out


def interpolate_latent(z_a, z_b, beta: float):
    """(1 - beta) z_a + beta z_b; endpoints are returned untouched."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    a = z_a if isinstance(z_a, Tensor) else Tensor(z_a)
    b = z_b if isinstance(z_b, Tensor) else Tensor(z_b)
    if a.shape != b.shape:
        raise ad.ShapeError(f"interpolate: latent shapes {a.shape} and {b.shape} differ")
    if beta == 0.0:
        return a
    if beta == 1.0:
        return b
    return a * (1.0 - beta) + b * beta


def beta_schedule(alpha: int) -> list[float]:
    """The alpha - 1 interior weights 1/alpha, ..., (alpha-1)/alpha."""
    if alpha < 2:
        raise ValueError("alpha must be at least 2")
    return [i / alpha for i in range(1, alpha)]


def latents_csv(latents: np.ndarray, fractions) -> str:
    latents = np.asarray(latents)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state_id", "fraction"] + [f"z_{i}" for i in range(latents.shape[1])])
    for t, (z, frac) in enumerate(zip(latents, fractions)):
        writer.writerow([t, repr(float(frac))] + [repr(float(v)) for v in z])
    return buf.getvalue()


def read_latents_csv(text: str) -> tuple[np.ndarray, list[float]]:
    rows = list(csv.reader(text.splitlines()))
    header, body = rows[0], rows[1:]
    if header[:2] != ["state_id", "fraction"]:
        raise ValueError("latent CSV header must start with state_id,fraction")
    z = np.array([[float(v) for v in r[2:]] for r in body])
    return z, [float(r[1]) for r in body]
