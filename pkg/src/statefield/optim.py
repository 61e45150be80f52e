"""AdamW with decoupled weight decay and per-parameter learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericError, Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamWState,
    *,
    lr: float | dict[str, float],
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float | dict[str, float] = 0.0,
) -> None:
    """One in-place update: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).

    All gradients are validated before anything is touched, so a non-finite
    gradient aborts the step with parameters and moments unchanged.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        rate = lr[name] if isinstance(lr, dict) else lr
        wd = weight_decay.get(name, 0.0) if isinstance(weight_decay, dict) else weight_decay
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if wd:
            update = update + wd * p
        p -= (rate * update).astype(p.dtype, copy=False)


class AdamW:
    """Thin stateful wrapper over :func:`adamw_step` for named tensors."""

    def __init__(self, params: dict[str, Tensor], lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self) -> None:
        adamw_step(
            {k: t.data for k, t in self.params.items()},
            {k: t.grad for k, t in self.params.items()},
            self.state,
            lr=self.lr,
            betas=self.betas,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
