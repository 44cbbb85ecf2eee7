"""Trainable parameters and the AdamW update with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, default_dtype


class Parameter:
    """A leaf tensor plus first/second moment buffers and a step counter."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, data, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.name = name
        self.tensor = Tensor(arr, requires_grad=True)
        self.m = np.zeros_like(arr)
        self.v = np.zeros_like(arr)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def zero_grad(params) -> None:
    """Reset existing gradient buffers to exactly zero."""
    for p in params:
        if p.tensor.grad is not None:
            p.tensor.grad.fill(0.0)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            g = p.tensor.grad
            total += float((g * g).sum())
    return float(np.sqrt(total))


def adamw_step(
    params,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    clip_norm: float | None = None,
) -> None:
    """One AdamW update over ``params``; gradients are left untouched.

    Weight decay is decoupled from the adaptive gradient term and is applied
    to the pre-update weights. Optional global-norm clipping scales the
    gradients used for the update without mutating the stored buffers.
    """
    params = list(params)
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter '{p.name}' has no gradient; run backward first")

    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > clip_norm:
            scale = clip_norm / (norm + 1e-12)

    beta1, beta2 = betas
    for p in params:
        g = p.tensor.grad if scale == 1.0 else p.tensor.grad * scale
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        if weight_decay:
            p.tensor.data *= 1.0 - lr * weight_decay
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
