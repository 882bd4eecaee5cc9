"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Param

__all__ = ["adamw_step", "cosine_lr"]


def adamw_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 1e-4) -> None:
    """One AdamW update in place on every parameter.

    Weight decay is decoupled: w -= lr * wd * w is applied next to (not
    through) the bias-corrected moment update. Parameters without a
    gradient this step are treated as having gradient zero, so their
    moments keep decaying.
    """
    for p in params:
        g = p.tensor.grad
        if g is not None and g.shape != p.tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name} {p.tensor.data.shape}")
        p.step += 1
        if g is None:
            p.m *= beta1
            p.v *= beta2
        else:
            p.m *= beta1
            p.m += (1.0 - beta1) * g
            p.v *= beta2
            p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        w = p.tensor.data
        w -= (lr * weight_decay) * w
        w -= lr * m_hat / (np.sqrt(v_hat) + eps)


def cosine_lr(step: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from lr_start (step 0) to lr_end (step total)."""
    if total <= 0:
        raise ValueError(f"total steps must be positive, got {total}")
    if not (0 <= step <= total):
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total))
