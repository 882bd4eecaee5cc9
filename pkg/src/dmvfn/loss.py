"""Laplacian-pyramid L1 reconstruction loss with geometric deep supervision.

Each refinement stage of the network is supervised against the target
frame; stage i gets weight gamma**(n-i), so the final stage dominates.
The per-pair distance is the sum over pyramid levels of the mean absolute
difference, making the loss resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

__all__ = [
    "LossConfig",
    "laplacian_pyramid",
    "reconstruct_pyramid",
    "lap_l1",
    "total_loss",
    "supervision_weights",
]

# 5-tap binomial blur, separable (1,4,6,4,1)/16
_BLUR_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_BLUR_CACHE: dict = {}


@dataclass
class LossConfig:
    """Loss hyperparameters: decay gamma, pyramid depth, supervision mode."""

    gamma: float = 0.8
    levels: int = 5
    supervision: str = "full"  # "full" | "single"
    gumbel_reg_weight: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.levels < 1:
            raise ValueError(f"pyramid levels must be >= 1, got {self.levels}")
        if self.supervision not in ("full", "single"):
            raise ValueError(f"unknown supervision mode {self.supervision!r}")


def _blur_kernel(dtype):
    key = np.dtype(dtype).str
    k = _BLUR_CACHE.get(key)
    if k is None:
        k2 = np.outer(_BLUR_1D, _BLUR_1D).astype(dtype)
        k = (Tensor(k2[None, None]), Tensor(np.zeros(1, dtype=dtype)))
        _BLUR_CACHE[key] = k
    return k


def _blur(x: Tensor) -> Tensor:
    """Per-channel 5x5 binomial blur with edge-replicated borders."""
    n, c, h, w = x.shape
    kern, kb = _blur_kernel(x.dtype)
    flat = T.reshape(x, (n * c, 1, h, w))
    padded = T.pad_replicate(flat, 2)
    out = T.conv2d(padded, kern, kb, stride=1, padding=0)
    return T.reshape(out, (n, c, h, w))


def laplacian_pyramid(img: Tensor, levels: int):
    """Band-pass decomposition: blur-downsample chain differences.

    Returns ``levels`` tensors; the last is the coarsest low-pass residual.
    Adding each level back onto the upsampled coarser reconstruction
    reproduces the input exactly.
    """
    if img.ndim != 4:
        raise ShapeError(f"laplacian_pyramid: expected NCHW input, got {img.shape}")
    h, w = img.shape[2], img.shape[3]
    if min(h, w) < 2 ** (levels - 1):
        raise ShapeError(f"image {h}x{w} too small for {levels} pyramid levels")
    out = []
    g = img
    for _ in range(levels - 1):
        gh, gw = g.shape[2], g.shape[3]
        low = T.bilinear_resize(_blur(g), gh // 2, gw // 2)
        up = T.bilinear_resize(low, gh, gw)
        out.append(T.sub(g, up))
        g = low
    out.append(g)
    return out


def reconstruct_pyramid(levels) -> Tensor:
    """Inverse of :func:`laplacian_pyramid`: upsample-and-add over levels."""
    g = levels[-1]
    for band in reversed(levels[:-1]):
        g = T.add(band, T.bilinear_resize(g, band.shape[2], band.shape[3]))
    return g


def _l1_vs_levels(a: Tensor, target_levels, levels: int) -> Tensor:
    la = laplacian_pyramid(a, levels)
    total = None
    for pa, pb in zip(la, target_levels):
        term = T.mean_all(T.abs_(T.sub(pa, pb)))
        total = term if total is None else T.add(total, term)
    return total


def lap_l1(a: Tensor, b: Tensor, levels: int = 5) -> Tensor:
    """Sum over pyramid levels of mean |a_level - b_level|; symmetric."""
    if a.shape != b.shape:
        raise ShapeError(f"lap_l1: shapes differ, {a.shape} vs {b.shape}")
    return _l1_vs_levels(a, laplacian_pyramid(b, levels), levels)


def supervision_weights(n: int, gamma: float) -> np.ndarray:
    """Per-stage weights gamma**(n-i) for i = 1..n, as float64."""
    return np.array([gamma ** (n - i) for i in range(1, n + 1)], dtype=np.float64)


def total_loss(intermediates, target: Tensor, cfg: LossConfig, routing=None) -> Tensor:
    """Deeply supervised reconstruction loss over all stage outputs.

    ``full`` supervision sums gamma-decayed pyramid losses over every stage
    output (pass-through states included); ``single`` supervises only the
    last. When the routing vector is a soft Gumbel sample, its sparsity
    regularizer (mean of v) is added with ``gumbel_reg_weight``.
    """
    if not intermediates:
        raise ValueError("total_loss: no intermediates supplied")
    n = len(intermediates)
    target_levels = [lv.detach() for lv in laplacian_pyramid(target.detach(), cfg.levels)]
    if cfg.supervision == "single":
        loss = _l1_vs_levels(intermediates[-1], target_levels, cfg.levels)
    else:
        weights = supervision_weights(n, cfg.gamma)
        loss = None
        for inter, wt in zip(intermediates, weights):
            term = T.mul_scalar(_l1_vs_levels(inter, target_levels, cfg.levels), float(wt))
            loss = term if loss is None else T.add(loss, term)
    if routing is not None and getattr(routing, "kind", None) == "gumbel" and routing.v.requires_grad:
        loss = T.add(loss, T.mul_scalar(T.mean_all(routing.v), cfg.gumbel_reg_weight))
    return loss
