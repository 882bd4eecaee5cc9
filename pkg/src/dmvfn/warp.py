"""Backward warping and voxel-flow fusion.

A voxel flow bundles two backward optical flows (target frame to each of
the two source frames, in pixels) with a per-pixel fusion map in [0, 1].
Rendering the predicted frame is: warp each source along its flow, then
blend with the fusion map.

Flow channel convention: channel 0 is the x displacement (width axis),
channel 1 the y displacement (height axis); the sampled source position is
target coordinate + flow, clamped to the image rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .tensor import Tensor, ShapeError, add, from_op, mul, add_scalar, neg

__all__ = ["VoxelFlow", "backward_warp", "apply_voxel_flow", "clamp01"]


@dataclass
class VoxelFlow:
    """Two backward flows plus the fusion map, all sharing spatial dims.

    ``f_prev`` points from the target frame into the earlier source frame,
    ``f_cur`` into the later one. ``m`` blends the two warped sources and
    must lie in [0, 1] (sigmoid at the production site guarantees this).
    """

    f_prev: Tensor
    f_cur: Tensor
    m: Tensor

    def __post_init__(self):
        sp = self.f_prev.shape
        if self.f_cur.shape != sp or self.m.shape[2:] != sp[2:] or self.m.shape[0] != sp[0]:
            raise ShapeError(
                f"voxel flow components disagree: f_prev {sp}, f_cur {self.f_cur.shape}, m {self.m.shape}"
            )
        if sp[1] != 2 or self.m.shape[1] != 1:
            raise ShapeError(f"voxel flow needs 2-channel flows and 1-channel fusion map, got {sp[1]} and {self.m.shape[1]}")


def backward_warp(image: Tensor, flow: Tensor) -> Tensor:
    """Bilinearly sample ``image`` at (target position + flow).

    Source coordinates are clamped to the image rectangle, so outputs stay
    inside the input value range. Differentiable in both arguments; the
    flow gradient comes from the bilinear weights and vanishes where the
    coordinate clamp saturates.
    """
    if image.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise ShapeError(f"backward_warp: image {image.shape} with flow {flow.shape}")
    if image.shape[0] != flow.shape[0] or image.shape[2:] != flow.shape[2:]:
        raise ShapeError(f"backward_warp: spatial dims differ, image {image.shape} vs flow {flow.shape}")
    if not np.isfinite(flow.data).all():
        raise NumericError("backward_warp: non-finite flow values")

    n, c, h, w = image.shape
    dt = image.data.dtype
    ys, xs = np.meshgrid(np.arange(h, dtype=dt), np.arange(w, dtype=dt), indexing="ij")
    sx = xs[None] + flow.data[:, 0]
    sy = ys[None] + flow.data[:, 1]
    # interior mask before clamping: the clamp kills the flow gradient
    in_x = (sx > 0) & (sx < w - 1)
    in_y = (sy > 0) & (sy < h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.minimum(x0, w - 2) if w > 1 else x0
    y0 = np.minimum(y0, h - 2) if h > 1 else y0
    fx = sx - x0.astype(dt)
    fy = sy - y0.astype(dt)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    flat = image.data.reshape(n, c, h * w)
    i00 = (y0 * w + x0).reshape(n, 1, h * w)
    i01 = (y0 * w + x1).reshape(n, 1, h * w)
    i10 = (y1 * w + x0).reshape(n, 1, h * w)
    i11 = (y1 * w + x1).reshape(n, 1, h * w)

    def gather(idx):
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, h * w)), axis=2).reshape(n, c, h, w)

    v00, v01, v10, v11 = gather(i00), gather(i01), gather(i10), gather(i11)
    wx = fx[:, None]
    wy = fy[:, None]
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def backward(gy):
        # image gradient: scatter the four bilinear taps
        plane = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1, 1)
        ids = np.concatenate([
            (plane + y0[:, None] * w + x0[:, None]).ravel(),
            (plane + y0[:, None] * w + x1[:, None]).ravel(),
            (plane + y1[:, None] * w + x0[:, None]).ravel(),
            (plane + y1[:, None] * w + x1[:, None]).ravel(),
        ])
        vals = np.concatenate([
            (gy * w00).ravel(), (gy * w01).ravel(), (gy * w10).ravel(), (gy * w11).ravel(),
        ])
        gimg = np.bincount(ids, weights=vals, minlength=n * c * h * w)
        gimg = gimg.reshape(n, c, h, w).astype(gy.dtype)

        # flow gradient: bilinear slope, summed over channels, masked at clamps
        dx = ((1 - wy) * (v01 - v00) + wy * (v11 - v10)) * gy
        dy = ((1 - wx) * (v10 - v00) + wx * (v11 - v01)) * gy
        gflow = np.empty_like(flow.data)
        gflow[:, 0] = dx.sum(axis=1) * in_x
        gflow[:, 1] = dy.sum(axis=1) * in_y
        return gimg, gflow

    return from_op(out, (image, flow), "backward_warp", backward)


def apply_voxel_flow(prev: Tensor, cur: Tensor, flow: VoxelFlow, clamp: bool = True) -> Tensor:
    """Render the predicted frame: warp both sources and blend with the map.

    ``clamp=False`` leaves the fused values unclamped so the training loss
    sees live gradients; the final deliverable frame clamps to [0, 1].
    """
    if prev.shape != cur.shape:
        raise ShapeError(f"apply_voxel_flow: frame shapes differ, {prev.shape} vs {cur.shape}")
    mdat = flow.m.data
    if mdat.min() < 0.0 or mdat.max() > 1.0:
        raise ValueError(f"apply_voxel_flow: fusion map outside [0,1], range [{mdat.min()}, {mdat.max()}]")
    warped_prev = backward_warp(prev, flow.f_prev)
    warped_cur = backward_warp(cur, flow.f_cur)
    one_minus_m = add_scalar(neg(flow.m), 1.0)
    fused = add(mul(warped_prev, flow.m), mul(warped_cur, one_minus_m))
    if clamp:
        return clamp01(fused)
    return fused


def clamp01(x: Tensor) -> Tensor:
    """Clamp to [0, 1]; subgradient 0 outside the interval."""
    out = np.clip(x.data, 0.0, 1.0)
    mask = ((x.data > 0.0) & (x.data < 1.0)).astype(x.data.dtype)
    return from_op(out, (x,), "clamp01", lambda gy: (gy * mask,))
