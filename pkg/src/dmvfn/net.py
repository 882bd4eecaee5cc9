"""Multi-scale voxel flow blocks and the dynamically routed 9-block chain.

Each block refines the running voxel-flow estimate: it sees the two input
frames, the current synthesized frame and the current raw flow state, and
emits a 5-channel residual (two 2-channel flow deltas plus a fusion
logit). The motion path runs at 1/S resolution to widen the receptive
field; the spatial path keeps detail at half resolution; a stride-2
transposed conv merges them back to full resolution. The merge layer is
zero-initialized so every block starts as an identity refinement.

Block selection: at inference a block runs only for the samples whose
routing bit is 1; at training every block runs and the hard (or soft)
routing weights blend its output with the pass-through state, which keeps
the forward hard-selected while letting gradients reach the routing
logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, Param, ShapeError, no_grad
from .warp import VoxelFlow, apply_voxel_flow
from .routing import RoutingNet, RoutingVector, RoutingMode, make_routing

__all__ = [
    "MvfbConfig",
    "MvfbBlock",
    "BlockState",
    "DmvfnConfig",
    "DmvfnModel",
    "ForwardResult",
    "SCHEDULES",
    "MOTION_WIDTHS",
    "SPATIAL_WIDTHS",
    "mvfb_forward",
    "dmvfn_forward",
    "sequential_forward",
    "predict_sequence",
]

# named scaling-factor schedules (per-block motion-path downsample factors)
SCHEDULES = {
    "[1]": (1, 1, 1, 1, 1, 1, 1, 1, 1),
    "[2]": (2, 2, 2, 2, 2, 2, 2, 2, 2),
    "[4]": (4, 4, 4, 4, 4, 4, 4, 4, 4),
    "[1,2]": (1, 1, 1, 1, 2, 2, 2, 2, 2),
    "[1,4]": (1, 1, 1, 1, 4, 4, 4, 4, 4),
    "[2,1]": (2, 2, 2, 2, 1, 1, 1, 1, 1),
    "[4,1]": (4, 4, 4, 4, 1, 1, 1, 1, 1),
    "[1,2,4]": (1, 1, 1, 2, 2, 2, 4, 4, 4),
    "[4,2,1]": (4, 4, 4, 2, 2, 2, 1, 1, 1),
}

# default feature widths per scaling factor, chosen for a desk-size budget
MOTION_WIDTHS = {4: 64, 2: 48, 1: 32}
SPATIAL_WIDTHS = {4: 32, 2: 24, 1: 16}

_IN_CHANNELS = 14  # prev(3) + cur(3) + synthesized(3) + raw flow state(5)
_STATE_CHANNELS = 5


@dataclass
class MvfbConfig:
    """Geometry of one block: scale factor and branch widths."""

    scale: int
    motion_width: int
    spatial_width: int
    spatial_path: bool = True

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise ValueError(f"scale must be one of 1, 2, 4, got {self.scale}")
        if self.motion_width < 1 or self.spatial_width < 1:
            raise ValueError("branch widths must be >= 1")


@dataclass
class BlockState:
    """Running refinement state: synthesized frame + raw 5-channel flow.

    Channels of ``raw``: 0:2 flow into the earlier frame, 2:4 flow into the
    later frame (pixels), 4 the fusion logit (sigmoid gives the map).
    Initial state is all-zero.
    """

    img: Tensor
    raw: Tensor


class MvfbBlock:
    """One multi-scale voxel flow block."""

    def __init__(self, rng: np.random.Generator, cfg: MvfbConfig):
        self.cfg = cfg
        wm, ws = cfg.motion_width, cfg.spatial_width
        self.m_convs = []
        cin = _IN_CHANNELS
        for _ in range(3):
            self.m_convs.append((
                T.kaiming_normal(rng, (wm, cin, 3, 3), cin * 9),
                T.zeros((wm,)),
                Tensor(np.full(wm, 0.25, dtype=np.float32)),
            ))
            cin = wm
        if cfg.spatial_path:
            self.s_convs = []
            cin = _IN_CHANNELS
            for _ in range(2):
                self.s_convs.append((
                    T.kaiming_normal(rng, (ws, cin, 3, 3), cin * 9),
                    T.zeros((ws,)),
                    Tensor(np.full(ws, 0.25, dtype=np.float32)),
                ))
                cin = ws
        else:
            self.s_convs = []
        merged = wm + (ws if cfg.spatial_path else 0)
        # zero init: the block starts as an exact identity refinement
        self.merge_w = T.zeros((merged, _STATE_CHANNELS, 4, 4))
        self.merge_b = T.zeros((_STATE_CHANNELS,))
        for group in (self.m_convs, self.s_convs):
            for w, b, a in group:
                w.requires_grad = b.requires_grad = a.requires_grad = True
        self.merge_w.requires_grad = self.merge_b.requires_grad = True

    def params(self, prefix: str):
        out = []
        for i, (w, b, a) in enumerate(self.m_convs):
            out += [Param(f"{prefix}.motion{i}.w", w), Param(f"{prefix}.motion{i}.b", b),
                    Param(f"{prefix}.motion{i}.a", a)]
        for i, (w, b, a) in enumerate(self.s_convs):
            out += [Param(f"{prefix}.spatial{i}.w", w), Param(f"{prefix}.spatial{i}.b", b),
                    Param(f"{prefix}.spatial{i}.a", a)]
        out += [Param(f"{prefix}.merge.w", self.merge_w), Param(f"{prefix}.merge.b", self.merge_b)]
        return out

    def forward(self, prev: Tensor, cur: Tensor, state: BlockState) -> BlockState:
        h, w = prev.shape[2], prev.shape[3]
        x = T.concat_channels([prev, cur, state.img, state.raw])
        s = self.cfg.scale
        xm = T.bilinear_resize(x, h // s, w // s) if s > 1 else x
        for cw, cb, ca in self.m_convs:
            xm = T.prelu(T.conv2d(xm, cw, cb, stride=1, padding=1), ca)
        feat = T.bilinear_resize(xm, h // 2, w // 2)
        if self.s_convs:
            sp = T.prelu(T.conv2d(x, *self.s_convs[0][:2], stride=2, padding=1), self.s_convs[0][2])
            sp = T.prelu(T.conv2d(sp, *self.s_convs[1][:2], stride=1, padding=1), self.s_convs[1][2])
            feat = T.concat_channels([feat, sp])
        delta = T.transposed_conv2d(feat, self.merge_w, self.merge_b, stride=2, padding=1)
        raw = T.add(state.raw, delta)
        flow = VoxelFlow(
            T.narrow(raw, 1, 0, 2),
            T.narrow(raw, 1, 2, 2),
            T.sigmoid(T.narrow(raw, 1, 4, 1)),
        )
        img = apply_voxel_flow(prev, cur, flow, clamp=False)
        return BlockState(img, raw)


def mvfb_forward(block: MvfbBlock, prev: Tensor, cur: Tensor, state: BlockState) -> BlockState:
    """Run one block on the running state (scale comes from the block config)."""
    return block.forward(prev, cur, state)


def _width(base: int, scale: float) -> int:
    return max(1, round(base * scale))


@dataclass
class DmvfnConfig:
    """Model shape: scaling schedule, widths, spatial-path toggle."""

    schedule: tuple = SCHEDULES["[4,2,1]"]
    width_scale: float = 1.0
    spatial_path: bool = True
    routing_widths: tuple = (16, 32)
    routing_downsample: int = 4

    def __post_init__(self):
        if isinstance(self.schedule, str):
            if self.schedule not in SCHEDULES:
                raise ValueError(f"unknown schedule {self.schedule!r}; options: {sorted(SCHEDULES)}")
            self.schedule = SCHEDULES[self.schedule]
        self.schedule = tuple(int(s) for s in self.schedule)
        if not self.schedule:
            raise ValueError("schedule must not be empty")

    @property
    def n_blocks(self) -> int:
        return len(self.schedule)

    def block_configs(self):
        return [
            MvfbConfig(
                scale=s,
                motion_width=_width(MOTION_WIDTHS[s], self.width_scale),
                spatial_width=_width(SPATIAL_WIDTHS[s], self.width_scale),
                spatial_path=self.spatial_path,
            )
            for s in self.schedule
        ]

    def to_dict(self):
        return {
            "schedule": list(self.schedule),
            "width_scale": self.width_scale,
            "spatial_path": self.spatial_path,
            "routing_widths": list(self.routing_widths),
            "routing_downsample": self.routing_downsample,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            schedule=tuple(d["schedule"]),
            width_scale=d.get("width_scale", 1.0),
            spatial_path=d.get("spatial_path", True),
            routing_widths=tuple(d.get("routing_widths", (16, 32))),
            routing_downsample=d.get("routing_downsample", 4),
        )


class DmvfnModel:
    """The block chain plus its routing network."""

    def __init__(self, cfg: DmvfnConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.blocks = [MvfbBlock(rng, bc) for bc in cfg.block_configs()]
        self.routing = RoutingNet(rng, n_blocks=cfg.n_blocks,
                                  widths=cfg.routing_widths,
                                  downsample=cfg.routing_downsample)
        self._params = None
        self.params()  # wrapping in Param flips requires_grad on; do it before any forward

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def params(self):
        if self._params is None:
            out = []
            for i, b in enumerate(self.blocks):
                out += b.params(f"block{i}")
            out += self.routing.params("routing")
            names = [p.name for p in out]
            if len(set(names)) != len(names):
                raise ValueError("duplicate parameter names in model")
            self._params = out
        return self._params

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


@dataclass
class ForwardResult:
    """All per-block states of one forward pass plus the routing used."""

    intermediates: list  # synthesized frame after each block (unclamped)
    flows: list          # raw 5-channel flow state after each block
    v: np.ndarray        # applied routing weights, (N, n)
    cur: np.ndarray      # the later input frame, for the all-skip fallback

    @property
    def prediction(self) -> np.ndarray:
        """Final frame, clamped to [0,1]; all-blocks-skipped samples copy the last input."""
        out = np.clip(self.intermediates[-1].data, 0.0, 1.0).copy()
        dead = np.flatnonzero(self.v.sum(axis=1) == 0)
        if dead.size:
            out[dead] = self.cur[dead]
        return out


def _check_frames(prev: Tensor, cur: Tensor):
    if prev.ndim != 4 or cur.ndim != 4 or prev.shape != cur.shape:
        raise ShapeError(f"expected matching NCHW frames, got {prev.shape} and {cur.shape}")
    h, w = prev.shape[2], prev.shape[3]
    if h % 4 or w % 4:
        raise ShapeError(f"frame size {h}x{w} must be a multiple of 4")


def dmvfn_forward(model: DmvfnModel, prev: Tensor, cur: Tensor,
                  routing: RoutingVector, mode: str = "train") -> ForwardResult:
    """Run the block chain under a routing vector.

    ``train``: every block computes; its output is blended with the
    pass-through state using the routing weights (hard STE samples keep the
    forward identical to hard selection). ``infer``: a block computes only
    for the samples whose routing bit is 1.
    """
    _check_frames(prev, cur)
    n = model.n_blocks
    batch = prev.shape[0]
    v = routing.v
    if v.ndim != 2 or v.shape != (batch, n):
        raise ShapeError(f"routing vector shape {v.shape} does not match batch {batch} x {n} blocks")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")

    if mode == "infer":
        vd = v.data
        if not np.isin(vd, (0.0, 1.0)).all():
            raise ValueError("inference requires a binary routing vector")
        return _masked_forward(model, prev, cur, vd)

    h, w = prev.shape[2], prev.shape[3]
    dtype = prev.dtype
    state = BlockState(
        Tensor(np.zeros((batch, 3, h, w), dtype=dtype)),
        Tensor(np.zeros((batch, _STATE_CHANNELS, h, w), dtype=dtype)),
    )
    imgs, raws = [], []
    for i, block in enumerate(model.blocks):
        candidate = block.forward(prev, cur, state)
        vi = T.reshape(T.narrow(v, 1, i, 1), (batch, 1, 1, 1))
        keep = T.add_scalar(T.neg(vi), 1.0)
        state = BlockState(
            T.add(T.mul(candidate.img, vi), T.mul(state.img, keep)),
            T.add(T.mul(candidate.raw, vi), T.mul(state.raw, keep)),
        )
        imgs.append(state.img)
        raws.append(state.raw)
    return ForwardResult(imgs, raws, np.array(v.data, copy=True), np.array(cur.data, copy=True))


def _masked_forward(model: DmvfnModel, prev: Tensor, cur: Tensor, v: np.ndarray) -> ForwardResult:
    batch = prev.shape[0]
    h, w = prev.shape[2], prev.shape[3]
    dtype = prev.dtype
    img = np.zeros((batch, 3, h, w), dtype=dtype)
    raw = np.zeros((batch, _STATE_CHANNELS, h, w), dtype=dtype)
    imgs, raws = [], []
    with no_grad():
        for i, block in enumerate(model.blocks):
            idx = np.flatnonzero(v[:, i])
            if idx.size:
                sub = BlockState(Tensor(img[idx]), Tensor(raw[idx]))
                out = block.forward(Tensor(prev.data[idx]), Tensor(cur.data[idx]), sub)
                img = img.copy()
                raw = raw.copy()
                img[idx] = out.img.data
                raw[idx] = out.raw.data
            imgs.append(Tensor(img))
            raws.append(Tensor(raw))
    return ForwardResult(imgs, raws, np.array(v, copy=True), np.array(cur.data, copy=True))


def sequential_forward(model: DmvfnModel, prev: Tensor, cur: Tensor) -> ForwardResult:
    """The routing-free chain: every block runs, no blending arithmetic."""
    _check_frames(prev, cur)
    batch = prev.shape[0]
    h, w = prev.shape[2], prev.shape[3]
    dtype = prev.dtype
    state = BlockState(
        Tensor(np.zeros((batch, 3, h, w), dtype=dtype)),
        Tensor(np.zeros((batch, _STATE_CHANNELS, h, w), dtype=dtype)),
    )
    imgs, raws = [], []
    for block in model.blocks:
        state = block.forward(prev, cur, state)
        imgs.append(state.img)
        raws.append(state.raw)
    ones = np.ones((batch, model.n_blocks), dtype=np.float32)
    return ForwardResult(imgs, raws, ones, np.array(cur.data, copy=True))


def predict_sequence(model: DmvfnModel, prev, cur, k: int,
                     mode: RoutingMode | None = None,
                     rng: np.random.Generator | None = None,
                     beta: float | None = None):
    """Iteratively predict k future frames from two input frames.

    Step 1 predicts from (prev, cur); each later step slides the window to
    (previous later input, previous prediction). A fresh routing vector is
    drawn per step. Returns k clamped frames matching the input layout
    ((C,H,W) in, (C,H,W) out).
    """
    if k < 1:
        raise ValueError(f"horizon k must be >= 1, got {k}")
    if mode is None:
        mode = RoutingMode(kind="stebs", beta=beta if beta is not None else 0.5)
    elif beta is not None:
        mode = RoutingMode(kind=mode.kind, p=mode.p, beta=beta, tau_start=mode.tau_start,
                           tau_end=mode.tau_end, reg_weight=mode.reg_weight,
                           deterministic_infer=mode.deterministic_infer)
    if rng is None:
        rng = np.random.default_rng(0)

    def to4(a):
        arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float32)
        return arr[None] if arr.ndim == 3 else arr

    single = (np.asarray(prev.data if isinstance(prev, Tensor) else prev).ndim == 3)
    p, c = to4(prev), to4(cur)
    outs = []
    for _ in range(k):
        pt, ct = Tensor(p), Tensor(c)
        with no_grad():
            routing = make_routing(mode, model.routing, pt, ct, "infer", rng)
            result = dmvfn_forward(model, pt, ct, routing, mode="infer")
        nxt = result.prediction
        outs.append(nxt[0] if single else nxt)
        p, c = c, nxt
    return outs
