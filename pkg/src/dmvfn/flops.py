"""Static and dynamic FLOPs accounting plus block usage-rate statistics.

Conventions (documented so numbers are comparable run to run): one
multiply-accumulate counts as 2 FLOPs; conv cost is 2*k^2*Cin*Cout per
output position and transposed conv 2*k^2*Cin*Cout per input position;
bias adds one FLOP per output element where a layer has one; activations,
resizes, warps and other pointwise work count 1 FLOP per output element.

The dynamic per-sample total is the routing-net subtotal plus the
subtotals of the selected blocks; with every block selected it equals the
full static total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad
from .net import DmvfnModel, MvfbConfig, _IN_CHANNELS, _STATE_CHANNELS
from .routing import RoutingMode, RoutingNet, make_routing

__all__ = [
    "conv2d_flops",
    "transposed_conv2d_flops",
    "linear_flops",
    "FlopsLedger",
    "block_flops",
    "routing_net_flops",
    "model_ledger",
    "UsageStats",
    "usage_rate",
]


def conv2d_flops(cin: int, cout: int, k: int, hout: int, wout: int, bias: bool = False) -> int:
    """Kernel MACs at 2 FLOPs each: 2*k^2*Cin*Cout*Hout*Wout (+ bias adds)."""
    f = 2 * k * k * cin * cout * hout * wout
    if bias:
        f += cout * hout * wout
    return f


def transposed_conv2d_flops(cin: int, cout: int, k: int, hin: int, win: int,
                            hout: int, wout: int, bias: bool = False) -> int:
    f = 2 * k * k * cin * cout * hin * win
    if bias:
        f += cout * hout * wout
    return f


def linear_flops(din: int, dout: int, bias: bool = False) -> int:
    f = 2 * din * dout
    if bias:
        f += dout
    return f


@dataclass
class FlopsLedger:
    """Per-block subtotals plus the routing-net subtotal, per sample."""

    block_layers: list = field(default_factory=list)   # list of {layer: flops} per block
    routing_layers: dict = field(default_factory=dict)

    @property
    def blocks(self):
        return [sum(d.values()) for d in self.block_layers]

    @property
    def routing(self) -> int:
        return sum(self.routing_layers.values())

    @property
    def super_static(self) -> int:
        """Static cost of the full block chain (the super network)."""
        return sum(self.blocks)

    @property
    def total_static(self) -> int:
        return self.super_static + self.routing

    def dynamic(self, v_row) -> int:
        """Cost of one routed sample: routing net + selected blocks."""
        v = np.asarray(v_row)
        return self.routing + int(sum(b for b, vi in zip(self.blocks, v) if vi == 1))

    def expected(self, w_row) -> float:
        """Deterministic expected cost under selection probabilities w."""
        w = np.asarray(w_row, dtype=np.float64)
        return self.routing + float(np.dot(w, np.asarray(self.blocks, dtype=np.float64)))

    def to_text(self) -> str:
        lines = []
        for i, (layers, total) in enumerate(zip(self.block_layers, self.blocks)):
            lines.append(f"block{i}: {total / 1e6:.3f} MFLOPs")
            for name, f in layers.items():
                lines.append(f"  {name}: {f / 1e6:.3f}")
        lines.append(f"routing: {self.routing / 1e6:.3f} MFLOPs")
        for name, f in self.routing_layers.items():
            lines.append(f"  {name}: {f / 1e6:.3f}")
        lines.append(f"super network static: {self.super_static / 1e6:.3f} MFLOPs")
        lines.append(f"total static (with routing): {self.total_static / 1e6:.3f} MFLOPs")
        return "\n".join(lines)


def block_flops(cfg: MvfbConfig, h: int, w: int) -> dict:
    """Per-layer FLOPs of one block at full-resolution input h x w."""
    s = cfg.scale
    wm, ws = cfg.motion_width, cfg.spatial_width
    hs, wss = h // s, w // s
    hh, hw = h // 2, w // 2
    layers = {}
    if s > 1:
        layers["motion.resize_in"] = _IN_CHANNELS * hs * wss
    cin = _IN_CHANNELS
    for i in range(3):
        layers[f"motion{i}.conv"] = conv2d_flops(cin, wm, 3, hs, wss, bias=True)
        layers[f"motion{i}.prelu"] = wm * hs * wss
        cin = wm
    if (hs, wss) != (hh, hw):
        layers["motion.resize_out"] = wm * hh * hw
    merged = wm
    if cfg.spatial_path:
        layers["spatial0.conv"] = conv2d_flops(_IN_CHANNELS, ws, 3, hh, hw, bias=True)
        layers["spatial0.prelu"] = ws * hh * hw
        layers["spatial1.conv"] = conv2d_flops(ws, ws, 3, hh, hw, bias=True)
        layers["spatial1.prelu"] = ws * hh * hw
        merged += ws
    layers["merge.tconv"] = transposed_conv2d_flops(merged, _STATE_CHANNELS, 4, hh, hw, h, w, bias=True)
    layers["flow.residual_add"] = _STATE_CHANNELS * h * w
    layers["fusion.sigmoid"] = h * w
    layers["warp.prev"] = 3 * h * w
    layers["warp.cur"] = 3 * h * w
    layers["fusion.blend"] = 4 * 3 * h * w + h * w
    return layers


def routing_net_flops(net: RoutingNet, h: int, w: int) -> dict:
    w1, w2 = net.widths
    hd, wd = max(1, h // net.downsample), max(1, w // net.downsample)
    h1, w1o = (hd + 2 - 3) // 2 + 1, (wd + 2 - 3) // 2 + 1
    h2, w2o = (h1 + 2 - 3) // 2 + 1, (w1o + 2 - 3) // 2 + 1
    layers = {
        "resize_in": net.in_channels * hd * wd,
        "conv1": conv2d_flops(net.in_channels, w1, 3, h1, w1o, bias=True),
        "prelu1": w1 * h1 * w1o,
        "conv2": conv2d_flops(w1, w2, 3, h2, w2o, bias=True),
        "prelu2": w2 * h2 * w2o,
        "pool": w2,
        "head": linear_flops(w2, net.n_blocks, bias=True),
    }
    return layers


def model_ledger(model: DmvfnModel, h: int, w: int) -> FlopsLedger:
    """Static per-sample ledger for frames of size h x w."""
    return FlopsLedger(
        block_layers=[block_flops(bc, h, w) for bc in model.cfg.block_configs()],
        routing_layers=routing_net_flops(model.routing, h, w),
    )


@dataclass
class UsageStats:
    """Average selection rate of each block, overall and per subset."""

    rates: dict = field(default_factory=dict)   # subset -> (n_blocks,) float array
    counts: dict = field(default_factory=dict)  # subset -> sample count

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.rates):
            vals = " ".join(f"{v * 100:6.2f}" for v in self.rates[key])
            lines.append(f"{key} (n={self.counts[key]}): {vals}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["subset,block,usage_rate_x100,n"]
        for key in sorted(self.rates):
            for i, v in enumerate(self.rates[key]):
                lines.append(f"{key},{i},{v * 100:.4f},{self.counts[key]}")
        return "\n".join(lines) + "\n"


def usage_rate(model: DmvfnModel, clips, mode: RoutingMode,
               rng: np.random.Generator | None = None, by: str | None = None,
               intervals=(1, 3, 5)) -> UsageStats:
    """Dataset-average routing decisions, optionally bucketed.

    ``by='motion'`` groups clips by their motion-magnitude bin;
    ``by='interval'`` re-pairs each clip's inputs at several frame
    intervals and reports one bucket per interval.
    """
    clips = list(clips)
    if not clips:
        raise ValueError("usage_rate: empty dataset")
    if rng is None:
        rng = np.random.default_rng(0)
    sums: dict = {}
    counts: dict = {}

    def tally(key, v_row):
        if key not in sums:
            sums[key] = np.zeros(model.n_blocks, dtype=np.float64)
            counts[key] = 0
        sums[key] += v_row
        counts[key] += 1

    for clip in clips:
        pairs = []
        if by == "interval":
            for it in intervals:
                if len(clip.frames) > it:
                    pairs.append((f"interval_{it}", clip.frames[0], clip.frames[it]))
        else:
            key = clip.motion_bin if (by == "motion" and clip.motion_bin) else None
            pairs.append((key, clip.frames[0], clip.frames[1]))
        for key, f0, f1 in pairs:
            pt, ct = Tensor(f0[None]), Tensor(f1[None])
            with no_grad():
                routing = make_routing(mode, model.routing, pt, ct, "infer", rng)
            v_row = np.asarray(routing.v.data)[0]
            tally("all", v_row)
            if key:
                tally(key, v_row)
    rates = {k: sums[k] / counts[k] for k in sums}
    return UsageStats(rates, counts)
