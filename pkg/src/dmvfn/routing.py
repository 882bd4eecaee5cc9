"""Per-sample block routing: logits net, STEBS, Gumbel Softmax, baselines.

The routing network looks at the two input frames and emits one logit per
refinement block. STEBS turns logits into block-selection probabilities by
budget normalization, samples hard 0/1 decisions, and backpropagates
through the sample with a straight-through identity rule. The Gumbel
variant relaxes each binary choice with a two-class softmax at temperature
tau. Baselines: always-on (the routing-free super network) and iid random
selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, Param, ShapeError

__all__ = [
    "RoutingMode",
    "RoutingNet",
    "RoutingVector",
    "routing_logits",
    "stebs_sample",
    "gumbel_sample",
    "make_routing",
    "tau_schedule",
]


@dataclass
class RoutingMode:
    """Routing variant plus its knobs.

    ``beta`` scales the normalized sample rate (expected selected blocks =
    beta * n before clamping); training fixes it at 0.5 and inference may
    move it to trade cost against quality. ``deterministic_infer`` replaces
    inference-time Bernoulli sampling with a threshold at 0.5 for
    reproducibility studies.
    """

    kind: str = "stebs"  # always_on | random | gumbel | stebs
    p: float = 0.5
    beta: float = 0.5
    tau_start: float = 5.0
    tau_end: float = 0.1
    reg_weight: float = 0.01
    deterministic_infer: bool = False

    def __post_init__(self):
        if self.kind not in ("always_on", "random", "gumbel", "stebs"):
            raise ValueError(f"unknown routing mode {self.kind!r}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (self.tau_start >= self.tau_end > 0):
            raise ValueError(f"need tau_start >= tau_end > 0, got {self.tau_start}, {self.tau_end}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"selection probability must be in [0,1], got {self.p}")


@dataclass
class RoutingVector:
    """Per-sample routing state: raw logits, probabilities and selections.

    ``v`` holds the blend weights actually applied to the blocks: hard 0/1
    samples for STEBS/random/always-on, soft values in (0,1) for Gumbel at
    training time. ``w`` holds the normalized per-block probabilities used
    for expected-cost accounting and logging.
    """

    kind: str
    v: Tensor
    w: np.ndarray
    logits: np.ndarray | None = None


class RoutingNet:
    """Tiny conv net over the concatenated frame pair, one logit per block.

    The input is downsampled 4x before the conv stack so the static cost
    stays a small fraction of the super network's. The linear head starts
    at zero, so every block initially has selection probability 0.5 before
    budget normalization.
    """

    def __init__(self, rng: np.random.Generator, n_blocks: int, in_channels: int = 6,
                 widths=(16, 32), downsample: int = 4):
        self.n_blocks = n_blocks
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.downsample = downsample
        w1, w2 = self.widths
        self.conv1_w = T.kaiming_normal(rng, (w1, in_channels, 3, 3), in_channels * 9)
        self.conv1_b = T.zeros((w1,))
        self.act1 = Tensor(np.full(w1, 0.25, dtype=np.float32))
        self.conv2_w = T.kaiming_normal(rng, (w2, w1, 3, 3), w1 * 9)
        self.conv2_b = T.zeros((w2,))
        self.act2 = Tensor(np.full(w2, 0.25, dtype=np.float32))
        self.head_w = T.zeros((w2, n_blocks))
        self.head_b = T.zeros((n_blocks,))
        for t in (self.conv1_w, self.conv1_b, self.act1, self.conv2_w, self.conv2_b,
                  self.act2, self.head_w, self.head_b):
            t.requires_grad = True

    def params(self, prefix: str = "routing"):
        named = [
            ("conv1.w", self.conv1_w), ("conv1.b", self.conv1_b), ("conv1.a", self.act1),
            ("conv2.w", self.conv2_w), ("conv2.b", self.conv2_b), ("conv2.a", self.act2),
            ("head.w", self.head_w), ("head.b", self.head_b),
        ]
        return [Param(f"{prefix}.{name}", t) for name, t in named]

    def logits(self, prev: Tensor, cur: Tensor) -> Tensor:
        if prev.shape != cur.shape:
            raise ShapeError(f"routing_logits: frame shapes differ, {prev.shape} vs {cur.shape}")
        x = T.concat_channels([prev, cur])
        h, w = x.shape[2], x.shape[3]
        x = T.bilinear_resize(x, max(1, h // self.downsample), max(1, w // self.downsample))
        x = T.prelu(T.conv2d(x, self.conv1_w, self.conv1_b, stride=2, padding=1), self.act1)
        x = T.prelu(T.conv2d(x, self.conv2_w, self.conv2_b, stride=2, padding=1), self.act2)
        pooled = T.global_avg_pool(x)
        return T.linear(pooled, self.head_w, self.head_b)


def routing_logits(net: RoutingNet, prev: Tensor, cur: Tensor) -> Tensor:
    """One row of block-selection logits per sample."""
    return net.logits(prev, cur)


def stebs_sample(logits: Tensor, beta: float, rng: np.random.Generator):
    """Straight-through Bernoulli sampling with budget normalization.

    Probabilities are w_i = min(beta * n * sigmoid(l_i) / sum_j sigmoid(l_j), 1),
    then v_i ~ Bernoulli(w_i) with an identity backward onto w. Returns
    (v, w). Accepts a single logit vector or a batch of rows.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    n = logits.shape[-1]
    sig = T.sigmoid(logits)
    total = T.sum_axis(sig, axis=logits.ndim - 1, keepdims=True)
    w = T.minimum_scalar(T.mul_scalar(T.div(sig, total), beta * n), 1.0)
    v = T.ste_bernoulli(w, rng)
    return v, w


def stebs_probabilities(logits: np.ndarray, beta: float) -> np.ndarray:
    """Plain-array version of the STEBS normalization, for cost accounting."""
    sig = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    n = sig.shape[-1]
    raw = beta * n * sig / sig.sum(axis=-1, keepdims=True)
    return np.minimum(raw, 1.0)


def gumbel_sample(logits: Tensor, tau: float, rng: np.random.Generator) -> Tensor:
    """Two-class Gumbel Softmax relaxation of each block choice.

    v_i = exp((l_i + G_i)/tau) / (exp((l_i + G_i)/tau) + exp((2 - l_i - G_i)/tau))
    with G_i ~ Gumbel(0,1); evaluated in the numerically safe sigmoid form
    sigmoid(2 (l_i + G_i - 1) / tau), so large logits cannot overflow.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    noise = Tensor(rng.gumbel(size=logits.shape).astype(logits.dtype))
    shifted = T.add_scalar(T.add(logits, noise), -1.0)
    return T.sigmoid(T.mul_scalar(shifted, 2.0 / tau))


def tau_schedule(step: int, total: int, tau_start: float, tau_end: float) -> float:
    """Exponential temperature decay from tau_start to tau_end."""
    if total <= 0:
        return tau_end
    frac = min(max(step / total, 0.0), 1.0)
    return float(tau_start * (tau_end / tau_start) ** frac)


def make_routing(mode: RoutingMode, net: RoutingNet, prev: Tensor, cur: Tensor,
                 phase: str, rng: np.random.Generator, tau: float | None = None) -> RoutingVector:
    """Build the per-sample routing vector for one forward pass.

    Training phases return blend weights wired into the tape (STEBS hard
    samples with straight-through gradients, Gumbel soft values); inference
    returns hard 0/1 selections.
    """
    if phase not in ("train", "infer"):
        raise ValueError(f"unknown phase {phase!r}")
    n = net.n_blocks
    batch = prev.shape[0]

    if mode.kind == "always_on":
        ones = np.ones((batch, n), dtype=np.float32)
        return RoutingVector("always_on", Tensor(ones), ones.copy())

    if mode.kind == "random":
        v = (rng.random((batch, n)) < mode.p).astype(np.float32)
        w = np.full((batch, n), mode.p, dtype=np.float32)
        return RoutingVector("random", Tensor(v), w)

    if mode.kind == "stebs":
        if phase == "infer":
            with T.no_grad():
                logits = routing_logits(net, prev, cur)
                w = stebs_probabilities(logits.data, mode.beta).astype(np.float32)
                if mode.deterministic_infer:
                    v = (w > 0.5).astype(np.float32)
                else:
                    v = (rng.random(w.shape) < w).astype(np.float32)
            return RoutingVector("stebs", Tensor(v), w, logits.data)
        logits = routing_logits(net, prev, cur)
        v, w = stebs_sample(logits, mode.beta, rng)
        return RoutingVector("stebs", v, w.data.copy(), logits.data)

    # gumbel
    t = tau if tau is not None else (mode.tau_end if phase == "infer" else mode.tau_start)
    if phase == "infer":
        with T.no_grad():
            logits = routing_logits(net, prev, cur)
            soft = gumbel_sample(logits, t, rng)
            v = (soft.data > 0.5).astype(np.float32)
        return RoutingVector("gumbel", Tensor(v), soft.data.copy(), logits.data)
    logits = routing_logits(net, prev, cur)
    soft = gumbel_sample(logits, t, rng)
    return RoutingVector("gumbel", soft, soft.data.copy(), logits.data)
