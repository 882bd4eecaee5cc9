"""Image quality metrics and dataset-level evaluation reports.

MS-SSIM uses the canonical constants: up to 5 scales, 11x11 Gaussian
window with sigma 1.5, scale weights (0.0448, 0.2856, 0.3001, 0.2363,
0.1333), luminance constants K1=0.01 / K2=0.03 on the [0,1] range. SSIM is
computed per channel and averaged; when the image is too small for all
five scales the scale count is reduced and the weights renormalized.

PSNR is 10*log10(1/MSE) on the [0,1] range; exactly identical images
report the documented 99 dB cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError
from .tensor import _conv_forward  # reuse the conv kernel for the window sums
from .net import DmvfnModel, predict_sequence
from .routing import RoutingMode

__all__ = [
    "ms_ssim",
    "psnr",
    "MetricRow",
    "MetricReport",
    "copy_last_baseline",
    "evaluate_model",
]

_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_WINDOW_SIZE = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _as_batch(a) -> np.ndarray:
    arr = a.data if isinstance(a, Tensor) else np.asarray(a)
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError(f"metric inputs must be (C,H,W) or (N,C,H,W), got {arr.shape}")
    return arr


def _gaussian_window(size: int = _WINDOW_SIZE, sigma: float = _SIGMA) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _window_filter(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-region Gaussian window sums, independently per channel."""
    n, c, h, w = x.shape
    flat = x.reshape(n * c, 1, h, w)
    out = _conv_forward(flat, win[None, None], stride=1, pad=0)
    return out.reshape(n, c, out.shape[2], out.shape[3])


def _ssim_and_cs(a: np.ndarray, b: np.ndarray, win: np.ndarray):
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    mu1 = _window_filter(a, win)
    mu2 = _window_filter(b, win)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = _window_filter(a * a, win) - mu1_sq
    s2 = _window_filter(b * b, win) - mu2_sq
    s12 = _window_filter(a * b, win) - mu12
    cs_map = (2.0 * s12 + c2) / (s1 + s2 + c2)
    ssim_map = ((2.0 * mu12 + c1) / (mu1_sq + mu2_sq + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def _num_scales(h: int, w: int) -> int:
    s = 0
    side = min(h, w)
    while s < len(_WEIGHTS) and side >= _WINDOW_SIZE:
        s += 1
        side //= 2
    return s


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[2] // 2 * 2, x.shape[3] // 2 * 2
    x = x[:, :, :h, :w]
    return x.reshape(x.shape[0], x.shape[1], h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM of two images or batches on the [0,1] range."""
    xa, xb = _as_batch(a), _as_batch(b)
    if xa.shape != xb.shape:
        raise ShapeError(f"ms_ssim: shapes differ, {xa.shape} vs {xb.shape}")
    scales = _num_scales(xa.shape[2], xa.shape[3])
    if scales == 0:
        raise ShapeError(f"images {xa.shape[2]}x{xa.shape[3]} too small for an {_WINDOW_SIZE}x{_WINDOW_SIZE} SSIM window")
    weights = _WEIGHTS
    if scales < len(_WEIGHTS):
        weights = _WEIGHTS[:scales] / _WEIGHTS[:scales].sum()
    win = _gaussian_window()
    result = 1.0
    for j in range(scales):
        ssim_val, cs_val = _ssim_and_cs(xa, xb, win)
        if j < scales - 1:
            result *= max(cs_val, 0.0) ** weights[j]
            xa, xb = _downsample2(xa), _downsample2(xb)
        else:
            result *= max(ssim_val, 0.0) ** weights[j]
    return float(result)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on the [0,1] range; 99 dB when identical."""
    xa, xb = _as_batch(a), _as_batch(b)
    if xa.shape != xb.shape:
        raise ShapeError(f"psnr: shapes differ, {xa.shape} vs {xb.shape}")
    mse = float(((xa - xb) ** 2).mean())
    if mse == 0.0:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))


# -- dataset reports ---------------------------------------------------------


@dataclass
class MetricRow:
    subset: str
    horizon: int
    metric: str
    value: float
    n: int


@dataclass
class MetricReport:
    """Flat list of (subset, horizon, metric, value, n) rows."""

    rows: list = field(default_factory=list)

    def add(self, subset: str, horizon: int, metric: str, value: float, n: int):
        self.rows.append(MetricRow(subset, horizon, metric, value, n))

    def get(self, subset: str, horizon: int, metric: str) -> float:
        for r in self.rows:
            if r.subset == subset and r.horizon == horizon and r.metric == metric:
                return r.value
        raise KeyError(f"no row ({subset}, {horizon}, {metric})")

    def to_csv(self) -> str:
        lines = ["subset,horizon,metric,value,n"]
        for r in self.rows:
            lines.append(f"{r.subset},{r.horizon},{r.metric},{r.value:.6f},{r.n}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max((len(r.subset) for r in self.rows), default=6)
        lines = [f"{'subset':<{width}}  horizon  {'metric':<14}  value      n"]
        for r in self.rows:
            lines.append(f"{r.subset:<{width}}  t+{r.horizon:<5}  {r.metric:<14}  {r.value:9.4f}  {r.n}")
        return "\n".join(lines)


class _Accumulator:
    def __init__(self):
        self.store = {}

    def add(self, subset, horizon, metric, value):
        self.store.setdefault((subset, horizon, metric), []).append(value)

    def report(self) -> MetricReport:
        rep = MetricReport()
        for (subset, horizon, metric), vals in sorted(self.store.items()):
            rep.add(subset, horizon, metric, float(np.mean(vals)), len(vals))
        return rep


def _clip_subsets(clip):
    subsets = ["all"]
    if clip.motion_bin:
        subsets.append(clip.motion_bin)
    return subsets


def _score(acc, prefix, clip, horizon, pred, truth):
    for subset in _clip_subsets(clip):
        acc.add(prefix + subset, horizon, "ms_ssim_x100", ms_ssim(pred, truth) * 100.0)
        acc.add(prefix + subset, horizon, "psnr_db", psnr(pred, truth))


def copy_last_baseline(clips, horizons) -> MetricReport:
    """Metrics of predicting every future frame as the last observed frame."""
    clips = list(clips)
    if not clips:
        raise ValueError("copy_last_baseline: empty dataset")
    horizons = sorted(horizons)
    acc = _Accumulator()
    for clip in clips:
        if len(clip.frames) < 2 + horizons[-1]:
            raise ValueError(f"clip {clip.name!r} lacks ground truth for horizon {horizons[-1]}")
        cur = clip.frames[1]
        for h in horizons:
            _score(acc, "copy_last/", clip, h, cur, clip.frames[1 + h])
    return acc.report()


def evaluate_model(model: DmvfnModel, clips, horizons, mode: RoutingMode | None = None,
                   rng: np.random.Generator | None = None,
                   include_copy_last: bool = True) -> MetricReport:
    """Rollout metrics per horizon, grouped by subset tags, plus the baseline."""
    clips = list(clips)
    if not clips:
        raise ValueError("evaluate_model: empty dataset")
    if rng is None:
        rng = np.random.default_rng(0)
    horizons = sorted(horizons)
    k = horizons[-1]
    acc = _Accumulator()
    for clip in clips:
        if len(clip.frames) < 2 + k:
            raise ValueError(f"clip {clip.name!r} lacks ground truth for horizon {k}")
        preds = predict_sequence(model, clip.frames[0], clip.frames[1], k, mode=mode, rng=rng)
        for h in horizons:
            _score(acc, "", clip, h, preds[h - 1], clip.frames[1 + h])
    report = acc.report()
    if include_copy_last:
        report.rows.extend(copy_last_baseline(clips, horizons).rows)
    return report
