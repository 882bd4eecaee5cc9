"""Synthetic moving-shape clips, PNG sequence IO, and patch sampling.

The generator is the desk-scale stand-in for real video training data:
anti-aliased rectangles and disks translating at constant velocity over a
static background, fully determined by the config seed. Clips carry a
motion-magnitude bin (slow <= 2 px/frame, fast >= 4) so evaluation can
bucket results the way real benchmarks split by motion range.

On disk a clip is a directory of zero-padded 8-bit RGB PNGs; a dataset is
a JSON manifest listing clip directories with optional subset tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

__all__ = [
    "SynthConfig",
    "Shape",
    "ClipRecord",
    "motion_bin_of",
    "render_clip",
    "gen_moving_shapes",
    "load_sequence",
    "save_frames",
    "sample_patch",
    "interval_subsample",
    "write_manifest",
    "load_manifest",
    "load_dataset",
    "write_synth_dataset",
]


@dataclass
class SynthConfig:
    """Deterministic moving-shapes generator settings."""

    height: int = 64
    width: int = 64
    num_clips: int = 32
    frames: int = 8
    shapes: tuple = (2, 4)            # inclusive range of shapes per clip
    kinds: tuple = ("rect", "disk")
    speed: tuple = (0.0, 6.0)         # px/frame magnitude range
    size: tuple = (5.0, 12.0)         # half-extent / radius range, px
    intensity: tuple = (0.25, 1.0)
    background: str = "gradient"      # gradient | gray | black
    seed: int = 0

    def __post_init__(self):
        lim = min(self.height, self.width)
        if self.speed[1] > lim / 4:
            raise ValueError(f"max speed {self.speed[1]} exceeds canvas/4 = {lim / 4}")
        if 2 * self.size[1] > lim:
            raise ValueError(f"shape size {self.size[1]} too large for {self.height}x{self.width} canvas")
        if self.background not in ("gradient", "gray", "black"):
            raise ValueError(f"unknown background mode {self.background!r}")
        if self.frames < 1 or self.num_clips < 1:
            raise ValueError("frames and num_clips must be >= 1")
        if self.shapes[0] < 1:
            raise ValueError("need at least one shape per clip")


@dataclass
class Shape:
    kind: str       # rect | disk
    cx: float
    cy: float
    half_w: float   # disk: radius
    half_h: float
    color: np.ndarray
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))


@dataclass
class ClipRecord:
    """Ordered frames plus the metadata evaluation buckets key on."""

    frames: list
    name: str = ""
    motion_bin: str = ""
    max_speed: float = 0.0
    interval: int = 1
    tags: dict = field(default_factory=dict)


def motion_bin_of(max_speed: float) -> str:
    if max_speed <= 2.0:
        return "slow"
    if max_speed >= 4.0:
        return "fast"
    return "medium"


def _background(cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    if cfg.background == "black":
        return np.zeros((3, h, w), dtype=np.float32)
    if cfg.background == "gray":
        return np.full((3, h, w), 0.5, dtype=np.float32)
    yy = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    xx = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :]
    ramp = 0.1 + 0.3 * xx + 0.2 * yy
    return np.broadcast_to(ramp, (3, h, w)).astype(np.float32)


def _coverage(shape: Shape, cx: float, cy: float, h: int, w: int) -> np.ndarray:
    """Per-pixel alpha of the shape at the given center, in [0,1]."""
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    if shape.kind == "rect":
        # exact cell coverage of the axis-aligned box [cx-hw, cx+hw] x [cy-hh, cy+hh],
        # pixel i owning the cell [i-0.5, i+0.5)
        covx = np.clip(np.minimum(cx + shape.half_w, xs + 0.5) - np.maximum(cx - shape.half_w, xs - 0.5), 0.0, 1.0)
        covy = np.clip(np.minimum(cy + shape.half_h, ys + 0.5) - np.maximum(cy - shape.half_h, ys - 0.5), 0.0, 1.0)
        return (covy[:, None] * covx[None, :]).astype(np.float32)
    if shape.kind == "disk":
        dist = np.hypot(ys[:, None] - cy, xs[None, :] - cx)
        return np.clip(shape.half_w + 0.5 - dist, 0.0, 1.0).astype(np.float32)
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def render_clip(shapes, cfg: SynthConfig) -> ClipRecord:
    """Render a clip of the given shapes translating at constant velocity.

    Shape centers are clamped so shapes stay inside the canvas; shapes are
    composited in list order.
    """
    h, w = cfg.height, cfg.width
    for s in shapes:
        if 2 * s.half_w > w or 2 * s.half_h > h:
            raise ValueError(f"shape of size {2 * s.half_w}x{2 * s.half_h} larger than canvas {w}x{h}")
    bg = _background(cfg)
    frames = []
    for t in range(cfg.frames):
        img = bg.copy()
        for s in shapes:
            cx = float(np.clip(s.cx + s.vx * t, s.half_w, w - 1 - s.half_w))
            cy = float(np.clip(s.cy + s.vy * t, s.half_h, h - 1 - s.half_h))
            alpha = _coverage(s, cx, cy, h, w)[None]
            img = img * (1.0 - alpha) + s.color[:, None, None] * alpha
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    max_speed = max((s.speed for s in shapes), default=0.0)
    return ClipRecord(frames, motion_bin=motion_bin_of(max_speed), max_speed=max_speed,
                      tags={"motion": motion_bin_of(max_speed)})


def gen_moving_shapes(cfg: SynthConfig):
    """Yield ``cfg.num_clips`` deterministic clips (same config, same bytes)."""
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    for i in range(cfg.num_clips):
        count = int(rng.integers(cfg.shapes[0], cfg.shapes[1] + 1))
        shapes = []
        for _ in range(count):
            kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
            hw = float(rng.uniform(*cfg.size))
            hh = hw if kind == "disk" else float(rng.uniform(*cfg.size))
            color = rng.uniform(*cfg.intensity, size=3).astype(np.float32)
            cx = float(rng.uniform(hw, w - 1 - hw))
            cy = float(rng.uniform(hh, h - 1 - hh))
            speed = float(rng.uniform(*cfg.speed))
            angle = float(rng.uniform(0.0, 2.0 * np.pi))
            shapes.append(Shape(kind, cx, cy, hw, hh, color, speed * np.cos(angle), speed * np.sin(angle)))
        clip = render_clip(shapes, cfg)
        clip.name = f"clip{i:04d}"
        yield clip


# -- PNG sequence IO ----------------------------------------------------------


def load_sequence(path) -> ClipRecord:
    """Load a directory of lexicographically ordered RGB PNG frames."""
    d = Path(path)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    files = sorted(d.glob("*.png"))
    if not files:
        raise DataError(f"no frames in {d}")
    frames = []
    dims = None
    for f in files:
        try:
            img = Image.open(f).convert("RGB")
        except Exception as e:
            raise DataError(f"unreadable frame {f}: {e}") from e
        arr = np.asarray(img, dtype=np.float32) / 255.0
        arr = np.clip(arr.transpose(2, 0, 1), 0.0, 1.0)
        if dims is None:
            dims = arr.shape
        elif arr.shape != dims:
            raise DataError(f"frame {f} has dims {arr.shape[1:]}, expected {dims[1:]}")
        frames.append(arr)
    return ClipRecord(frames, name=d.name)


def save_frames(frames, path) -> None:
    """Write frames as zero-padded 8-bit RGB PNGs (inverse of load, up to quantization)."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        arr = np.asarray(frame)
        q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(q.transpose(1, 2, 0)).save(d / f"{i:06d}.png")


# -- record transforms ----------------------------------------------------------


def sample_patch(clip: ClipRecord, size: int, rng: np.random.Generator) -> ClipRecord:
    """One uniformly random crop window applied identically to all frames."""
    c, h, w = clip.frames[0].shape
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds frame size {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    frames = [f[:, top:top + size, left:left + size] for f in clip.frames]
    return ClipRecord(frames, name=clip.name, motion_bin=clip.motion_bin,
                      max_speed=clip.max_speed, interval=clip.interval, tags=dict(clip.tags))


def interval_subsample(clip: ClipRecord, interval: int) -> ClipRecord:
    """Take every ``interval``-th frame and record the stride in metadata."""
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    frames = clip.frames[::interval]
    if len(frames) < 3:
        raise ValueError(f"clip {clip.name!r} has too few frames for interval {interval}")
    return ClipRecord(frames, name=clip.name, motion_bin=clip.motion_bin,
                      max_speed=clip.max_speed, interval=interval, tags=dict(clip.tags))


# -- manifests -------------------------------------------------------------------


def write_manifest(entries, path) -> None:
    """Write a dataset manifest: a JSON list of {path, tags} records."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(list(entries), indent=2, sort_keys=True) + "\n")


def load_manifest(path):
    """Read a manifest into (clip_dir, tags) pairs, resolving relative paths."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"manifest not found: {p}")
    try:
        entries = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"invalid manifest {p}: {e}") from e
    if not isinstance(entries, list):
        raise DataError(f"manifest {p} must be a JSON list")
    out = []
    for entry in entries:
        if isinstance(entry, str):
            clip_dir, tags = entry, {}
        elif isinstance(entry, dict) and "path" in entry:
            clip_dir, tags = entry["path"], dict(entry.get("tags", {}))
        else:
            raise DataError(f"bad manifest entry: {entry!r}")
        q = Path(clip_dir)
        if not q.is_absolute():
            q = p.parent / q
        out.append((q, tags))
    return out


def load_dataset(manifest_path):
    """Load every clip named by a manifest, applying its subset tags."""
    clips = []
    for clip_dir, tags in load_manifest(manifest_path):
        clip = load_sequence(clip_dir)
        clip.tags = tags
        clip.motion_bin = tags.get("motion", "")
        clips.append(clip)
    if not clips:
        raise DataError(f"manifest {manifest_path} lists no clips")
    return clips


def write_synth_dataset(cfg: SynthConfig, root) -> Path:
    """Generate, rasterize and index a synthetic dataset; returns the manifest path."""
    root = Path(root)
    entries = []
    for clip in gen_moving_shapes(cfg):
        save_frames(clip.frames, root / clip.name)
        entries.append({"path": clip.name, "tags": dict(clip.tags)})
    manifest = root / "manifest.json"
    write_manifest(entries, manifest)
    return manifest
