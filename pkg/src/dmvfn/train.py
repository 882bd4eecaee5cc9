"""Training loop: patch sampling, routed forward, AdamW, logging, resume.

Fully deterministic given the config seed: one generator drives batch
selection, crop windows and routing noise in a fixed order, and its state
rides along in every checkpoint so a resumed run continues the training
log byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .tensor import Tensor
from .net import DmvfnModel, DmvfnConfig, dmvfn_forward
from .routing import RoutingMode, make_routing, tau_schedule
from .loss import LossConfig, total_loss
from .optim import adamw_step, cosine_lr
from .data import load_dataset, sample_patch
from .checkpoint import save_checkpoint, load_checkpoint, restore_model
from .errors import DataError, NumericError

__all__ = ["TrainConfig", "TrainResult", "train", "build_model", "LOG_HEADER"]

LOG_HEADER = "step,lr,loss,mean_w_sum,selected_blocks_mean"


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-scale recipe is kept as a named profile."""

    manifest: str = ""
    steps: int = 2000
    batch: int = 8
    patch: int = 64
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 0.8
    levels: int = 5
    supervision: str = "full"
    routing_mode: str = "stebs"
    beta: float = 0.5
    random_p: float = 0.5
    tau_start: float = 5.0
    tau_end: float = 0.1
    gumbel_reg_weight: float = 0.01
    schedule: str = "[4,2,1]"
    spatial_path: bool = True
    width_scale: float = 1.0
    seed: int = 0
    ckpt_path: str = "dmvfn.ckpt"
    log_path: str = "train_log.csv"
    ckpt_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.patch % 4:
            raise ValueError(f"patch size must be a multiple of 4, got {self.patch}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")

    @classmethod
    def full_scale_profile(cls, **overrides) -> "TrainConfig":
        """The full-scale training recipe (224px patches, batch 64); not a desk default."""
        base = cls(patch=224, batch=64, steps=240_000, lr_start=1e-4, lr_end=1e-5,
                   weight_decay=1e-4, width_scale=1.0)
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"invalid config JSON {p}: {e}") from e
        return cls.from_dict(d)


@dataclass
class TrainResult:
    model: DmvfnModel
    log_lines: list
    ckpt_path: Path
    log_path: Path


def build_model(cfg: TrainConfig) -> DmvfnModel:
    mcfg = DmvfnConfig(schedule=cfg.schedule, width_scale=cfg.width_scale,
                       spatial_path=cfg.spatial_path)
    init_seed, _ = _seed_children(cfg.seed)
    return DmvfnModel(mcfg, seed=init_seed)


def _seed_children(seed: int):
    return np.random.SeedSequence(seed).spawn(2)


def _routing_mode(cfg: TrainConfig) -> RoutingMode:
    return RoutingMode(kind=cfg.routing_mode, p=cfg.random_p, beta=cfg.beta,
                       tau_start=cfg.tau_start, tau_end=cfg.tau_end,
                       reg_weight=cfg.gumbel_reg_weight)


def _sample_batch(clips, cfg: TrainConfig, rng: np.random.Generator):
    idx = rng.integers(0, len(clips), size=cfg.batch)
    prev, cur, target = [], [], []
    for i in idx:
        patch = sample_patch(clips[int(i)], cfg.patch, rng)
        prev.append(patch.frames[0])
        cur.append(patch.frames[1])
        target.append(patch.frames[2])
    return (Tensor(np.stack(prev)), Tensor(np.stack(cur)), Tensor(np.stack(target)))


def train(cfg: TrainConfig, resume=None) -> TrainResult:
    """Run (or continue) a training job; returns the model and the full log.

    A NaN/Inf loss aborts with :class:`NumericError`; the most recent
    cadence checkpoint stays on disk untouched.
    """
    clips = load_dataset(cfg.manifest)
    for clip in clips:
        if len(clip.frames) < 3:
            raise DataError(f"clip {clip.name!r} has {len(clip.frames)} frames; training needs >= 3")
        h, w = clip.frames[0].shape[1:]
        if min(h, w) < cfg.patch:
            raise DataError(f"clip {clip.name!r} is {h}x{w}, smaller than patch {cfg.patch}")

    _, train_seed = _seed_children(cfg.seed)
    rng = np.random.default_rng(train_seed)
    start_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model = DmvfnModel(DmvfnConfig.from_dict(ckpt.model_cfg))
        restore_model(model, ckpt)
        if ckpt.rng_state is not None:
            rng.bit_generator.state = ckpt.rng_state
        start_step = ckpt.step
        if start_step > cfg.steps:
            raise DataError(f"checkpoint already at step {start_step}, beyond configured {cfg.steps}")
    else:
        model = build_model(cfg)

    mode = _routing_mode(cfg)
    loss_cfg = LossConfig(gamma=cfg.gamma, levels=cfg.levels, supervision=cfg.supervision,
                          gumbel_reg_weight=cfg.gumbel_reg_weight)
    params = model.params()

    ckpt_path = Path(cfg.ckpt_path)
    log_path = Path(cfg.log_path)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    log_lines = [LOG_HEADER]
    with open(log_path, "w") as logf:
        logf.write(LOG_HEADER + "\n")
        for step in range(start_step, cfg.steps):
            lr = cosine_lr(step, cfg.steps, cfg.lr_start, cfg.lr_end)
            prev, cur, target = _sample_batch(clips, cfg, rng)
            tau = tau_schedule(step, cfg.steps, cfg.tau_start, cfg.tau_end)
            try:
                routing = make_routing(mode, model.routing, prev, cur, "train", rng, tau=tau)
                result = dmvfn_forward(model, prev, cur, routing, mode="train")
                loss = total_loss(result.intermediates, target, loss_cfg, routing)
                loss_val = float(loss.data)
                if not np.isfinite(loss_val):
                    raise NumericError(f"non-finite loss at step {step}")
            except NumericError as e:
                logf.flush()
                raise NumericError(f"{e}; last good checkpoint retained") from None
            model.zero_grad()
            loss.backward()
            adamw_step(params, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)

            mean_w = float(np.asarray(routing.w).sum(axis=1).mean())
            sel = float(np.asarray(routing.v.data).sum(axis=1).mean())
            line = f"{step},{lr:.10e},{loss_val:.10e},{mean_w:.10e},{sel:.10e}"
            log_lines.append(line)
            logf.write(line + "\n")

            done = step + 1
            if cfg.ckpt_every and done % cfg.ckpt_every == 0 and done < cfg.steps:
                save_checkpoint(f"{ckpt_path}.step{done}", model, step=done,
                                train_cfg=cfg.to_dict(), rng_state=rng.bit_generator.state)
        save_checkpoint(ckpt_path, model, step=cfg.steps, train_cfg=cfg.to_dict(),
                        rng_state=rng.bit_generator.state)
    return TrainResult(model, log_lines, ckpt_path, log_path)
