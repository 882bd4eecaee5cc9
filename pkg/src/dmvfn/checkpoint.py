"""Binary checkpoint format: params, optimizer moments, RNG state, config.

Layout (all integers little-endian):

    magic       4 bytes  b"DMVF"
    version     u32
    model cfg   u64 length + canonical JSON bytes
    train cfg   u64 length + canonical JSON bytes (may be empty)
    step        u64
    rng state   u64 length + canonical JSON bytes (may be empty)
    n_params    u32
    per param:  u16 name length + UTF-8 name
                u8 rank, rank x u32 dims
                float32 data, float32 m, float32 v (raw, row-major)
                u64 per-param step counter

Canonical JSON means sorted keys and compact separators, which makes
save -> load -> save reproduce files byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .net import DmvfnModel, DmvfnConfig

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "model_from_checkpoint", "restore_model"]

MAGIC = b"DMVF"
VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Checkpoint:
    model_cfg: dict
    train_cfg: dict
    step: int
    rng_state: dict | None
    params: list  # (name, data, m, v, step) tuples


def _pack_blob(out, payload: bytes):
    out.append(struct.pack("<Q", len(payload)))
    out.append(payload)


def save_checkpoint(path, model: DmvfnModel, step: int = 0,
                    train_cfg: dict | None = None, rng_state: dict | None = None) -> None:
    out = [MAGIC, struct.pack("<I", VERSION)]
    _pack_blob(out, canonical_json(model.cfg.to_dict()).encode())
    _pack_blob(out, canonical_json(train_cfg).encode() if train_cfg is not None else b"")
    out.append(struct.pack("<Q", step))
    _pack_blob(out, canonical_json(rng_state).encode() if rng_state is not None else b"")
    params = model.params()
    out.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode()
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        dims = p.tensor.data.shape
        out.append(struct.pack("<B", len(dims)))
        out.append(struct.pack(f"<{len(dims)}I", *dims))
        for arr in (p.tensor.data, p.m, p.v):
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        out.append(struct.pack("<Q", p.step))
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"truncated checkpoint {self.path}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<Q")
        return self.take(n)


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"checkpoint not found: {p}")
    r = _Reader(p.read_bytes(), p)
    if r.take(4) != MAGIC:
        raise DataError(f"not a DMVF checkpoint: {p}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"checkpoint version {version} unsupported (expected {VERSION}): {p}")
    model_cfg = json.loads(r.blob().decode())
    train_blob = r.blob()
    train_cfg = json.loads(train_blob.decode()) if train_blob else {}
    (step,) = r.unpack("<Q")
    rng_blob = r.blob()
    rng_state = json.loads(rng_blob.decode()) if rng_blob else None
    (n_params,) = r.unpack("<I")
    params = []
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        arrs = []
        for _ in range(3):
            raw = r.take(4 * count)
            arrs.append(np.frombuffer(raw, dtype="<f4").reshape(dims).copy())
        (pstep,) = r.unpack("<Q")
        params.append((name, arrs[0], arrs[1], arrs[2], pstep))
    return Checkpoint(model_cfg, train_cfg, step, rng_state, params)


def restore_model(model: DmvfnModel, ckpt: Checkpoint) -> None:
    """Copy checkpoint params into a model built from the same config."""
    by_name = {name: (d, m, v, s) for name, d, m, v, s in ckpt.params}
    for p in model.params():
        if p.name not in by_name:
            raise DataError(f"checkpoint missing parameter {p.name}")
        d, m, v, s = by_name.pop(p.name)
        if d.shape != p.tensor.data.shape:
            raise DataError(f"checkpoint parameter {p.name} has shape {d.shape}, expected {p.tensor.data.shape}")
        p.tensor.data = d.copy()
        p.m = m.copy()
        p.v = v.copy()
        p.step = int(s)
    if by_name:
        raise DataError(f"checkpoint has unknown parameters: {sorted(by_name)}")


def model_from_checkpoint(path) -> tuple[DmvfnModel, Checkpoint]:
    ckpt = load_checkpoint(path)
    model = DmvfnModel(DmvfnConfig.from_dict(ckpt.model_cfg))
    restore_model(model, ckpt)
    return model, ckpt
