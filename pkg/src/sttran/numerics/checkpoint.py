"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"STTC"  u32 version
    u32 len  metadata (UTF-8 JSON, sorted keys)
    u32 n    then n entries: u16 len, name, u8 ndim, u32 dims[ndim], f32 data
    u8 flag  1 if optimizer state follows
      u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps, f64 weight_decay
      u32 n  then n entries: u16 len, name, u8 ndim, u32 dims, f32 m, f32 v
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import OptimizerState

MAGIC = b"STTC"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    metadata: dict = field(default_factory=dict)


def _write_name_shape(buf: io.BytesIO, name: str, shape) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", len(shape)))
    buf.write(struct.pack(f"<{len(shape)}I", *shape))


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name, arr in ckpt.arrays.items():
        _write_name_shape(buf, name, arr.shape)
        buf.write(_f32(arr))
    opt = ckpt.optimizer
    if opt is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", opt.step))
        buf.write(struct.pack("<5d", opt.lr, opt.betas[0], opt.betas[1], opt.eps, opt.weight_decay))
        buf.write(struct.pack("<I", len(opt.exp_avg)))
        for name, m in opt.exp_avg.items():
            _write_name_shape(buf, name, m.shape)
            buf.write(_f32(m))
            buf.write(_f32(opt.exp_avg_sq[name]))
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"unexpected end of checkpoint at byte {self.pos} (wanted {n} more)")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name_shape(self) -> tuple[str, tuple[int, ...]]:
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8")
        (nd,) = self.unpack("<B")
        shape = self.unpack(f"<{nd}I") if nd else ()
        return name, tuple(shape)

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).copy()


def loads(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = r.unpack("<I")
    metadata = json.loads(r.take(mlen).decode("utf-8"))
    (n,) = r.unpack("<I")
    arrays = {}
    for _ in range(n):
        name, shape = r.name_shape()
        arrays[name] = r.array(shape)
    (flag,) = r.unpack("<B")
    opt = None
    if flag:
        (step,) = r.unpack("<Q")
        lr, b1, b2, eps, wd = r.unpack("<5d")
        opt = OptimizerState(lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd, step=step)
        (n,) = r.unpack("<I")
        for _ in range(n):
            name, shape = r.name_shape()
            opt.exp_avg[name] = r.array(shape)
            opt.exp_avg_sq[name] = r.array(shape)
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(arrays, opt, metadata)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
