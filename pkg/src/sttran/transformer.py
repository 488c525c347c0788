"""Spatial encoder, frame encodings and the sliding-window temporal decoder.

Entries from several frames (or windows) are processed in one call: a
boolean block mask keeps attention inside each frame (encoder) or each
window (decoder), which is exactly equivalent to running the groups one by
one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import Parameter, ParameterSet, Tensor, layer_norm, linear, relu, softmax, take, transpose

DropFn = Callable[[Tensor], Tensor]


def _identity(x: Tensor) -> Tensor:
    return x


@dataclass
class AttentionParams:
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter
    n_heads: int

    @classmethod
    def build(cls, ps: ParameterSet, prefix: str, d: int, n_heads: int, d_ff: int) -> "AttentionParams":
        if d % n_heads:
            raise ValueError(f"d_model={d} is not divisible by n_heads={n_heads}")
        return cls(
            w_q=ps.weight(f"{prefix}.w_q", d, d),
            w_k=ps.weight(f"{prefix}.w_k", d, d),
            w_v=ps.weight(f"{prefix}.w_v", d, d),
            w_o=ps.weight(f"{prefix}.w_o", d, d),
            ffn_w1=ps.weight(f"{prefix}.ffn.w1", d, d_ff),
            ffn_b1=ps.zeros(f"{prefix}.ffn.b1", d_ff),
            ffn_w2=ps.weight(f"{prefix}.ffn.w2", d_ff, d),
            ffn_b2=ps.zeros(f"{prefix}.ffn.b2", d),
            ln1_g=ps.ones(f"{prefix}.ln1.g", d),
            ln1_b=ps.zeros(f"{prefix}.ln1.b", d),
            ln2_g=ps.ones(f"{prefix}.ln2.g", d),
            ln2_b=ps.zeros(f"{prefix}.ln2.b", d),
            n_heads=n_heads,
        )

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(D_k)) V over the last two axes."""
    if k.shape[-2] == 0:
        raise ValueError("attention over an empty key set")
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = (q @ transpose(k, axes)) * (1.0 / np.sqrt(q.shape[-1]))
    return softmax(logits, axis=-1, mask=mask) @ v


def _split_heads(x: Tensor, h: int) -> Tensor:
    n, d = x.shape
    return transpose(x.reshape(n, h, d // h), (1, 0, 2))


def multi_head(
    x_q: Tensor,
    x_k: Tensor,
    params: AttentionParams,
    x_v: Tensor | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Concat(head_1..head_h) W_O with head_i = attention(x_q W_Qi, x_k W_Ki, x_v W_Vi)."""
    x_v = x_k if x_v is None else x_v
    h = params.n_heads
    n, d = x_q.shape
    q = _split_heads(x_q @ params.w_q, h)
    k = _split_heads(x_k @ params.w_k, h)
    v = _split_heads(x_v @ params.w_v, h)
    heads = attention(q, k, v, None if mask is None else mask[None])
    merged = transpose(heads, (1, 0, 2)).reshape(n, d)
    return merged @ params.w_o


def att_layer(
    x_q: Tensor,
    x_k: Tensor,
    x_residual: Tensor,
    params: AttentionParams,
    x_v: Tensor | None = None,
    mask: np.ndarray | None = None,
    drop: DropFn = _identity,
) -> Tensor:
    """Multi-head attention and a ReLU feed-forward block, each followed by
    residual addition and layer normalisation."""
    y1 = layer_norm(x_residual + drop(multi_head(x_q, x_k, params, x_v, mask)), params.ln1_g, params.ln1_b)
    inner = drop(relu(linear(y1, params.ffn_w1, params.ffn_b1)))
    ff = linear(inner, params.ffn_w2, params.ffn_b2)
    return layer_norm(y1 + drop(ff), params.ln2_g, params.ln2_b)


def group_mask(groups: np.ndarray) -> np.ndarray:
    groups = np.asarray(groups)
    return groups[:, None] == groups[None, :]


def spatial_encoder(
    x: Tensor,
    frame_of_entry: np.ndarray,
    layers: list[AttentionParams],
    drop: DropFn = _identity,
) -> Tensor:
    """Self-attention restricted to entries of the same frame; no positions."""
    mask = group_mask(frame_of_entry)
    for p in layers:
        x = att_layer(x, x, x, p, mask=mask, drop=drop)
    return x


# -- frame encoding -------------------------------------------------------------


@dataclass
class FrameEncoding:
    kind: str
    vectors: Tensor  # (eta, D)

    def for_slots(self, slots: np.ndarray) -> Tensor:
        return take(self.vectors, slots)


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def build_frame_encoding(kind: str, eta: int, d: int, ps: ParameterSet | None = None, std: float = 0.02) -> FrameEncoding:
    if eta < 1:
        raise ValueError("window size must be >= 1")
    if kind == "learned":
        if ps is None:
            raise ValueError("learned frame encodings need a ParameterSet")
        return FrameEncoding(kind, ps.normal("frame_encoding", (eta, d), std))
    if kind == "sinusoidal":
        return FrameEncoding(kind, Tensor(sinusoidal_table(eta, d)))
    if kind == "none":
        return FrameEncoding(kind, Tensor(np.zeros((eta, d))))
    raise ValueError(f"unknown frame encoding {kind!r}")


# -- sliding windows ----------------------------------------------------------------


@dataclass
class WindowBatch:
    index: int  # 0-based window number
    frames: list[int]  # 0-based frame indices, one per slot

    @property
    def n_slots(self) -> int:
        return len(self.frames)


def window_starts(n_frames: int, eta: int, stride: int = 1) -> list[int]:
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if not 1 <= stride <= eta:
        raise ValueError(f"stride {stride} must lie in [1, {eta}] to cover every frame")
    if n_frames <= eta:
        return [0]
    last = n_frames - eta
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


def make_windows(n_frames: int, eta: int, stride: int = 1) -> list[WindowBatch]:
    """Consecutive frame windows of size ``eta``; one shorter window if T < eta."""
    size = min(eta, n_frames)
    return [WindowBatch(w, list(range(s, s + size))) for w, s in enumerate(window_starts(n_frames, eta, stride))]


def select_final(windows: list[WindowBatch], n_frames: int) -> list[tuple[int, int]]:
    """(window, slot) supplying each frame's output: the earliest window holding it."""
    out: list[tuple[int, int] | None] = [None] * n_frames
    for w in windows:
        for slot, f in enumerate(w.frames):
            if out[f] is None:
                out[f] = (w.index, slot)
    if any(o is None for o in out):
        raise ValueError("windows do not cover every frame")
    return out  # type: ignore[return-value]


@dataclass
class WindowLayout:
    """Flattened window entries: source row, window id and slot per entry."""

    source: np.ndarray
    window: np.ndarray
    slot: np.ndarray
    final: np.ndarray  # per input row, the entry index chosen for the output


def layout_windows(frame_of_entry: np.ndarray, windows: list[WindowBatch]) -> WindowLayout:
    frame_of_entry = np.asarray(frame_of_entry)
    rows_of = {f: np.flatnonzero(frame_of_entry == f) for f in np.unique(frame_of_entry)}
    src, win, slot = [], [], []
    for w in windows:
        for s, f in enumerate(w.frames):
            rows = rows_of.get(f, np.zeros(0, dtype=np.int64))
            src.append(rows)
            win.append(np.full(len(rows), w.index))
            slot.append(np.full(len(rows), s))
    source = np.concatenate(src).astype(np.int64)
    window = np.concatenate(win).astype(np.int64)
    slots = np.concatenate(slot).astype(np.int64)
    n_frames = max(max(w.frames) for w in windows) + 1
    chosen = select_final(windows, n_frames)
    final = np.empty(len(frame_of_entry), dtype=np.int64)
    for r, f in enumerate(frame_of_entry):
        w, s = chosen[f]
        hit = np.flatnonzero((source == r) & (window == w))
        final[r] = hit[0]
    return WindowLayout(source, window, slots, final)


def temporal_decoder(
    x: Tensor,
    frame_of_entry: np.ndarray,
    windows: list[WindowBatch],
    encoding: FrameEncoding,
    layers: list[AttentionParams],
    reencode_every_layer: bool = True,
    drop: DropFn = _identity,
) -> tuple[Tensor, WindowLayout]:
    """Run the decoder over every window and return (all entries, layout).

    In each layer queries and keys are the window entries plus the frame
    encoding of their slot; values are the entries themselves. Use
    ``take(out, layout.final)`` for the per-row outputs.
    """
    layout = layout_windows(frame_of_entry, windows)
    z = take(x, layout.source)
    enc = encoding.for_slots(layout.slot)
    mask = group_mask(layout.window)
    for n, p in enumerate(layers):
        qk = z + enc if (n == 0 or reencode_every_layer) else z
        z = att_layer(qk, qk, z, p, x_v=z, mask=mask, drop=drop)
    return z, layout
