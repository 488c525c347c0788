"""Relationship representation: visual, spatial and semantic parts of each pair."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data.types import BoundingBox, DetectedObject, FrameDetections
from .numerics import Parameter, ParameterSet, Tensor, concat, conv2d, linear, relu, take

log = logging.getLogger(__name__)


def rasterize_box(box, width: float, height: float, grid: int = 27) -> np.ndarray:
    """Binary ``grid x grid`` mask of the cells whose centres lie inside ``box``.

    Intervals are half-open, so boxes that do not overlap never share a cell.
    A box too small to cover any centre marks the single cell holding its
    centre.
    """
    b = BoundingBox.of(box).clamp(width, height)
    mask = np.zeros((grid, grid), dtype=np.float64)
    u1, u2 = b.x1 * grid / width, b.x2 * grid / width
    v1, v2 = b.y1 * grid / height, b.y2 * grid / height
    c0, c1 = max(math.ceil(u1 - 0.5), 0), min(math.ceil(u2 - 0.5), grid)
    r0, r1 = max(math.ceil(v1 - 0.5), 0), min(math.ceil(v2 - 0.5), grid)
    if c1 <= c0 or r1 <= r0:
        log.warning("box %s covers no mask cell; marking nearest cell", b.as_tuple())
        c = min(max(int((u1 + u2) / 2), 0), grid - 1)
        r = min(max(int((v1 + v2) / 2), 0), grid - 1)
        mask[r, c] = 1.0
        return mask
    mask[r0:r1, c0:c1] = 1.0
    return mask


def pair_masks(sub, obj, width: float, height: float, grid: int = 27) -> np.ndarray:
    """Stacked subject/object masks, shape (2, grid, grid)."""
    return np.stack([rasterize_box(sub, width, height, grid), rasterize_box(obj, width, height, grid)])


@dataclass
class BoxFunction:
    """Convolutional stack mapping (2, G, G) box masks to a union-shaped map."""

    weights: list[Parameter]
    biases: list[Parameter]
    strides: tuple[int, ...]
    paddings: tuple[int, ...]

    @classmethod
    def build(cls, ps: ParameterSet, cfg: ModelConfig, prefix: str = "fbox") -> "BoxFunction":
        n = len(cfg.fbox_kernels)
        chans = [2] + [max(cfg.union_channels // 2 ** (n - 1 - i), 1) for i in range(n)]
        ws, bs = [], []
        for i, k in enumerate(cfg.fbox_kernels):
            ws.append(ps.conv_weight(f"{prefix}.conv{i}.w", chans[i + 1], chans[i], k))
            bs.append(ps.zeros(f"{prefix}.conv{i}.b", chans[i + 1]))
        return cls(ws, bs, cfg.fbox_strides, cfg.fbox_paddings)

    def __call__(self, masks: Tensor) -> Tensor:
        x = masks
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = conv2d(x, w, b, stride=self.strides[i], padding=self.paddings[i])
            if i < last:
                x = relu(x)
        return x


def box_location_features(sub, obj, width: float, height: float, fbox: BoxFunction, grid: int = 27) -> Tensor:
    """Spatial-layout map of one pair, shaped like its union feature map."""
    out = fbox(Tensor(pair_masks(sub, obj, width, height, grid)[None]))
    return out.reshape(out.shape[1:])


@dataclass
class RelationEncoder:
    """Parameters of the relationship representation.

    A pair (i, j) is encoded as the concatenation of the compressed subject
    and object appearance, the compressed union map plus box layout, and the
    semantic embeddings of both object classes.
    """

    w_s: Parameter
    b_s: Parameter
    w_o: Parameter
    b_o: Parameter
    w_u: Parameter
    b_u: Parameter
    semantic: Parameter
    fbox: BoxFunction
    grid: int

    @classmethod
    def build(cls, ps: ParameterSet, cfg: ModelConfig, semantic_table: np.ndarray | None = None) -> "RelationEncoder":
        union_flat = cfg.union_channels * cfg.union_size**2
        w_s = ps.weight("rel.w_s", cfg.visual_dim, cfg.compress_dim)
        b_s = ps.zeros("rel.b_s", cfg.compress_dim)
        w_o = ps.weight("rel.w_o", cfg.visual_dim, cfg.compress_dim)
        b_o = ps.zeros("rel.b_o", cfg.compress_dim)
        w_u = ps.weight("rel.w_u", union_flat, cfg.compress_dim)
        b_u = ps.zeros("rel.b_u", cfg.compress_dim)
        if semantic_table is None:
            semantic = ps.normal("rel.semantic", (cfg.n_object_classes, cfg.semantic_dim), 1.0)
        else:
            if semantic_table.shape != (cfg.n_object_classes, cfg.semantic_dim):
                raise ValueError(f"semantic table {semantic_table.shape} does not match config")
            semantic = ps.constant("rel.semantic", semantic_table)
        fbox = BoxFunction.build(ps, cfg)
        return cls(w_s, b_s, w_o, b_o, w_u, b_u, semantic, fbox, cfg.mask_grid)

    @property
    def out_dim(self) -> int:
        return 3 * self.w_s.shape[1] + 2 * self.semantic.shape[1]

    def encode(
        self,
        visual: Tensor,
        sub_idx: np.ndarray,
        obj_idx: np.ndarray,
        union: np.ndarray,
        masks: np.ndarray,
        labels: np.ndarray,
    ) -> Tensor:
        """Vectorised representation for P pairs.

        visual: (N, D_v) object features; sub_idx/obj_idx: (P,) rows into
        ``visual``; union: (P, C_u, S, S); masks: (P, 2, G, G); labels: (N,)
        class ids used for the semantic lookup.
        """
        n = visual.shape[0]
        for idx in (sub_idx, obj_idx):
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise IndexError(f"pair index out of range for {n} objects")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= self.semantic.shape[0]:
            raise IndexError("object class out of range of the semantic table")
        p = len(sub_idx)
        vs = linear(take(visual, sub_idx), self.w_s, self.b_s)
        vo = linear(take(visual, obj_idx), self.w_o, self.b_o)
        layout = self.fbox(Tensor(masks))
        spatial = layout + Tensor(np.asarray(union, dtype=layout.data.dtype))
        vu = linear(spatial.reshape(p, -1), self.w_u, self.b_u)
        ss = take(self.semantic, labels[sub_idx])
        so = take(self.semantic, labels[obj_idx])
        return concat([vs, vo, vu, ss, so], axis=1)


def assemble_representation(
    sub: DetectedObject,
    obj: DetectedObject,
    union_map: np.ndarray,
    enc: RelationEncoder,
    width: float,
    height: float,
    use_gt_class: bool = False,
) -> Tensor:
    """Representation of a single subject-object pair, shape (D,)."""
    if use_gt_class:
        if sub.gt_class is None or obj.gt_class is None:
            raise ValueError("ground-truth classes requested but missing")
        labels = np.array([sub.gt_class, obj.gt_class])
    else:
        labels = np.array([int(np.argmax(sub.class_distribution)), int(np.argmax(obj.class_distribution))])
    visual = Tensor(np.stack([sub.visual, obj.visual]))
    masks = pair_masks(sub.box, obj.box, width, height, enc.grid)[None]
    x = enc.encode(visual, np.array([0]), np.array([1]), np.asarray(union_map)[None], masks, labels)
    return x.reshape(x.shape[1])


def candidate_pairs(labels: np.ndarray, policy: str = "person", person_class: int = 0) -> np.ndarray:
    """Subject/object index pairs to score in a frame.

    ``person`` policy pairs every person with every non-person object;
    ``full`` emits all ordered pairs i != j.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if policy == "full":
        out = [(i, j) for i in range(n) for j in range(n) if i != j]
    elif policy == "person":
        people = [i for i in range(n) if labels[i] == person_class]
        out = [(i, j) for i in people for j in range(n) if labels[j] != person_class]
    else:
        raise ValueError(f"unknown pair policy {policy!r}")
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def frame_masks(frame: FrameDetections, pairs: np.ndarray, grid: int) -> np.ndarray:
    out = np.zeros((len(pairs), 2, grid, grid))
    for k, (i, j) in enumerate(pairs):
        out[k] = pair_masks(frame.boxes[i], frame.boxes[j], frame.width, frame.height, grid)
    return out
