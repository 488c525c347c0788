"""The full relationship model: representation, spatial encoder, temporal
decoder and classification heads over one video at a time."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data.filters import filter_small_boxes
from .data.synth import fallback_union
from .data.types import FrameDetections, VideoSample
from .evaluation import iou, nms_per_class
from .features import RelationEncoder, candidate_pairs, frame_masks
from .heads import (
    LossParts,
    ObjectClassifier,
    PredicateHeads,
    PredicateTargets,
    attention_scores,
    confidences,
    predicate_forward,
    total_loss,
)
from .numerics import ParameterSet, Tensor, dropout, softmax, take
from .transformer import AttentionParams, build_frame_encoding, make_windows, spatial_encoder, temporal_decoder

log = logging.getLogger(__name__)


@dataclass
class VideoInput:
    """All objects and candidate pairs of a video, flattened across frames."""

    video_id: str
    n_frames: int
    frame_size: np.ndarray  # (T, 2) width, height
    obj_frame: np.ndarray  # (N,)
    boxes: np.ndarray  # (N, 4)
    visual: np.ndarray  # (N, D_v)
    dists: np.ndarray  # (N, C)
    det_scores: np.ndarray  # (N,)
    given_labels: np.ndarray  # (N,) labels available to the model (PredCLS), else -1
    obj_gt: np.ndarray  # (N,) index of the matched GT object within its frame, -1 if none
    obj_targets: np.ndarray  # (N,) class target with background = C
    pair_sub: np.ndarray  # (P,) global object rows
    pair_obj: np.ndarray
    pair_frame: np.ndarray  # (P,)
    pair_local: np.ndarray  # (P,) pair index within its frame
    union: np.ndarray  # (P, C_u, S, S)
    masks: np.ndarray  # (P, 2, G, G)
    pair_targets: list[np.ndarray]  # per type (P, n_type) binary membership
    pair_annotated: np.ndarray  # (P,) bool, pair matches an annotated relation

    @property
    def n_pairs(self) -> int:
        return len(self.pair_sub)


def match_to_gt(boxes: np.ndarray, gt_boxes: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Greedy one-to-one assignment of boxes to GT boxes by descending IoU."""
    out = -np.ones(len(boxes), dtype=np.int64)
    cand = []
    for i, b in enumerate(boxes):
        for g, gb in enumerate(gt_boxes):
            v = iou(b, gb)
            if v >= threshold:
                cand.append((-v, i, g))
    used = set()
    for _, i, g in sorted(cand):
        if out[i] < 0 and g not in used:
            out[i] = g
            used.add(g)
    return out


def prepare_frame(det: FrameDetections, cfg: ModelConfig) -> FrameDetections:
    """Mode-dependent ingestion: NMS for detections, small-box filtering."""
    if cfg.mode == "sgdet" and det.n_objects:
        keep = nms_per_class(det.boxes, det.scores, det.dists.argmax(axis=1), cfg.nms_iou)
        det = det.subset(np.sort(keep))
    return filter_small_boxes(det, cfg.min_box_edge, cfg.mode)


def build_video_input(video: VideoSample, cfg: ModelConfig, seed: int = 0) -> VideoInput:
    """Flatten a video's detections into model input and training targets.

    Pair candidates come from GT labels in PredCLS and from the detector's
    argmax otherwise. Union maps missing from the data get a seeded noise map.
    """
    union_shape = (cfg.union_channels, cfg.union_size, cfg.union_size)
    sizes = cfg.type_sizes
    obj_rows, pair_rows = [], []
    offset = 0
    frame_size = []
    for t, rec in enumerate(video.frames):
        if rec.detections is None:
            raise ValueError(f"video {video.video_id} frame {rec.gt.frame} has no detections")
        det = prepare_frame(rec.detections, cfg)
        gt = rec.gt
        frame_size.append((det.width, det.height))
        gt_idx = match_to_gt(det.boxes, gt.boxes, cfg.match_iou)
        if cfg.mode == "predcls":
            given = np.where(det.labels >= 0, det.labels, np.where(gt_idx >= 0, gt.classes[np.maximum(gt_idx, 0)], -1))
            if (given < 0).any():
                raise ValueError(f"video {video.video_id} frame {gt.frame}: PredCLS needs labelled objects")
            pair_labels = given
        else:
            given = -np.ones(det.n_objects, dtype=np.int64)
            pair_labels = det.dists.argmax(axis=1) if det.n_objects else np.zeros(0, dtype=np.int64)
        targets = np.where(gt_idx >= 0, gt.classes[np.maximum(gt_idx, 0)], cfg.n_object_classes)
        for i in range(det.n_objects):
            obj_rows.append((t, det.boxes[i], det.visual[i], det.dists[i], det.scores[i], given[i], gt_idx[i], targets[i]))
        pairs = candidate_pairs(pair_labels, cfg.pair_policy, cfg.person_class)
        if not len(pairs):
            log.info("video %s frame %d has no candidate pairs", video.video_id, gt.frame)
        stored = {tuple(p): k for k, p in enumerate(det.pairs)}
        rel_of = {(r.subject, r.object): r for r in gt.relations}
        masks = frame_masks(det, pairs, cfg.mask_grid)
        for local, (i, j) in enumerate(pairs):
            k = stored.get((int(i), int(j)))
            if k is not None:
                u = det.union[k]
            else:
                u = fallback_union(f"{video.video_id}/{gt.frame}/{i}/{j}", union_shape, seed)
            rel = rel_of.get((int(gt_idx[i]), int(gt_idx[j]))) if gt_idx[i] >= 0 and gt_idx[j] >= 0 else None
            tg = [np.zeros(n) for n in sizes]
            if rel is not None:
                for typ, preds in enumerate(rel.by_type()):
                    tg[typ][list(preds)] = 1.0
            annotated = rel is not None and any(rel.by_type())
            pair_rows.append((offset + i, offset + j, t, local, u, masks[local], tg, annotated))
        offset += det.n_objects
    n_cls = cfg.n_object_classes

    def col(rows, k, dtype=None, shape=None):
        if not rows:
            return np.zeros(shape if shape is not None else (0,), dtype=dtype or np.float64)
        return np.array([r[k] for r in rows], dtype=dtype)

    g = cfg.mask_grid
    return VideoInput(
        video_id=video.video_id,
        n_frames=video.n_frames,
        frame_size=np.array(frame_size, dtype=np.float64),
        obj_frame=col(obj_rows, 0, np.int64),
        boxes=col(obj_rows, 1, np.float64, (0, 4)),
        visual=col(obj_rows, 2, np.float64, (0, cfg.visual_dim)),
        dists=col(obj_rows, 3, np.float64).reshape(-1, n_cls),
        det_scores=col(obj_rows, 4, np.float64),
        given_labels=col(obj_rows, 5, np.int64),
        obj_gt=col(obj_rows, 6, np.int64),
        obj_targets=col(obj_rows, 7, np.int64),
        pair_sub=col(pair_rows, 0, np.int64),
        pair_obj=col(pair_rows, 1, np.int64),
        pair_frame=col(pair_rows, 2, np.int64),
        pair_local=col(pair_rows, 3, np.int64),
        union=col(pair_rows, 4, np.float64, (0,) + union_shape),
        masks=col(pair_rows, 5, np.float64, (0, 2, g, g)),
        pair_targets=[
            np.array([r[6][typ] for r in pair_rows]).reshape(-1, n) for typ, n in enumerate(sizes)
        ],
        pair_annotated=col(pair_rows, 7, bool),
    )


@dataclass
class VideoOutput:
    type_logits: list[Tensor]  # per type (P, n_type)
    object_logits: Tensor | None  # (N, C+1), None in PredCLS
    labels: np.ndarray  # (N,) class used for each object
    object_scores: np.ndarray  # (N,) s_sub / s_obj for triplet scoring
    representation: Tensor | None  # (P, D) after encoder and decoder

    def predicate_scores(self) -> list[np.ndarray]:
        """Triplet-scoring confidences: softmax for attention, sigmoid otherwise."""
        out = []
        for t, lg in enumerate(self.type_logits):
            d = lg.data.astype(np.float64)
            out.append(attention_scores(d) if t == 0 else confidences(d))
        return out


class DropoutSchedule:
    """Inverted dropout whose masks depend only on (seed, step, call order)."""

    def __init__(self, rate: float, seed: int, step: int):
        self.rate, self.seed, self.step, self.calls = rate, seed, step, 0

    def __call__(self, x: Tensor) -> Tensor:
        self.calls += 1
        rng = np.random.default_rng([self.seed, self.step, self.calls])
        return dropout(x, self.rate, rng)


class STTran:
    """Relationship model over one video; parameters live in ``self.params``."""

    def __init__(self, cfg: ModelConfig, semantic_table: np.ndarray | None = None):
        self.cfg = cfg.validate()
        ps = ParameterSet(cfg.seed)
        self.params = ps
        self.relation = RelationEncoder.build(ps, cfg, semantic_table)
        if self.relation.out_dim != cfg.d_model:
            raise ValueError(f"representation dim {self.relation.out_dim} != d_model {cfg.d_model}")
        self.encoder = [AttentionParams.build(ps, f"enc.{i}", cfg.d_model, cfg.n_heads, cfg.ffn_dim) for i in range(cfg.enc_layers)]
        self.decoder = [AttentionParams.build(ps, f"dec.{i}", cfg.d_model, cfg.n_heads, cfg.ffn_dim) for i in range(cfg.dec_layers)]
        self.frame_encoding = build_frame_encoding(cfg.frame_encoding, cfg.window, cfg.d_model, ps)
        self.heads = PredicateHeads.build(ps, cfg.d_model, cfg.type_sizes)
        self.objects = ObjectClassifier.build(ps, cfg)

    def parameters(self):
        return [self.params[n] for n in self.params.names()]

    def classify_objects(self, inp: VideoInput, train: bool) -> tuple[Tensor | None, np.ndarray, np.ndarray]:
        """Object logits, chosen labels and their scores."""
        if self.cfg.mode == "predcls" or not len(inp.boxes):
            return None, inp.given_labels.copy(), np.ones(len(inp.given_labels))
        w_h = inp.frame_size[inp.obj_frame]
        boxes = np.clip(inp.boxes / np.concatenate([w_h, w_h], axis=1), 0.0, 1.0)
        logits = self.objects.logits(Tensor(inp.visual), inp.dists, boxes, train)
        probs = softmax(Tensor(logits.data), axis=1).data[:, : self.cfg.n_object_classes]
        labels = probs.argmax(axis=1)
        return logits, labels, probs[np.arange(len(labels)), labels]

    def forward(self, inp: VideoInput, train: bool = False, step: int = 0) -> VideoOutput:
        cfg = self.cfg
        drop = DropoutSchedule(cfg.dropout, cfg.seed, step) if (train and cfg.dropout > 0) else (lambda x: x)
        obj_logits, labels, obj_scores = self.classify_objects(inp, train)
        if inp.n_pairs == 0:
            return VideoOutput([], obj_logits, labels, obj_scores, None)
        x = self.relation.encode(Tensor(inp.visual), inp.pair_sub, inp.pair_obj, inp.union, inp.masks, labels)
        if self.encoder:
            x = spatial_encoder(x, inp.pair_frame, self.encoder, drop)
        if self.decoder:
            windows = make_windows(inp.n_frames, cfg.window, cfg.stride)
            z, layout = temporal_decoder(
                x, inp.pair_frame, windows, self.frame_encoding, self.decoder, cfg.reencode_every_layer, drop
            )
            x = take(z, layout.final)
        return VideoOutput(predicate_forward(x, self.heads), obj_logits, labels, obj_scores, x)

    def loss(self, inp: VideoInput, out: VideoOutput) -> LossParts:
        """Hinge over annotated pairs plus object cross-entropy outside PredCLS."""
        rows = np.flatnonzero(inp.pair_annotated) if inp.n_pairs else np.zeros(0, dtype=np.int64)
        type_logits = type_targets = None
        if len(rows):
            type_logits = [take(lg, rows) for lg in out.type_logits]
            type_targets = [PredicateTargets(t[rows]) for t in inp.pair_targets]
        obj_targets = inp.obj_targets if out.object_logits is not None else None
        return total_loss(type_logits, type_targets, out.object_logits, obj_targets)
