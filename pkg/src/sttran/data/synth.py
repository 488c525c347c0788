"""Seeded synthetic videos with controllable temporal structure.

Each video shows one person and ``m`` objects of distinct classes. Every
person-object pair carries three latent Markov chains (attention, spatial,
contact) that keep their state with probability ``persistence`` and
otherwise jump to a different state uniformly.

Attention and spatial labels are read off the current state. The contact
label at frame t (t > 0) is the contact state of frame t-1 with probability
``coupling`` and the state of frame t otherwise. Frame features only
describe frame t, so ``coupling`` controls how much a frame-local model must
guess.

Object appearance is a class prototype plus noise. A pair's union map is the
sum of prototypes of its attention state, spatial state(s) and contact state
plus noise. The spatial state also places the object around the person.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotations import save_annotations
from .features_io import FeatureDims, FeatureFile, save_features
from .manifest import DatasetManifest, SplitFiles
from .types import FrameDetections, FrameRecord, GroundTruthGraph, Relation, VideoSample
from .vocabulary import Vocabulary, save_vocabulary


@dataclass
class SynthSpec:
    n_videos: int = 20
    n_test_videos: int = 0
    n_frames: int = 5
    objects_per_frame: tuple[int, int] = (2, 3)  # inclusive range of non-person objects
    coupling: float = 0.0
    persistence: float = 0.5
    multi_spatial: float = 0.0  # probability of a second spatial label
    seed: int = 0
    visual_dim: int = 64
    union_channels: int = 8
    union_size: int = 3
    n_object_classes: int = 6
    type_sizes: tuple[int, int, int] = (2, 3, 4)
    visual_noise: float = 0.3
    union_noise: float = 0.3
    width: float = 320.0
    height: float = 240.0
    det_jitter: float = 0.05  # box jitter of the simulated detector, relative to box size
    det_duplicate: float = 0.3
    det_false_positive: float = 0.2

    def __post_init__(self):
        self.objects_per_frame = tuple(self.objects_per_frame)
        self.type_sizes = tuple(self.type_sizes)

    def validate(self) -> "SynthSpec":
        errs = []
        if not 0.0 <= self.coupling <= 1.0:
            errs.append("coupling must lie in [0, 1]")
        if not 0.0 <= self.persistence <= 1.0:
            errs.append("persistence must lie in [0, 1]")
        if not 0.0 <= self.multi_spatial <= 1.0:
            errs.append("multi_spatial must lie in [0, 1]")
        if self.n_videos < 1 or self.n_frames < 1 or self.n_test_videos < 0:
            errs.append("need at least one video and one frame")
        lo, hi = self.objects_per_frame
        if not 1 <= lo <= hi or hi > self.n_object_classes - 1:
            errs.append("objects_per_frame must satisfy 1 <= lo <= hi <= n_object_classes - 1")
        if min(self.type_sizes) < 2:
            errs.append("every predicate type needs at least 2 classes")
        if errs:
            raise ValueError("; ".join(errs))
        return self

    @classmethod
    def for_config(cls, cfg, **kw) -> "SynthSpec":
        return cls(
            visual_dim=cfg.visual_dim,
            union_channels=cfg.union_channels,
            union_size=cfg.union_size,
            n_object_classes=cfg.n_object_classes,
            type_sizes=cfg.type_sizes,
            **kw,
        )

    @property
    def dims(self) -> FeatureDims:
        return FeatureDims(self.visual_dim, self.union_channels, self.union_size, self.n_object_classes)


@dataclass
class Prototypes:
    visual: np.ndarray  # (C, D_v)
    relation: list[np.ndarray] = field(default_factory=list)  # per type (n_type, C_u, S, S)

    @classmethod
    def draw(cls, spec: SynthSpec) -> "Prototypes":
        rng = np.random.default_rng([spec.seed, 7919])
        visual = rng.normal(0.0, 1.0, (spec.n_object_classes, spec.visual_dim))
        shape = (spec.union_channels, spec.union_size, spec.union_size)
        rel = [rng.normal(0.0, 1.0, (n,) + shape) for n in spec.type_sizes]
        return cls(visual, rel)


def markov_chain(rng: np.random.Generator, n_states: int, length: int, persistence: float) -> np.ndarray:
    """Stay with probability ``persistence``, else jump uniformly to another state."""
    z = np.empty(length, dtype=np.int64)
    z[0] = rng.integers(n_states)
    for t in range(1, length):
        if rng.random() < persistence:
            z[t] = z[t - 1]
        else:
            z[t] = (z[t - 1] + 1 + rng.integers(n_states - 1)) % n_states
    return z


def contact_labels(rng: np.random.Generator, state: np.ndarray, coupling: float) -> np.ndarray:
    lagged = np.concatenate([state[:1], state[:-1]])
    use_previous = rng.random(len(state)) < coupling
    return np.where(use_previous, lagged, state)


def frame_local_bayes_accuracy(n_states: int, persistence: float, coupling: float, n_frames: int) -> float:
    """Best contact accuracy of any predictor seeing only the current state.

    Computed by enumerating the joint law of (previous state, current state,
    label) under a uniform stationary chain; the first frame is exact.
    """
    best = 0.0
    for cur in range(n_states):
        joint = np.zeros(n_states)
        for prev in range(n_states):
            p_prev = 1.0 / n_states
            p_move = persistence if prev == cur else (1.0 - persistence) / (n_states - 1)
            joint[prev] += p_prev * p_move * coupling
            joint[cur] += p_prev * p_move * (1.0 - coupling)
        best += joint.max()
    return (1.0 + (n_frames - 1) * best) / n_frames


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _class_distribution(rng, classes: np.ndarray, n_classes: int, sharpness: float = 4.0) -> np.ndarray:
    logits = rng.normal(0.0, 0.5, (len(classes), n_classes))
    logits[np.arange(len(classes)), classes] += sharpness
    return _softmax(logits)


def _place(center, size, spec: SynthSpec) -> np.ndarray:
    w, h = size
    cx = float(np.clip(center[0], w / 2, spec.width - w / 2))
    cy = float(np.clip(center[1], h / 2, spec.height - h / 2))
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def fallback_union(key: str, shape: tuple[int, ...], seed: int, scale: float = 0.3) -> np.ndarray:
    """Deterministic noise map for a pair whose union features were not stored."""
    rng = np.random.default_rng([seed, zlib.crc32(key.encode("utf-8"))])
    return rng.normal(0.0, scale, shape).astype(np.float32)


def _video(spec: SynthSpec, protos: Prototypes, video_id: str, rng: np.random.Generator) -> VideoSample:
    n_att, n_spa, n_con = spec.type_sizes
    m = int(rng.integers(spec.objects_per_frame[0], spec.objects_per_frame[1] + 1))
    classes = np.concatenate([[0], 1 + rng.permutation(spec.n_object_classes - 1)[:m]])
    T = spec.n_frames
    att = [markov_chain(rng, n_att, T, spec.persistence) for _ in range(m)]
    spa = [markov_chain(rng, n_spa, T, spec.persistence) for _ in range(m)]
    con_state = [markov_chain(rng, n_con, T, spec.persistence) for _ in range(m)]
    con_label = [contact_labels(rng, z, spec.coupling) for z in con_state]
    extra_spa = [
        [(int(s[t]) + 1 + int(rng.integers(n_spa - 1))) % n_spa if rng.random() < spec.multi_spatial else None
         for t in range(T)]
        for s in spa
    ]
    obj_size = [(float(rng.uniform(30, 60)), float(rng.uniform(30, 60))) for _ in range(m)]
    person_center = np.array([spec.width / 2, spec.height / 2])
    union_shape = (spec.union_channels, spec.union_size, spec.union_size)
    frames = []
    for t in range(T):
        pc = person_center + rng.normal(0.0, 4.0, 2)
        boxes = [_place(pc, (80.0, 140.0), spec)]
        for k in range(m):
            angle = 2 * np.pi * spa[k][t] / n_spa + 2 * np.pi * k / (4 * m) + rng.normal(0.0, 0.1)
            boxes.append(_place(pc + 70.0 * np.array([np.cos(angle), np.sin(angle)]), obj_size[k], spec))
        boxes = np.array(boxes)
        visual = protos.visual[classes] + rng.normal(0.0, spec.visual_noise, (m + 1, spec.visual_dim))
        dists = _class_distribution(rng, classes, spec.n_object_classes)
        relations, union, pairs = [], [], []
        for k in range(m):
            spatial = (int(spa[k][t]),) if extra_spa[k][t] is None else tuple(sorted((int(spa[k][t]), extra_spa[k][t])))
            u = protos.relation[0][att[k][t]] + protos.relation[2][con_state[k][t]]
            for s in spatial:
                u = u + protos.relation[1][s]
            union.append(u + rng.normal(0.0, spec.union_noise, union_shape))
            pairs.append((0, k + 1))
            relations.append(Relation(0, k + 1, (int(att[k][t]),), spatial, (int(con_label[k][t]),)))
        gt = GroundTruthGraph(t + 1, spec.width, spec.height, classes, boxes, relations)
        det = FrameDetections(
            spec.width, spec.height, boxes.astype(np.float32), visual.astype(np.float32), dists.astype(np.float32),
            np.ones(m + 1, dtype=np.float32), classes, np.array(pairs), np.array(union, dtype=np.float32),
        )
        frames.append(FrameRecord(gt, det))
    return VideoSample(video_id, frames)


def _iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def simulate_detector(video: VideoSample, spec: SynthSpec, protos: Prototypes, rng: np.random.Generator) -> dict[int, FrameDetections]:
    """Noisy detections: jittered true objects, near-duplicates and false positives.

    Union maps are stored for every ordered pair whose subject is detected
    as a person; maps of pairs that match an annotated pair copy its
    features plus noise.
    """
    out = {}
    union_shape = (spec.union_channels, spec.union_size, spec.union_size)
    for f in video.frames:
        gt, src = f.gt, f.detections
        boxes, visual, classes, scores, origin = [], [], [], [], []
        for i, b in enumerate(gt.boxes):
            w, h = b[2] - b[0], b[3] - b[1]
            jit = rng.normal(0.0, spec.det_jitter, 4) * np.array([w, h, w, h])
            boxes.append(_place(((b[0] + b[2]) / 2 + jit[0], (b[1] + b[3]) / 2 + jit[1]), (w + jit[2], h + jit[3]), spec))
            visual.append(src.visual[i] + rng.normal(0.0, 0.05, spec.visual_dim))
            classes.append(int(gt.classes[i]))
            scores.append(float(rng.uniform(0.7, 1.0)))
            origin.append(i)
            if rng.random() < spec.det_duplicate:
                shift = rng.normal(0.0, 0.25, 2) * np.array([w, h])
                boxes.append(_place(((b[0] + b[2]) / 2 + shift[0], (b[1] + b[3]) / 2 + shift[1]), (w, h), spec))
                visual.append(src.visual[i] + rng.normal(0.0, 0.2, spec.visual_dim))
                classes.append(int(gt.classes[i]))
                scores.append(float(rng.uniform(0.3, 0.7)))
                origin.append(i)
        if rng.random() < spec.det_false_positive:
            c = int(rng.integers(1, spec.n_object_classes))
            boxes.append(_place(rng.uniform([30, 30], [spec.width - 30, spec.height - 30]), (40.0, 40.0), spec))
            visual.append(protos.visual[c] + rng.normal(0.0, spec.visual_noise, spec.visual_dim))
            classes.append(c)
            scores.append(float(rng.uniform(0.3, 0.8)))
            origin.append(-1)
        classes = np.array(classes)
        dists = _class_distribution(rng, classes, spec.n_object_classes, sharpness=3.0)
        boxes = np.array(boxes)
        det_label = dists.argmax(axis=1)
        gt_pair = {tuple(p): k for k, p in enumerate(src.pairs)}
        pairs, union = [], []
        for i in range(len(boxes)):
            if det_label[i] != 0:
                continue
            for j in range(len(boxes)):
                if i == j:
                    continue
                k = gt_pair.get((origin[i], origin[j]))
                if k is not None and _iou(boxes[i], gt.boxes[origin[i]]) >= 0.5 and _iou(boxes[j], gt.boxes[origin[j]]) >= 0.5:
                    u = src.union[k] + rng.normal(0.0, 0.05, union_shape)
                else:
                    u = rng.normal(0.0, spec.union_noise, union_shape)
                pairs.append((i, j))
                union.append(u)
        out[gt.frame] = FrameDetections(
            spec.width, spec.height, boxes.astype(np.float32), np.array(visual, dtype=np.float32),
            dists.astype(np.float32), np.array(scores, dtype=np.float32), -np.ones(len(boxes), dtype=np.int64),
            np.array(pairs, dtype=np.int64).reshape(-1, 2),
            np.array(union, dtype=np.float32).reshape((-1,) + union_shape),
        )
    return out


def generate_split(spec: SynthSpec, split: str = "train", with_detections: bool = False):
    """In-memory videos of a split (and simulated detections when asked)."""
    spec.validate()
    protos = Prototypes.draw(spec)
    code = {"train": 0, "test": 1}[split]
    n = spec.n_videos if split == "train" else spec.n_test_videos
    videos, dets = [], {}
    for v in range(n):
        vid = f"{split}{v:04d}"
        videos.append(_video(spec, protos, vid, np.random.default_rng([spec.seed, code, v])))
        if with_detections:
            dets[vid] = simulate_detector(videos[-1], spec, protos, np.random.default_rng([spec.seed, code, v, 1]))
    return videos, dets


def synth_generate(spec: SynthSpec, out_dir, detections: bool = True) -> DatasetManifest:
    """Write vocabulary, annotations, features (and detections) plus a manifest."""
    spec.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.generic(spec.n_object_classes, spec.type_sizes)
    save_vocabulary(vocab, root / "vocabulary.txt")
    splits = {}
    for split in ("train", "test"):
        if split == "test" and spec.n_test_videos == 0:
            continue
        videos, dets = generate_split(spec, split, detections)
        save_annotations(videos, root / f"{split}.jsonl")
        ff = FeatureFile(spec.dims, {v.video_id: {f.gt.frame: f.detections for f in v.frames} for v in videos})
        save_features(ff, root / f"{split}_features.sttd")
        files = SplitFiles(f"{split}.jsonl", f"{split}_features.sttd")
        if detections:
            save_features(FeatureFile(spec.dims, dets), root / f"{split}_detections.sttd")
            files.detections = f"{split}_detections.sttd"
        splits[split] = files
    spec_dict = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}
    manifest = DatasetManifest(root, "vocabulary.txt", spec.dims, splits, {"synth": spec_dict})
    manifest.save()
    return manifest
