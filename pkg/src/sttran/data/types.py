"""Core records shared by ingestion, the model and the evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

RELATION_TYPES = ("attention", "spatial", "contact")


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def of(cls, b) -> "BoundingBox":
        return b if isinstance(b, BoundingBox) else cls(*map(float, b))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def clamp(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
            min(max(self.x2, 0.0), width),
            min(max(self.y2, 0.0), height),
        )


@dataclass
class DetectedObject:
    visual: np.ndarray
    box: BoundingBox
    class_distribution: np.ndarray
    score: float = 1.0
    gt_class: int | None = None


@dataclass
class FrameDetections:
    """Objects seen in one frame plus union-box features of candidate pairs.

    ``pairs`` rows are (subject index, object index) and ``union`` holds one
    C_u x S x S map per row.
    """

    width: float
    height: float
    boxes: np.ndarray  # (N, 4)
    visual: np.ndarray  # (N, D_v)
    dists: np.ndarray  # (N, C)
    scores: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) ground-truth class per object, -1 when unknown
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    union: np.ndarray | None = None  # (P, C_u, S, S)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.visual = np.asarray(self.visual)
        self.dists = np.asarray(self.dists)
        if self.union is not None:
            self.union = np.asarray(self.union)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def n_objects(self) -> int:
        return len(self.boxes)

    def object(self, i: int) -> DetectedObject:
        label = int(self.labels[i])
        return DetectedObject(
            self.visual[i], BoundingBox.of(self.boxes[i]), self.dists[i], float(self.scores[i]),
            None if label < 0 else label,
        )

    @classmethod
    def from_objects(cls, objects: Sequence[DetectedObject], width: float, height: float, pairs=None, union=None):
        return cls(
            width,
            height,
            np.array([o.box.as_tuple() for o in objects]).reshape(-1, 4),
            np.stack([o.visual for o in objects]),
            np.stack([o.class_distribution for o in objects]),
            np.array([o.score for o in objects]),
            np.array([-1 if o.gt_class is None else o.gt_class for o in objects]),
            np.zeros((0, 2), dtype=np.int64) if pairs is None else pairs,
            union,
        )

    def subset(self, keep: np.ndarray) -> "FrameDetections":
        """Keep objects ``keep`` (indices); pairs touching dropped objects go too."""
        keep = np.asarray(keep, dtype=np.int64)
        remap = -np.ones(self.n_objects, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        pairs, union = self.pairs, self.union
        if len(pairs):
            ok = (remap[pairs[:, 0]] >= 0) & (remap[pairs[:, 1]] >= 0)
            pairs = remap[pairs[ok]]
            union = None if union is None else union[ok]
        return FrameDetections(
            self.width, self.height, self.boxes[keep], self.visual[keep], self.dists[keep],
            self.scores[keep], self.labels[keep], pairs, union,
        )


@dataclass
class Relation:
    subject: int
    object: int
    attention: tuple[int, ...] = ()
    spatial: tuple[int, ...] = ()
    contact: tuple[int, ...] = ()

    def by_type(self) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
        return (self.attention, self.spatial, self.contact)


@dataclass
class GroundTruthGraph:
    """Annotated objects and relationships of one frame."""

    frame: int
    width: float
    height: float
    classes: np.ndarray  # (N,)
    boxes: np.ndarray  # (N, 4)
    relations: list[Relation] = field(default_factory=list)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)

    @property
    def has_relations(self) -> bool:
        return any(any(r.by_type()) for r in self.relations)


@dataclass
class FrameRecord:
    gt: GroundTruthGraph
    detections: FrameDetections | None = None


@dataclass
class VideoSample:
    video_id: str
    frames: list[FrameRecord]

    def __post_init__(self):
        idx = [f.gt.frame for f in self.frames]
        if not idx:
            raise ValueError(f"video {self.video_id} has no frames")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"video {self.video_id}: frame indices must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return len(self.frames)
