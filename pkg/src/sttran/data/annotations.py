"""Line-delimited JSON annotations, one frame per line.

Each line holds::

    {"video": "v0", "frame": 1, "width": 320, "height": 240,
     "objects": [{"class": 0, "box": [x1, y1, x2, y2]}, ...],
     "relations": [{"subject": 0, "object": 1,
                    "attention": [0], "spatial": [1, 2], "contact": [3]}]}

Lines of one video must be contiguous and ordered by frame.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .types import RELATION_TYPES, FrameRecord, GroundTruthGraph, Relation, VideoSample
from .vocabulary import Vocabulary, VocabularyError


class AnnotationError(ValueError):
    pass


def frame_to_record(video_id: str, gt: GroundTruthGraph) -> dict:
    return {
        "video": video_id,
        "frame": int(gt.frame),
        "width": float(gt.width),
        "height": float(gt.height),
        "objects": [
            {"class": int(c), "box": [float(v) for v in b]} for c, b in zip(gt.classes, gt.boxes)
        ],
        "relations": [
            {
                "subject": int(r.subject),
                "object": int(r.object),
                **{t: [int(p) for p in getattr(r, t)] for t in RELATION_TYPES},
            }
            for r in gt.relations
        ],
    }


def record_to_frame(rec: dict, vocab: Vocabulary | None = None) -> tuple[str, GroundTruthGraph]:
    objects = rec.get("objects", [])
    classes = np.array([int(o["class"]) for o in objects], dtype=np.int64)
    boxes = np.array([[float(v) for v in o["box"]] for o in objects], dtype=np.float64).reshape(-1, 4)
    if vocab is not None and len(classes) and (classes.min() < 0 or classes.max() >= vocab.n_objects):
        raise VocabularyError(f"object class outside vocabulary of {vocab.n_objects}")
    rels = []
    for r in rec.get("relations", []):
        s, o = int(r["subject"]), int(r["object"])
        if not (0 <= s < len(classes) and 0 <= o < len(classes)) or s == o:
            raise AnnotationError(f"relation ({s}, {o}) does not reference two distinct objects")
        sets = {t: tuple(sorted({int(p) for p in r.get(t, [])})) for t in RELATION_TYPES}
        if vocab is not None:
            for t, size in zip(RELATION_TYPES, vocab.type_sizes):
                if any(not 0 <= p < size for p in sets[t]):
                    raise VocabularyError(f"{t} predicate outside vocabulary of {size}")
        rels.append(Relation(s, o, **sets))
    gt = GroundTruthGraph(int(rec["frame"]), float(rec["width"]), float(rec["height"]), classes, boxes, rels)
    return str(rec["video"]), gt


def dumps_annotations(videos: Iterable[VideoSample]) -> str:
    lines = []
    for v in videos:
        for f in v.frames:
            lines.append(json.dumps(frame_to_record(v.video_id, f.gt), sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def loads_annotations(text: str, vocab: Vocabulary | None = None) -> list[VideoSample]:
    videos: list[VideoSample] = []
    order: list[str] = []
    frames: dict[str, list[FrameRecord]] = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            vid, gt = record_to_frame(rec, vocab)
        except VocabularyError as e:
            raise VocabularyError(f"line {n}: {e}") from None
        except (ValueError, KeyError, TypeError) as e:
            raise AnnotationError(f"line {n}: {e}") from None
        if vid not in frames:
            if order and vid in order:
                raise AnnotationError(f"line {n}: video {vid} is not contiguous")
            order.append(vid)
            frames[vid] = []
        elif order[-1] != vid:
            raise AnnotationError(f"line {n}: video {vid} is not contiguous")
        frames[vid].append(FrameRecord(gt))
    for vid in order:
        try:
            videos.append(VideoSample(vid, frames[vid]))
        except ValueError as e:
            raise AnnotationError(str(e)) from None
    return videos


def save_annotations(videos: Iterable[VideoSample], path) -> None:
    Path(path).write_text(dumps_annotations(videos))


def load_annotations(path, vocab: Vocabulary | None = None) -> list[VideoSample]:
    return loads_annotations(Path(path).read_text(), vocab)
