"""Binary per-frame detection features ("STTD" files).

Little-endian throughout::

    magic "STTD" | u32 version | u32 D_v | u32 C_u | u32 S | u32 C | u32 n_videos
    per video:  u16 id length | id (utf-8) | u32 n_frames
    per frame:  u32 frame | f32 width | f32 height | u32 n_objects
      per object: f32[4] box | f32 score | i32 label | f32[C] class distribution | f32[D_v] visual
      u32 n_pairs
      per pair:   u32 subject | u32 object | f32[C_u*S*S] union map

Floats are stored as float32, so write(read(bytes)) reproduces the bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import FrameDetections, VideoSample

MAGIC = b"STTD"
VERSION = 1


class FeatureFileError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureDims:
    visual: int
    union_channels: int
    union_size: int
    n_classes: int

    @classmethod
    def from_config(cls, cfg) -> "FeatureDims":
        return cls(cfg.visual_dim, cfg.union_channels, cfg.union_size, cfg.n_object_classes)

    @property
    def union_shape(self) -> tuple[int, int, int]:
        return (self.union_channels, self.union_size, self.union_size)


@dataclass
class FeatureFile:
    dims: FeatureDims
    videos: dict[str, dict[int, FrameDetections]]  # video id -> frame index -> detections


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FeatureFileError(f"unexpected end of file at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def dumps_features(ff: FeatureFile) -> bytes:
    d = ff.dims
    out = [MAGIC, struct.pack("<6I", VERSION, d.visual, d.union_channels, d.union_size, d.n_classes, len(ff.videos))]
    for vid, frames in ff.videos.items():
        name = vid.encode("utf-8")
        out.append(struct.pack("<H", len(name)) + name + struct.pack("<I", len(frames)))
        for idx in sorted(frames):
            fr = frames[idx]
            if fr.visual.shape[1:] != (d.visual,) or np.asarray(fr.dists).shape[1:] != (d.n_classes,):
                raise FeatureFileError(f"video {vid} frame {idx}: object dims do not match header")
            out.append(struct.pack("<Iff I", idx, fr.width, fr.height, fr.n_objects))
            for i in range(fr.n_objects):
                out.append(np.asarray(fr.boxes[i], dtype="<f4").tobytes())
                out.append(struct.pack("<fi", fr.scores[i], int(fr.labels[i])))
                out.append(np.asarray(fr.dists[i], dtype="<f4").tobytes())
                out.append(np.asarray(fr.visual[i], dtype="<f4").tobytes())
            out.append(struct.pack("<I", len(fr.pairs)))
            if len(fr.pairs):
                union = np.asarray(fr.union)
                if union.shape != (len(fr.pairs),) + d.union_shape:
                    raise FeatureFileError(f"video {vid} frame {idx}: union maps {union.shape} do not match header")
                for k, (s, o) in enumerate(fr.pairs):
                    out.append(struct.pack("<II", int(s), int(o)))
                    out.append(union[k].astype("<f4").tobytes())
    return b"".join(out)


def loads_features(buf: bytes, expect: FeatureDims | None = None) -> FeatureFile:
    r = _Reader(buf)
    if bytes(r.take(4)) != MAGIC:
        raise FeatureFileError("bad magic, not a feature file")
    version, dv, cu, s, c, n_videos = r.unpack("6I")
    if version != VERSION:
        raise FeatureFileError(f"unsupported feature file version {version}")
    dims = FeatureDims(dv, cu, s, c)
    if expect is not None and dims != expect:
        raise FeatureFileError(f"feature dims {dims} do not match configuration {expect}")
    union_len = cu * s * s
    videos: dict[str, dict[int, FrameDetections]] = {}
    for _ in range(n_videos):
        (n,) = r.unpack("H")
        vid = bytes(r.take(n)).decode("utf-8")
        (n_frames,) = r.unpack("I")
        frames = {}
        for _ in range(n_frames):
            idx, w, h, n_obj = r.unpack("IffI")
            boxes = np.zeros((n_obj, 4), dtype=np.float32)
            scores = np.zeros(n_obj, dtype=np.float32)
            labels = np.zeros(n_obj, dtype=np.int64)
            dists = np.zeros((n_obj, c), dtype=np.float32)
            visual = np.zeros((n_obj, dv), dtype=np.float32)
            for i in range(n_obj):
                boxes[i] = r.floats(4)
                scores[i], labels[i] = r.unpack("fi")
                dists[i] = r.floats(c)
                visual[i] = r.floats(dv)
            (n_pairs,) = r.unpack("I")
            pairs = np.zeros((n_pairs, 2), dtype=np.int64)
            union = np.zeros((n_pairs, cu, s, s), dtype=np.float32)
            for k in range(n_pairs):
                pairs[k] = r.unpack("II")
                union[k] = r.floats(union_len).reshape(cu, s, s)
            if n_pairs and pairs.max() >= n_obj:
                raise FeatureFileError(f"video {vid} frame {idx}: pair index out of range")
            fd = FrameDetections(float(w), float(h), boxes, visual, dists, scores, labels, pairs, union)
            # keep float32 precision of boxes/scores so a rewrite is byte-identical
            fd.boxes = boxes.astype(np.float64)
            fd.scores = scores.astype(np.float64)
            frames[idx] = fd
        videos[vid] = frames
    if r.pos != len(r.buf):
        raise FeatureFileError(f"{len(r.buf) - r.pos} trailing bytes after the last video")
    return FeatureFile(dims, videos)


def save_features(ff: FeatureFile, path) -> None:
    Path(path).write_bytes(dumps_features(ff))


def load_features(path, expect: FeatureDims | None = None) -> FeatureFile:
    return loads_features(Path(path).read_bytes(), expect)


def attach_features(videos: list[VideoSample], ff: FeatureFile) -> list[VideoSample]:
    """Set ``detections`` on every frame from a feature file (in place)."""
    for v in videos:
        frames = ff.videos.get(v.video_id)
        if frames is None:
            raise FeatureFileError(f"no features for video {v.video_id}")
        for f in v.frames:
            if f.gt.frame not in frames:
                raise FeatureFileError(f"no features for video {v.video_id} frame {f.gt.frame}")
            f.detections = frames[f.gt.frame]
    return videos


def features_of(videos: list[VideoSample], dims: FeatureDims) -> FeatureFile:
    return FeatureFile(dims, {v.video_id: {f.gt.frame: f.detections for f in v.frames} for v in videos})
