"""Dataset manifests: which files hold each split, plus dims and vocabulary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .annotations import load_annotations
from .features_io import FeatureDims, attach_features, load_features
from .types import VideoSample
from .vocabulary import Vocabulary, VocabularyError, load_vocabulary

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass
class SplitFiles:
    annotations: str
    features: str
    detections: str | None = None


@dataclass
class DatasetManifest:
    root: Path
    vocabulary: str
    dims: FeatureDims
    splits: dict[str, SplitFiles]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "vocabulary": self.vocabulary,
            "dims": {
                "visual": self.dims.visual,
                "union_channels": self.dims.union_channels,
                "union_size": self.dims.union_size,
                "n_classes": self.dims.n_classes,
            },
            "splits": {k: {kk: vv for kk, vv in vars(v).items() if vv is not None} for k, v in self.splits.items()},
            **self.extra,
        }

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def path(self, name: str) -> Path:
        return self.root / name

    def load_vocabulary(self) -> Vocabulary:
        return load_vocabulary(self.path(self.vocabulary))

    def check_files(self) -> None:
        missing = [self.vocabulary] + [
            f for s in self.splits.values() for f in (s.annotations, s.features, s.detections) if f
        ]
        missing = [f for f in missing if not self.path(f).exists()]
        if missing:
            raise ManifestError(f"missing dataset files: {', '.join(missing)}")


def load_manifest(path) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        d = json.loads(p.read_text())
        dims = FeatureDims(**d["dims"])
        splits = {k: SplitFiles(**v) for k, v in d["splits"].items()}
        extra = {k: v for k, v in d.items() if k not in ("format", "vocabulary", "dims", "splits")}
        m = DatasetManifest(p.parent, d["vocabulary"], dims, splits, extra)
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"cannot read manifest {p}: {e}") from None
    m.check_files()
    return m


def check_compatible(manifest: DatasetManifest, cfg) -> Vocabulary:
    """Refuse data whose vocabulary or feature dims disagree with the config."""
    vocab = manifest.load_vocabulary()
    if vocab.n_objects != cfg.n_object_classes or vocab.type_sizes != cfg.type_sizes:
        raise VocabularyError(
            f"vocabulary ({vocab.n_objects} objects, predicates {vocab.type_sizes}) does not match config "
            f"({cfg.n_object_classes} objects, predicates {cfg.type_sizes})"
        )
    if manifest.dims != FeatureDims.from_config(cfg):
        raise ManifestError(f"dataset dims {manifest.dims} do not match config {FeatureDims.from_config(cfg)}")
    return vocab


def load_split(manifest: DatasetManifest, split: str, cfg=None, source: str = "features") -> list[VideoSample]:
    """Videos of a split with detections attached.

    ``source`` is ``features`` (boxes aligned with the annotations) or
    ``detections`` (detector output, used for SGDET).
    """
    if split not in manifest.splits:
        raise ManifestError(f"manifest has no split {split!r}")
    files = manifest.splits[split]
    vocab = check_compatible(manifest, cfg) if cfg is not None else manifest.load_vocabulary()
    videos = load_annotations(manifest.path(files.annotations), vocab)
    name = files.features if source == "features" else files.detections
    if name is None:
        raise ManifestError(f"split {split!r} has no {source} file")
    return attach_features(videos, load_features(manifest.path(name), manifest.dims))
