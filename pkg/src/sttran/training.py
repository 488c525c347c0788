"""Training, evaluation and prediction runs built on the model."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ModelConfig
from .data.manifest import DatasetManifest, check_compatible, load_split
from .data.types import VideoSample
from .data.vocabulary import VocabularyError
from .evaluation import EvalReport, ap_pred, default_sweep_grid, gt_triplets, recall_at_k, threshold_sweep
from .graphgen import PairPrediction, apply_strategy, score_triplets
from .model import STTran, VideoInput, build_video_input
from .numerics import AdamW, Checkpoint, NumericError, backward, clip_global_norm, load_checkpoint, precision, save_checkpoint

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunRecord:
    config: dict
    seed: int
    losses: list[dict] = field(default_factory=list)
    report: dict | None = None
    checkpoint: str | None = None
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 104729, epoch]).permutation(n)


def make_checkpoint(model: STTran, opt: AdamW | None = None) -> Checkpoint:
    cfg = model.cfg
    meta = {
        "config": cfg.to_dict(),
        "n_object_classes": cfg.n_object_classes,
        "type_sizes": list(cfg.type_sizes),
    }
    return Checkpoint(model.params.state_arrays(), None if opt is None else opt.state, meta)


def restore(cfg: ModelConfig, path) -> STTran:
    """Model for ``cfg`` with parameters from a checkpoint; refuses vocabulary mismatches."""
    ckpt = load_checkpoint(path)
    meta = ckpt.metadata
    if meta.get("n_object_classes") != cfg.n_object_classes or tuple(meta.get("type_sizes", ())) != cfg.type_sizes:
        raise VocabularyError(
            f"checkpoint vocabulary ({meta.get('n_object_classes')} objects, predicates {meta.get('type_sizes')}) "
            f"does not match ({cfg.n_object_classes} objects, predicates {list(cfg.type_sizes)})"
        )
    model = STTran(cfg)
    model.params.load_state_arrays(ckpt.arrays)
    return model


def train_model(
    model: STTran,
    inputs: Sequence[VideoInput],
    steps: int | None = None,
    checkpoint_path: str | Path | None = None,
    dump_dir: str | Path | None = None,
) -> list[dict]:
    """One video per step: loss, backward, clip, AdamW. Returns the loss trace."""
    cfg = model.cfg
    steps = cfg.steps if steps is None else steps
    usable = [x for x in inputs if x.pair_annotated.any() or (cfg.mode != "predcls" and len(x.boxes))]
    if not usable:
        raise TrainingError("no training video has annotated pairs")
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace = []
    order = epoch_order(len(usable), cfg.seed, 0)
    for step in range(1, steps + 1):
        epoch, pos = divmod(step - 1, len(usable))
        if pos == 0:
            order = epoch_order(len(usable), cfg.seed, epoch)
        inp = usable[order[pos]]
        opt.zero_grad()
        try:
            out = model.forward(inp, train=True, step=step)
            parts = model.loss(inp, out)
            value = parts.total.item()
            problem = None if math.isfinite(value) else f"loss {parts.predicate}, {parts.object}"
        except NumericError as exc:
            parts, problem = None, str(exc)
        if problem is not None:
            info = {"step": step, "video": inp.video_id, "problem": problem,
                    "param_norms": {p.name: float(np.linalg.norm(p.data)) for p in params}}
            if dump_dir is not None:
                Path(dump_dir).mkdir(parents=True, exist_ok=True)
                (Path(dump_dir) / "nan_step.json").write_text(json.dumps(info, indent=2, sort_keys=True))
            raise TrainingError(f"non-finite loss at step {step} on video {inp.video_id}: {problem}")
        backward(parts.total)
        norm = clip_global_norm(params, cfg.clip_norm)
        opt.step()
        trace.append({"step": step, "video": inp.video_id, "loss": value, "predicate": parts.predicate,
                      "object": parts.object, "grad_norm": norm})
        log.debug("step %d loss %.5f", step, value)
        if checkpoint_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, make_checkpoint(model, opt))
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, make_checkpoint(model, opt))
    return trace


# -- inference -------------------------------------------------------------------------


@dataclass
class FramePrediction:
    video_id: str
    frame: int
    pairs: list[PairPrediction]
    gt: list  # GroundTruthTriplet
    pair_targets: list[np.ndarray] = field(default_factory=list)  # per type, rows aligned with pairs

    def candidates(self):
        return score_triplets(self.pairs)


def infer_video(model: STTran, video: VideoSample, inp: VideoInput) -> list[FramePrediction]:
    out = model.forward(inp, train=False)
    scores = out.predicate_scores() if inp.n_pairs else []
    sizes = model.cfg.type_sizes
    frames = []
    for t, rec in enumerate(video.frames):
        rows = np.flatnonzero(inp.pair_frame == t) if inp.n_pairs else np.zeros(0, dtype=np.int64)
        pairs = []
        for r in rows:
            i, j = inp.pair_sub[r], inp.pair_obj[r]
            pairs.append(PairPrediction(
                int(inp.pair_local[r]), int(out.labels[i]), int(out.labels[j]),
                tuple(float(v) for v in inp.boxes[i]), tuple(float(v) for v in inp.boxes[j]),
                float(out.object_scores[i]), float(out.object_scores[j]),
                [s[r] for s in scores],
            ))
        targets = [t_[rows] for t_ in inp.pair_targets] if inp.n_pairs else [np.zeros((0, n)) for n in sizes]
        frames.append(FramePrediction(video.video_id, rec.gt.frame, pairs, gt_triplets(rec.gt, sizes), targets))
    return frames


def predicate_ap(frames: Sequence[FramePrediction], sizes: Sequence[int]) -> dict[int, float]:
    """AP of each predicate over all candidate pairs; predicates without positives are omitted."""
    out = {}
    offset = 0
    for typ, n in enumerate(sizes):
        for k in range(n):
            s, y = [], []
            for f in frames:
                for p, row in zip(f.pairs, f.pair_targets[typ]):
                    s.append(p.type_scores[typ][k])
                    y.append(int(row[k] > 0))
            v = ap_pred(s, y)
            if v is not None:
                out[offset + k] = v
        offset += n
    return out


def evaluate_frames(
    frames: Sequence[FramePrediction],
    mode: str,
    strategies: Sequence[str],
    ks: Sequence[int],
    threshold: float,
    match_iou: float,
) -> dict[tuple[str, str, int], float | None]:
    out = {}
    for s in strategies:
        ranked = [(apply_strategy(f.candidates(), s, threshold), f.gt) for f in frames]
        for k in ks:
            out[(mode, s, int(k))] = recall_at_k(ranked, k, match_iou)
    return out


def evaluate(
    model: STTran,
    videos: Sequence[VideoSample],
    strategies: Sequence[str] = ("with", "semi", "no"),
    ks: Sequence[int] | None = None,
    threshold: float | None = None,
    sweep: Sequence[float] | None = None,
) -> EvalReport:
    cfg = model.cfg
    ks = cfg.ks if ks is None else ks
    threshold = cfg.semi_threshold if threshold is None else threshold
    frames = []
    for v in videos:
        frames.extend(infer_video(model, v, build_video_input(v, cfg, cfg.seed)))
    report = EvalReport()
    report.recall.update(evaluate_frames(frames, cfg.mode, strategies, ks, threshold, cfg.match_iou))
    if cfg.mode == "predcls":
        report.ap.update(predicate_ap(frames, cfg.type_sizes))
    if sweep is not None:
        report.sweep[cfg.mode] = threshold_sweep([(f.candidates(), f.gt) for f in frames], sweep, 20, cfg.match_iou)
    with_gt = sum(1 for f in frames if f.gt)
    report.metadata.update({
        "threshold": threshold,
        "frames_evaluated": with_gt,
        "frames_skipped": len(frames) - with_gt,
        "videos": len(videos),
    })
    return report


# -- runs ----------------------------------------------------------------------------------


def _source(mode: str) -> str:
    return "detections" if mode == "sgdet" else "features"


def run_train(cfg: ModelConfig, manifest: DatasetManifest, out_dir: str | Path, videos: Sequence[VideoSample] | None = None) -> RunRecord:
    """Train on the manifest's train split (or ``videos``) and write checkpoint + record."""
    if cfg.preset == "paper" and not cfg.allow_paper_training:
        raise ConfigError("training the paper preset needs allow_paper_training = true")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    with precision(cfg.precision):
        if videos is None:
            videos = load_split(manifest, "train", cfg, _source(cfg.mode))
        else:
            check_compatible(manifest, cfg)
        inputs = [build_video_input(v, cfg, cfg.seed) for v in videos]
        model = STTran(cfg)
        ckpt = out / "model.sttc"
        trace = train_model(model, inputs, checkpoint_path=ckpt, dump_dir=out)
    record = RunRecord(cfg.to_dict(), cfg.seed, trace, None, str(ckpt), time.perf_counter() - start)
    (out / "run.json").write_text(record.to_json())
    return record


def run_eval(
    cfg: ModelConfig,
    manifest: DatasetManifest,
    checkpoint,
    modes: Sequence[str] | None = None,
    strategies: Sequence[str] = ("with", "semi", "no"),
    ks: Sequence[int] | None = None,
    split: str = "test",
    threshold: float | None = None,
    sweep: bool = False,
) -> EvalReport:
    modes = [cfg.mode] if modes is None else list(modes)
    report = EvalReport()
    with precision(cfg.precision):
        for mode in modes:
            mcfg = cfg.replace(mode=mode).validate()
            model = restore(mcfg, checkpoint)
            videos = load_split(manifest, split, mcfg, _source(mode))
            part = evaluate(model, videos, strategies, ks, threshold, default_sweep_grid() if sweep else None)
            report.recall.update(part.recall)
            report.ap.update(part.ap)
            report.sweep.update(part.sweep)
            for k, v in part.metadata.items():
                report.metadata[f"{mode}.{k}" if k != "threshold" else k] = v
    return report


def predict_video(model: STTran, video: VideoSample, strategy: str = "with", threshold: float | None = None,
                  k: int | None = None) -> list[dict]:
    """Per-frame ranked triplets of one video as JSON-ready records."""
    cfg = model.cfg
    threshold = cfg.semi_threshold if threshold is None else threshold
    records = []
    for f in infer_video(model, video, build_video_input(video, cfg, cfg.seed)):
        ranked = apply_strategy(f.candidates(), strategy, threshold)
        if k is not None:
            ranked = ranked[:k]
        records.append({"video": f.video_id, "frame": f.frame, "strategy": strategy,
                        "triplets": [t.to_dict() for t in ranked]})
    return records


def run_predict(cfg: ModelConfig, manifest: DatasetManifest, checkpoint, out_path, split: str = "test",
                video_id: str | None = None, strategy: str = "with", threshold: float | None = None,
                k: int | None = None) -> int:
    """Write JSONL scene graphs (one line per frame); returns the number of frames."""
    with precision(cfg.precision):
        model = restore(cfg, checkpoint)
        videos = load_split(manifest, split, cfg, _source(cfg.mode))
        if video_id is not None:
            videos = [v for v in videos if v.video_id == video_id]
            if not videos:
                raise KeyError(f"no video {video_id!r} in split {split!r}")
        lines = []
        for v in videos:
            lines.extend(json.dumps(r, sort_keys=True) for r in predict_video(model, v, strategy, threshold, k))
    Path(out_path).write_text("\n".join(lines) + ("\n" if lines else ""))
    return len(lines)
