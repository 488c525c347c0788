"""Recall@K under the three tasks, predicate AP, NMS and threshold sweeps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import MODES, STRATEGIES
from .data.types import GroundTruthGraph
from .graphgen import Triplet, apply_strategy, type_offsets

log = logging.getLogger(__name__)


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = map(float, a)
    bx1, by1, bx2, by2 = map(float, b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def nms_per_class(boxes: np.ndarray, scores: np.ndarray, classes: np.ndarray, iou_threshold: float = 0.4) -> np.ndarray:
    """Indices kept by greedy per-class suppression of overlaps strictly above the threshold.

    Returned in descending score order (ties by index).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(classes[j] != classes[i] or iou(boxes[i], boxes[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return np.array(kept, dtype=np.int64)


@dataclass(frozen=True)
class GroundTruthTriplet:
    subject_class: int
    subject_box: tuple[float, float, float, float]
    predicate: int
    object_class: int
    object_box: tuple[float, float, float, float]


def gt_triplets(graph: GroundTruthGraph, sizes: Sequence[int]) -> list[GroundTruthTriplet]:
    """Flatten a frame's annotations into triplets with global predicate ids."""
    offs = type_offsets(sizes)
    out = []
    for rel in graph.relations:
        sb = tuple(float(v) for v in graph.boxes[rel.subject])
        ob = tuple(float(v) for v in graph.boxes[rel.object])
        for t, preds in enumerate(rel.by_type()):
            for p in sorted(set(preds)):
                out.append(GroundTruthTriplet(
                    int(graph.classes[rel.subject]), sb, offs[t] + int(p), int(graph.classes[rel.object]), ob,
                ))
    return out


def triplet_matches(pred: Triplet, gt: GroundTruthTriplet, match_iou: float = 0.5) -> bool:
    return (
        pred.predicate == gt.predicate
        and pred.subject_class == gt.subject_class
        and pred.object_class == gt.object_class
        and iou(pred.subject_box, gt.subject_box) >= match_iou
        and iou(pred.object_box, gt.object_box) >= match_iou
    )


def match_triplet(pred: Triplet, gts: Sequence[GroundTruthTriplet], consumed: set[int], match_iou: float = 0.5) -> int | None:
    """First unconsumed GT matched by ``pred``; marks it consumed.

    Boxes are compared at IoU >= ``match_iou`` in every task. With GT boxes
    the true pair overlaps at IoU 1, so this reduces to class and predicate
    agreement.
    """
    for g, gt in enumerate(gts):
        if g not in consumed and triplet_matches(pred, gt, match_iou):
            consumed.add(g)
            return g
    return None


def frame_hits(ranked: Sequence[Triplet], gts: Sequence[GroundTruthTriplet], k: int, match_iou: float = 0.5) -> int:
    consumed: set[int] = set()
    for pred in ranked[:k]:
        match_triplet(pred, gts, consumed, match_iou)
    return len(consumed)


def recall_at_k(
    frames: Iterable[tuple[Sequence[Triplet], Sequence[GroundTruthTriplet]]],
    k: int,
    match_iou: float = 0.5,
) -> float | None:
    """Image-wise mean recall over frames with at least one GT triplet.

    Each element of ``frames`` is (ranked predictions, GT triplets). Returns
    None when no frame has GT.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    values = [frame_hits(r, g, k, match_iou) / len(g) for r, g in frames if len(g)]
    # plain left-to-right sum so results do not depend on numpy's pairwise blocking
    return sum(values) / len(values) if values else None


def ap_pred(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """Mean precision at the rank of each positive (scores descending, stable)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not labels.any():
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    precisions = [(i + 1) / int(r) for i, r in enumerate(ranks)]
    return sum(precisions) / len(precisions)


def threshold_sweep(
    frames: Sequence[tuple[Sequence[Triplet], Sequence[GroundTruthTriplet]]],
    thresholds: Sequence[float],
    k: int = 20,
    match_iou: float = 0.5,
    semi_attention: str = "argmax",
) -> list[tuple[float, float | None]]:
    """R@K of the semi strategy at each threshold; ``frames`` carry raw candidates."""
    curve = []
    for th in thresholds:
        ranked = [(apply_strategy(c, "semi", th, semi_attention), g) for c, g in frames]
        curve.append((float(th), recall_at_k(ranked, k, match_iou)))
    return curve


def default_sweep_grid() -> list[float]:
    return [round(0.7 + 0.05 * i, 2) for i in range(6)]


def _row_order(row: tuple[str, str]) -> tuple:
    m, s = row
    return (MODES.index(m) if m in MODES else len(MODES), m, STRATEGIES.index(s) if s in STRATEGIES else len(STRATEGIES), s)


@dataclass
class EvalReport:
    recall: dict[tuple[str, str, int], float | None] = field(default_factory=dict)
    ap: dict[int, float] = field(default_factory=dict)
    sweep: dict[str, list[tuple[float, float | None]]] = field(default_factory=dict)  # per mode
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "recall": [
                {"mode": m, "strategy": s, "k": k, "value": v} for (m, s, k), v in sorted(self.recall.items())
            ],
            "ap_pred": {str(p): v for p, v in sorted(self.ap.items())},
            "sweep": {m: [{"threshold": t, "recall": r} for t, r in c] for m, c in sorted(self.sweep.items())},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        """Table with one row per (mode, strategy) and one column per K."""
        ks = sorted({k for _, _, k in self.recall})
        rows = sorted({(m, s) for m, s, _ in self.recall}, key=_row_order)
        lines = [f"{'mode':<8} {'strategy':<9} " + " ".join(f"{'R@' + str(k):>7}" for k in ks)]
        for m, s in rows:
            cells = []
            for k in ks:
                v = self.recall.get((m, s, k))
                cells.append(f"{'-':>7}" if v is None else f"{100 * v:7.2f}")
            lines.append(f"{m:<8} {s:<9} " + " ".join(cells))
        if self.ap:
            lines.append("")
            lines.append("AP_pred: " + " ".join(f"{p}={100 * v:.2f}" for p, v in sorted(self.ap.items())))
        if self.sweep:
            lines.append("")
        for m, curve in sorted(self.sweep.items()):
            lines.append(f"{m} semi R@20 by threshold: " + " ".join(
                f"{t:.2f}={'-' if r is None else f'{100 * r:.2f}'}" for t, r in curve))
        for key in sorted(self.metadata):
            lines.append(f"{key}: {self.metadata[key]}")
        return "\n".join(lines) + "\n"
