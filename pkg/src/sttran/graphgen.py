"""Scene-graph triplets from per-pair predicate confidences.

Three strategies decide which predicates a subject-object pair may emit:

* ``with``: the best predicate of each relationship type (at most 3 per pair);
* ``semi``: the best attention predicate plus every spatial/contact predicate
  whose confidence is strictly above a threshold;
* ``no``: every predicate.

Ranked output is ordered by triplet score, then pair index, then predicate id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import STRATEGIES

ATTENTION, SPATIAL, CONTACT = 0, 1, 2


@dataclass
class PairPrediction:
    """Everything the strategies need about one candidate pair of a frame."""

    pair_index: int
    subject_class: int
    object_class: int
    subject_box: tuple[float, float, float, float]
    object_box: tuple[float, float, float, float]
    subject_score: float
    object_score: float
    type_scores: Sequence[np.ndarray]  # per type, s_p for each predicate of that type


@dataclass(frozen=True)
class Triplet:
    pair_index: int
    subject_class: int
    subject_box: tuple[float, float, float, float]
    subject_score: float
    predicate: int  # global id: attention, then spatial, then contact
    predicate_type: int
    predicate_score: float
    object_class: int
    object_box: tuple[float, float, float, float]
    object_score: float
    score: float

    def sort_key(self):
        return (-self.score, self.pair_index, self.predicate)

    def to_dict(self) -> dict:
        return {
            "pair": self.pair_index,
            "subject": {"class": self.subject_class, "box": list(self.subject_box), "score": self.subject_score},
            "predicate": {"id": self.predicate, "type": self.predicate_type, "score": self.predicate_score},
            "object": {"class": self.object_class, "box": list(self.object_box), "score": self.object_score},
            "score": self.score,
        }


@dataclass
class StrategyConfig:
    """Validated strategy settings; ``semi_attention`` is ``argmax`` or ``threshold``."""

    kind: str = "with"
    threshold: float = 0.9
    ks: tuple[int, ...] = field(default=(10, 20, 50))
    semi_attention: str = "argmax"

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.kind!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not self.ks or any(int(k) < 1 for k in self.ks):
            raise ValueError("K must be >= 1")
        if self.semi_attention not in ("argmax", "threshold"):
            raise ValueError("semi_attention must be 'argmax' or 'threshold'")


def type_offsets(sizes: Sequence[int]) -> list[int]:
    return [int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]])]


def score_triplets(pairs: Sequence[PairPrediction]) -> list[Triplet]:
    """One candidate per (pair, predicate) with score s_sub * s_p * s_obj."""
    out = []
    for p in pairs:
        sizes = [len(s) for s in p.type_scores]
        offs = type_offsets(sizes)
        for t, scores in enumerate(p.type_scores):
            for k, sp in enumerate(scores):
                sp = float(sp)
                out.append(
                    Triplet(
                        p.pair_index, p.subject_class, tuple(p.subject_box), float(p.subject_score),
                        offs[t] + k, t, sp,
                        p.object_class, tuple(p.object_box), float(p.object_score),
                        float(p.subject_score) * sp * float(p.object_score),
                    )
                )
    return out


def _argmax_per_group(cands: list[Triplet]) -> list[Triplet]:
    best: dict[tuple[int, int], Triplet] = {}
    for c in cands:
        key = (c.pair_index, c.predicate_type)
        cur = best.get(key)
        if cur is None or c.predicate_score > cur.predicate_score or (
            c.predicate_score == cur.predicate_score and c.predicate < cur.predicate
        ):
            best[key] = c
    return list(best.values())


def apply_strategy(
    candidates: Sequence[Triplet],
    kind: str | StrategyConfig = "with",
    threshold: float = 0.9,
    semi_attention: str = "argmax",
) -> list[Triplet]:
    """Filter the candidates of one frame by strategy and rank them.

    ``threshold`` may be any real here (sweeps use 0 and values above 1).
    """
    if isinstance(kind, StrategyConfig):
        kind, threshold, semi_attention = kind.kind, kind.threshold, kind.semi_attention
    if kind not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {kind!r}")
    cands = list(candidates)
    if kind == "with":
        kept = _argmax_per_group(cands)
    elif kind == "semi":
        att = [c for c in cands if c.predicate_type == ATTENTION]
        if semi_attention == "argmax":
            kept = _argmax_per_group(att)
        else:
            kept = [c for c in att if c.predicate_score > threshold]
        kept += [c for c in cands if c.predicate_type != ATTENTION and c.predicate_score > threshold]
    else:
        kept = cands
    return sorted(kept, key=Triplet.sort_key)


def topk(ranked: Sequence[Triplet], k: int) -> list[Triplet]:
    if k < 1:
        raise ValueError("K must be >= 1")
    return list(ranked[:k])
