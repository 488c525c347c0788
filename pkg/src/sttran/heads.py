"""Predicate classifiers, the object classifier and the training objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .numerics import (
    BatchNormStats,
    Parameter,
    ParameterSet,
    Tensor,
    batch_norm,
    concat,
    cross_entropy,
    linear,
    relu,
    sigmoid,
    softmax,
)


@dataclass
class PredicateHeads:
    """One linear classifier per relationship type (attention, spatial, contact)."""

    weights: list[Parameter]
    biases: list[Parameter]

    @classmethod
    def build(cls, ps: ParameterSet, d: int, sizes: Sequence[int], names=("attention", "spatial", "contact")):
        ws = [ps.weight(f"head.{n}.w", d, k) for n, k in zip(names, sizes)]
        bs = [ps.zeros(f"head.{n}.b", k) for n, k in zip(names, sizes)]
        return cls(ws, bs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights)


def predicate_forward(rep: Tensor, heads: PredicateHeads) -> list[Tensor]:
    """Raw logits per relationship type for representations of shape (P, D)."""
    if rep.ndim == 1:
        rep = rep.reshape(1, rep.shape[0])
    if rep.shape[1] != heads.weights[0].shape[0]:
        raise ValueError(f"representation dim {rep.shape[1]} != head input {heads.weights[0].shape[0]}")
    return [linear(rep, w, b) for w, b in zip(heads.weights, heads.biases)]


def confidences(logits: np.ndarray) -> np.ndarray:
    """Per-predicate confidence in [0, 1] (independent sigmoid)."""
    out = np.empty_like(logits, dtype=np.float64)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def attention_scores(logits: np.ndarray) -> np.ndarray:
    """Single-label confidence of the attention type: softmax over its classes."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- object classifier ---------------------------------------------------------


def normalize_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scale = np.array([width, height, width, height], dtype=np.float64)
    return np.clip(b / scale, 0.0, 1.0)


@dataclass
class ObjectClassifier:
    """Refines the detector's class distribution into C+1 classes.

    The last output index is background.
    """

    w_e: Parameter
    pos_w1: Parameter
    pos_b1: Parameter
    pos_w2: Parameter
    pos_b2: Parameter
    fc1_w: Parameter
    fc1_b: Parameter
    bn_g: Parameter
    bn_b: Parameter
    bn_stats: BatchNormStats
    fc2_w: Parameter
    fc2_b: Parameter

    @classmethod
    def build(cls, ps: ParameterSet, cfg: ModelConfig) -> "ObjectClassifier":
        c = cfg.n_object_classes
        concat_dim = cfg.visual_dim + cfg.semantic_dim + cfg.pos_dim
        return cls(
            w_e=ps.weight("obj.w_e", c, cfg.semantic_dim),
            pos_w1=ps.weight("obj.pos.w1", 4, cfg.pos_hidden),
            pos_b1=ps.zeros("obj.pos.b1", cfg.pos_hidden),
            pos_w2=ps.weight("obj.pos.w2", cfg.pos_hidden, cfg.pos_dim),
            pos_b2=ps.zeros("obj.pos.b2", cfg.pos_dim),
            fc1_w=ps.weight("obj.fc1.w", concat_dim, cfg.obj_hidden),
            fc1_b=ps.zeros("obj.fc1.b", cfg.obj_hidden),
            bn_g=ps.ones("obj.bn.g", cfg.obj_hidden),
            bn_b=ps.zeros("obj.bn.b", cfg.obj_hidden),
            bn_stats=ps.batch_norm_stats("obj.bn", cfg.obj_hidden, cfg.bn_momentum),
            fc2_w=ps.weight("obj.fc2.w", cfg.obj_hidden, c + 1),
            fc2_b=ps.zeros("obj.fc2.b", c + 1),
        )

    @property
    def concat_dim(self) -> int:
        return self.fc1_w.shape[0]

    def logits(self, visual: Tensor, dists: np.ndarray, boxes_norm: np.ndarray, train: bool) -> Tensor:
        dt = visual.data.dtype
        semantic = Tensor(np.asarray(dists, dtype=dt)) @ self.w_e
        pos = relu(linear(relu(linear(Tensor(np.asarray(boxes_norm, dtype=dt)), self.pos_w1, self.pos_b1)),
                          self.pos_w2, self.pos_b2))
        h = linear(concat([visual, semantic, pos], axis=1), self.fc1_w, self.fc1_b)
        h = relu(batch_norm(h, self.bn_g, self.bn_b, self.bn_stats, train))
        return linear(h, self.fc2_w, self.fc2_b)


def object_classifier(visual, class_distribution, box, width, height, clf: ObjectClassifier, train=False) -> np.ndarray:
    """Refined (C+1)-way distribution for one or more objects."""
    v = Tensor(np.atleast_2d(visual))
    d = np.atleast_2d(class_distribution)
    b = normalize_boxes(box, width, height)
    return softmax(clf.logits(v, d, b, train), axis=1).data


# -- losses ------------------------------------------------------------------------


@dataclass
class PredicateTargets:
    """Binary membership of each predicate in P+ for P pairs of one type."""

    positive: np.ndarray  # (P, n) with 1 for annotated predicates

    @classmethod
    def from_sets(cls, sets: Sequence[Sequence[int]], n: int) -> "PredicateTargets":
        out = np.zeros((len(sets), n))
        for r, s in enumerate(sets):
            for p in s:
                if not 0 <= p < n:
                    raise IndexError(f"predicate id {p} out of range for vocabulary of {n}")
                out[r, p] = 1.0
        return cls(out)

    @property
    def negative(self) -> np.ndarray:
        return 1.0 - self.positive


def margin_loss_terms(scores: Tensor, targets: PredicateTargets) -> Tensor:
    """Per-pair multi-label hinge sum_{p in P+} sum_{q in P-} max(0, 1 - s_p + s_q).

    ``scores`` has shape (P, n); returns shape (P,).
    """
    P, n = scores.shape
    pos = targets.positive
    weight = pos[:, :, None] * (1.0 - pos[:, None, :])
    diff = (1.0 - scores.reshape(P, n, 1)) + scores.reshape(P, 1, n)
    hinge = relu(diff) * Tensor(weight.astype(scores.data.dtype))
    return hinge.sum(axis=(1, 2))


def margin_loss(scores, positives: Sequence[int]) -> Tensor:
    """Hinge loss of one score vector against one set of annotated predicates."""
    s = scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores, dtype=float))
    n = s.shape[-1]
    t = PredicateTargets.from_sets([positives], n)
    return margin_loss_terms(s.reshape(1, n), t).sum()


@dataclass
class LossParts:
    total: Tensor
    predicate: float
    object: float


def total_loss(
    type_logits: Sequence[Tensor] | None,
    type_targets: Sequence[PredicateTargets] | None,
    object_logits: Tensor | None = None,
    object_targets: np.ndarray | None = None,
) -> LossParts:
    """Predicate hinge (mean over pairs, summed over types) plus object cross-entropy.

    Margins are taken on sigmoid confidences. Either term may be absent.
    """
    terms = []
    lp = lo = 0.0
    if type_logits is not None and type_targets is not None and len(type_targets[0].positive):
        n_pairs = type_targets[0].positive.shape[0]
        per_pair = None
        for logits, tgt in zip(type_logits, type_targets):
            t = margin_loss_terms(sigmoid(logits), tgt)
            per_pair = t if per_pair is None else per_pair + t
        pred = per_pair.sum() * (1.0 / n_pairs)
        lp = pred.item()
        terms.append(pred)
    if object_logits is not None and object_targets is not None and len(object_targets):
        obj = cross_entropy(object_logits, object_targets)
        lo = obj.item()
        terms.append(obj)
    if not terms:
        raise ValueError("total_loss needs at least one term")
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return LossParts(total, lp, lo)

