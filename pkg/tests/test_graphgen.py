import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sttran.graphgen import (
    PairPrediction,
    StrategyConfig,
    Triplet,
    apply_strategy,
    score_triplets,
    topk,
    type_offsets,
)

from oracles import strategy_reference

BOX_S = (0.0, 0.0, 10.0, 10.0)
BOX_O = (5.0, 5.0, 20.0, 20.0)


def _pair(idx, att, spa, con, s_sub=1.0, s_obj=1.0):
    return PairPrediction(idx, 0, 1, BOX_S, BOX_O, s_sub, s_obj,
                          [np.asarray(att, float), np.asarray(spa, float), np.asarray(con, float)])


def _raw(p):
    return {"pair": p.pair_index, "s_sub": p.subject_score, "s_obj": p.object_score,
            "scores": [list(map(float, s)) for s in p.type_scores]}


def test_triplet_score_is_product():
    t = score_triplets([_pair(0, [0.8, 0.2], [0.1], [0.0], s_sub=0.9, s_obj=0.7)])
    assert np.isclose(t[0].score, 0.504)
    assert t[3].score == 0.0
    t = score_triplets([_pair(0, [0.3, 0.7], [0.6], [0.2])])
    assert [c.score for c in t] == [c.predicate_score for c in t]


def test_global_predicate_ids():
    assert type_offsets((3, 6, 17)) == [0, 3, 9]
    t = score_triplets([_pair(0, [0.5, 0.5], [0.1, 0.2, 0.3], [0.4, 0.5])])
    assert [c.predicate for c in t] == list(range(7))
    assert [c.predicate_type for c in t] == [0, 0, 1, 1, 1, 2, 2]


def test_semi_keeps_multiple_spatial_labels():
    cands = score_triplets([_pair(0, [0.9, 0.1], [0.95, 0.91, 0.4], [0.2, 0.1])])
    semi = apply_strategy(cands, "semi", 0.9)
    assert sorted(c.predicate for c in semi if c.predicate_type == 1) == [2, 3]
    with_ = apply_strategy(cands, "with")
    assert [c.predicate for c in with_ if c.predicate_type == 1] == [2]


def test_high_threshold_leaves_attention_argmax():
    cands = score_triplets([_pair(0, [0.3, 0.7], [0.95, 0.91], [0.5, 0.98])])
    semi = apply_strategy(cands, "semi", 0.99)
    assert [(c.predicate, c.predicate_type) for c in semi] == [(1, 0)]


def test_threshold_is_strict():
    cands = score_triplets([_pair(0, [1.0, 0.0], [0.9, 0.5], [0.9, 0.1])])
    semi = apply_strategy(cands, "semi", 0.9)
    assert [c.predicate_type for c in semi] == [0]


def test_semi_threshold_attention_option():
    cands = score_triplets([_pair(0, [0.3, 0.7], [0.95], [0.1])])
    assert [c.predicate for c in apply_strategy(cands, StrategyConfig("semi", 0.9, semi_attention="threshold"))] == [2]


def test_no_constraint_keeps_everything():
    cands = score_triplets([_pair(0, [0.5, 0.5], [0.1, 0.2], [0.3]), _pair(1, [0.1, 0.9], [0.9, 0.2], [0.3])])
    assert len(apply_strategy(cands, "no")) == len(cands) == 10


def test_ties_break_by_pair_then_predicate():
    cands = score_triplets([_pair(1, [0.5, 0.5], [0.5], [0.5]), _pair(0, [0.5, 0.5], [0.5], [0.5])])
    ranked = apply_strategy(cands, "no")
    assert [(c.pair_index, c.predicate) for c in ranked] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)]
    with_ = apply_strategy(cands, "with")
    assert [(c.pair_index, c.predicate) for c in with_] == [(0, 0), (0, 2), (0, 3), (1, 0), (1, 2), (1, 3)]


def test_topk():
    cands = score_triplets([_pair(0, [0.5, 0.5], [0.1, 0.2], [0.3])])
    assert len(topk(apply_strategy(cands, "no"), 10)) == 5
    assert len(topk(apply_strategy(cands, "no"), 2)) == 2
    with pytest.raises(ValueError):
        topk(cands, 0)


def test_strategy_config_validation():
    with pytest.raises(ValueError):
        StrategyConfig("best")
    with pytest.raises(ValueError):
        StrategyConfig("semi", 1.0)
    with pytest.raises(ValueError):
        StrategyConfig("semi", 0.9, ks=(0,))
    with pytest.raises(ValueError):
        StrategyConfig("semi", 0.9, semi_attention="mean")
    with pytest.raises(ValueError):
        apply_strategy([], "best")


def test_triplet_dict_round_values():
    t = score_triplets([_pair(3, [0.25, 0.75], [0.5], [0.5], s_sub=0.5, s_obj=0.5)])[1]
    d = t.to_dict()
    assert d["pair"] == 3 and d["predicate"] == {"id": 1, "type": 0, "score": 0.75}
    assert d["score"] == d["subject"]["score"] * d["predicate"]["score"] * d["object"]["score"]


scores_st = st.floats(0, 1, allow_nan=False).map(lambda x: round(x, 2))


@st.composite
def frames(draw):
    sizes = draw(st.sampled_from([(2, 3, 4), (1, 2, 2), (3, 3, 3)]))
    n = draw(st.integers(1, 4))
    pairs = []
    for k in range(n):
        ts = [draw(st.lists(scores_st, min_size=m, max_size=m)) for m in sizes]
        pairs.append(_pair(k, *ts, s_sub=draw(scores_st), s_obj=draw(scores_st)))
    return pairs


@given(frames(), st.sampled_from(["with", "semi", "no"]), st.sampled_from([0.0, 0.5, 0.9, 0.99]))
@settings(max_examples=150, deadline=None)
def test_strategy_matches_reference(pairs, kind, theta):
    got = [(t.pair_index, t.predicate, t.score) for t in apply_strategy(score_triplets(pairs), kind, theta)]
    ref = [(p, q, s) for p, q, s, _, _ in strategy_reference([_raw(p) for p in pairs], kind, theta)]
    assert got == ref


@given(frames(), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_strategy_invariants(pairs, a, b):
    cands = score_triplets(pairs)
    key = lambda t: (t.pair_index, t.predicate)
    with_ = apply_strategy(cands, "with")
    no = apply_strategy(cands, "no")
    assert {key(t) for t in with_} <= {key(t) for t in no}
    per_pair = {}
    for t in with_:
        per_pair.setdefault(t.pair_index, []).append(t.predicate_type)
    assert all(len(v) <= 3 and len(set(v)) == len(v) for v in per_pair.values())
    lo, hi = min(a, b), max(a, b)
    assert {key(t) for t in apply_strategy(cands, "semi", hi)} <= {key(t) for t in apply_strategy(cands, "semi", lo)}
    assert apply_strategy(cands, "no") == apply_strategy(list(reversed(cands)), "no")
    assert all(isinstance(t, Triplet) for t in no)
