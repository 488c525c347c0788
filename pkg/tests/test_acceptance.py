"""Acceptance runs A1-A8. Each test records one pass/fail line shown in the terminal summary."""

import time

import numpy as np

from sttran.config import preset
from sttran.data.perturb import perturb_videos
from sttran.data.synth import SynthSpec, generate_split
from sttran.evaluation import GroundTruthTriplet, ap_pred, recall_at_k, threshold_sweep
from sttran.graphgen import PairPrediction, apply_strategy, score_triplets
from sttran.heads import predicate_forward
from sttran.model import STTran, build_video_input
from sttran.numerics import ParameterSet, Tensor, cross_entropy, grad_check, precision, take
from sttran.training import evaluate, train_model
from sttran.transformer import make_windows, spatial_encoder, temporal_decoder
from sttran.verify import decoder_swap_difference, encoder_permutation_error, end_to_end_gradcheck

from oracles import ap_reference, recall_reference, strategy_reference
from test_numerics import OPS

R10 = ("predcls", "with", 10)


def _fit(cfg, videos):
    model = STTran(cfg)
    train_model(model, [build_video_input(v, cfg) for v in videos])
    return model


def _r10(model, videos):
    return evaluate(model, videos, ("with",), ks=(10,)).recall[R10]


# -- A1 -----------------------------------------------------------------------------


def test_a1_gradient_integrity(acceptance):
    start = time.perf_counter()
    worst = {}
    with precision(64):
        for name, (f, shapes) in sorted(OPS.items()):
            rng = np.random.default_rng(len(name))
            ps = ParameterSet(0)
            params = [ps.constant(f"{name}.{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
            worst[name] = grad_check(lambda: f(*params), params).max_rel_error
        rng = np.random.default_rng(0)
        z = ParameterSet(0).constant("z", rng.normal(size=(5, 4)))
        worst["cross_entropy"] = grad_check(lambda: cross_entropy(z, [0, 3, 1, 1, 2]), [z]).max_rel_error
    for mode in ("sgcls", "predcls"):
        worst[f"end_to_end_{mode}"] = end_to_end_gradcheck(0, mode).max_rel_error
    elapsed = time.perf_counter() - start
    name = max(worst, key=worst.get)
    ok = worst[name] <= 1e-4 and elapsed < 60
    acceptance("A1", ok, f"max rel. error {worst[name]:.2e} ({name}), {elapsed:.1f}s")
    assert ok


# -- A2 -----------------------------------------------------------------------------


def test_a2_overfit_fixture(acceptance):
    start = time.perf_counter()
    cfg = preset("desk", steps=2000)
    videos, _ = generate_split(SynthSpec.for_config(cfg, n_videos=20, n_frames=5), "train")
    r10 = _r10(_fit(cfg, videos), videos)
    elapsed = time.perf_counter() - start
    ok = r10 >= 0.95 and elapsed < 600
    acceptance("A2", ok, f"train-split PredCLS R@10 with constraint {r10:.3f} (need >= 0.95), {elapsed:.0f}s")
    assert ok


# -- A3 -----------------------------------------------------------------------------


def test_a3_temporal_signal_separation(acceptance):
    start = time.perf_counter()
    cfg = preset("desk", steps=3000)
    spec = SynthSpec.for_config(cfg, n_videos=60, n_test_videos=30, n_frames=6, coupling=0.9, persistence=0.25)
    train, _ = generate_split(spec, "train")
    test, _ = generate_split(spec, "test")
    full = _r10(_fit(cfg, train), test)
    encoder_only = _r10(_fit(cfg.replace(dec_layers=0), train), test)
    elapsed = time.perf_counter() - start
    gap = 100 * (full - encoder_only)
    ok = gap >= 10 and elapsed < 1200
    acceptance("A3", ok, f"full {full:.3f} vs encoder-only {encoder_only:.3f}: +{gap:.1f} points (need >= 10), {elapsed:.0f}s")
    assert ok


# -- A4 -----------------------------------------------------------------------------

A4_SEEDS = (0, 1, 2)
A4_DATA = dict(n_videos=60, n_test_videos=30, n_frames=24, coupling=0.9, persistence=0.8)


def test_a4_perturbation_ordering(acceptance):
    start = time.perf_counter()
    votes, rows = 0, []
    for seed in A4_SEEDS:
        cfg = preset("desk", steps=2000, seed=seed)
        spec = SynthSpec.for_config(cfg, seed=seed, **A4_DATA)
        train, _ = generate_split(spec, "train")
        test, _ = generate_split(spec, "test")
        r = {"normal": _r10(_fit(cfg, train), test)}
        for how in ("reverse", "shuffle"):
            r[how] = _r10(_fit(cfg, perturb_videos(train, 1 / 3, how, seed)[0]), test)
        held = r["shuffle"] < r["reverse"] < r["normal"]
        votes += held
        rows.append(f"seed {seed}: {r['normal']:.3f}/{r['reverse']:.3f}/{r['shuffle']:.3f}")
    elapsed = time.perf_counter() - start
    ok = votes * 2 > len(A4_SEEDS) and elapsed < 1800
    acceptance("A4", ok, f"normal/reverse/shuffle {'; '.join(rows)}; ordering held {votes}/3, {elapsed:.0f}s")
    assert ok


# -- A5 -----------------------------------------------------------------------------

SIZES = (2, 3, 4)


def _instance(rng):
    """Up to 5 frames of up to 4 pairs; coarse scores force ties, some GT is unreachable."""
    frames = []
    for _ in range(int(rng.integers(1, 6))):
        pairs, gts = [], []
        for k in range(int(rng.integers(1, 5))):
            sb = (float(30 * k), 0.0, float(30 * k + 20), 20.0)
            ob = (float(30 * k), 25.0, float(30 * k + 20), 45.0)
            oc = int(rng.integers(1, 4))
            det_box = ob if rng.random() < 0.8 else (ob[0] + 12, ob[1], ob[2] + 12, ob[3])
            det_cls = oc if rng.random() < 0.8 else 4
            scores = [np.round(rng.random(n), 1) for n in SIZES]
            pairs.append(PairPrediction(k, 0, det_cls, sb, det_box, float(np.round(rng.random(), 1)),
                                        float(np.round(rng.random(), 1)), scores))
            for p in rng.choice(sum(SIZES), size=int(rng.integers(0, 4)), replace=False):
                gts.append(GroundTruthTriplet(0, sb, int(p), oc, ob))
        frames.append((pairs, gts))
    return frames


def _raw(p):
    return {"pair": p.pair_index, "s_sub": p.subject_score, "s_obj": p.object_score,
            "scores": [list(map(float, s)) for s in p.type_scores]}


def _tuples(items):
    return [(t.subject_class, tuple(t.subject_box), t.predicate, t.object_class, tuple(t.object_box)) for t in items]


def test_a5_evaluator_oracle_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    mismatches = []
    for n in range(100):
        frames = _instance(rng)
        for kind in ("with", "semi", "no"):
            ranked = []
            for pairs, gts in frames:
                got = apply_strategy(score_triplets(pairs), kind, 0.5)
                ref = strategy_reference([_raw(p) for p in pairs], kind, 0.5)
                if [(t.pair_index, t.predicate, t.score) for t in got] != [r[:3] for r in ref]:
                    mismatches.append(f"{n}/{kind}/strategy")
                ranked.append((got, gts))
            for k in (1, 3, 10):
                ref = recall_reference([(_tuples(r), _tuples(g)) for r, g in ranked], k)
                if recall_at_k(ranked, k) != ref:
                    mismatches.append(f"{n}/{kind}/recall@{k}")
        scores = [float(s) for pairs, _ in frames for p in pairs for s in p.type_scores[1]]
        labels = [int(v) for v in rng.random(len(scores)) < 0.4]
        if ap_pred(scores, labels) != ap_reference(scores, labels):
            mismatches.append(f"{n}/ap")
    ok = not mismatches
    acceptance("A5", ok, "100 instances exact" if ok else f"{len(mismatches)} mismatches, first {mismatches[:3]}")
    assert ok


# -- A6 -----------------------------------------------------------------------------


def test_a6_strategy_metric_invariants(acceptance):
    rng = np.random.default_rng(77)
    problems = []
    thetas = (0.0, 0.3, 0.5, 0.7, 0.9, 0.99)
    for n in range(100):
        frames = _instance(rng)
        cands = [(score_triplets(p), g) for p, g in frames]
        for kind in ("with", "semi", "no"):
            ranked = [(apply_strategy(c, kind), g) for c, g in cands]
            r = [recall_at_k(ranked, k) for k in (10, 20, 50)]
            if r[0] is not None and not r[0] <= r[1] <= r[2]:
                problems.append(f"{n}: R@K not monotone ({kind})")
        for c, _ in cands:
            key = lambda t: (t.pair_index, t.predicate)
            with_ = apply_strategy(c, "with")
            if not {key(t) for t in with_} <= {key(t) for t in apply_strategy(c, "no")}:
                problems.append(f"{n}: with not within no")
            per_pair = {}
            for t in with_:
                per_pair[t.pair_index] = per_pair.get(t.pair_index, 0) + 1
            if max(per_pair.values(), default=0) > 3:
                problems.append(f"{n}: more than 3 triplets per pair")
            kept = [{key(t) for t in apply_strategy(c, "semi", th)} for th in thetas]
            if any(not b <= a for a, b in zip(kept, kept[1:])):
                problems.append(f"{n}: semi not monotone in threshold")
        # sweep endpoints: above every confidence only the attention argmax is left
        top = dict(threshold_sweep(cands, [2.0]))[2.0]
        att = recall_at_k([([t for t in apply_strategy(c, "with") if t.predicate_type == 0], g) for c, g in cands], 20)
        if top != att:
            problems.append(f"{n}: sweep upper endpoint")
        low = dict(threshold_sweep(cands, [0.0], semi_attention="threshold", k=50))[0.0]
        positive = [([t for t in apply_strategy(c, "no") if t.predicate_score > 0], g) for c, g in cands]
        if low != recall_at_k(positive, 50):
            problems.append(f"{n}: sweep lower endpoint")
    ok = not problems
    acceptance("A6", ok, "all invariants exact on 100 instances" if ok else "; ".join(problems[:3]))
    assert ok


# -- A7 -----------------------------------------------------------------------------


def test_a7_paper_preset_structure(acceptance):
    start = time.perf_counter()
    cfg = preset("paper")
    spec = SynthSpec.for_config(cfg, n_videos=1, n_frames=2, objects_per_frame=(10, 10))
    video = generate_split(spec, "train")[0][0]
    model = STTran(cfg)
    inp = build_video_input(video, cfg)
    stages = {}
    x = model.relation.encode(Tensor(inp.visual), inp.pair_sub, inp.pair_obj, inp.union, inp.masks, inp.given_labels)
    stages["relation"] = x.shape
    x = spatial_encoder(x, inp.pair_frame, model.encoder)
    stages["encoder"] = x.shape
    z, layout = temporal_decoder(x, inp.pair_frame, make_windows(2, cfg.window, cfg.stride), model.frame_encoding,
                                 model.decoder, cfg.reencode_every_layer)
    stages["decoder"] = z.shape
    x = take(z, layout.final)
    stages["final"] = x.shape
    stages["heads"] = tuple(l.shape for l in predicate_forward(x, model.heads))
    out = model.forward(inp)
    elapsed = time.perf_counter() - start
    expected = {"relation": (20, 1936), "encoder": (20, 1936), "decoder": (20, 1936), "final": (20, 1936),
                "heads": ((20, 3), (20, 6), (20, 17))}
    ok = (stages == expected and inp.union.shape == (20, 256, 7, 7) and inp.visual.shape[1] == 2048
          and out.representation.shape == (20, 1936) and elapsed < 30)
    acceptance("A7", ok, f"stages {stages}, {elapsed:.1f}s")
    assert ok


# -- A8 -----------------------------------------------------------------------------


def test_a8_equivariance_pair(acceptance):
    perm = max(encoder_permutation_error(seed) for seed in range(3))
    learned = min(decoder_swap_difference("learned", seed) for seed in range(3))
    none = max(decoder_swap_difference("none", seed) for seed in range(3))
    ok = perm <= 1e-5 and learned > 1e-6 and none <= 1e-5
    acceptance("A8", ok, f"encoder permutation {perm:.1e}; decoder swap learned {learned:.1e}, none {none:.1e}")
    assert ok
