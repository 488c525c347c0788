"""Self-checks bundled for the ``verify`` and ``gradcheck`` commands.

Each check is seeded and returns a named result so a failure can be
reproduced from the printed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ModelConfig, preset
from .data.synth import SynthSpec, generate_split
from .evaluation import ap_pred, recall_at_k
from .graphgen import PairPrediction, apply_strategy, score_triplets
from .model import STTran, build_video_input
from .numerics import (
    GradCheckReport,
    ParameterSet,
    Tensor,
    clip_global_norm,
    corrupted_backward,
    grad_check,
    precision,
    softmax,
)
from .transformer import (
    AttentionParams,
    FrameEncoding,
    build_frame_encoding,
    make_windows,
    spatial_encoder,
    temporal_decoder,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seed: int
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name} (seed={self.seed}, {self.seconds:.1f}s): {self.detail}"


def tiny_video_setup(mode: str = "sgcls", seed: int = 0, n_frames: int = 3, window: int = 2, generic: bool = False):
    """A tiny model and one synthetic video in 64-bit, dropout off.

    ``generic`` jitters every parameter so that no ReLU input sits exactly on
    its kink (zero biases over empty mask regions otherwise do).
    """
    cfg = preset("tiny", mode=mode, seed=seed, window=window, dropout=0.0, precision=64)
    spec = SynthSpec.for_config(cfg, n_videos=1, n_frames=n_frames, objects_per_frame=(2, 2),
                                coupling=0.5, multi_spatial=0.5, seed=seed)
    video = generate_split(spec, "train")[0][0]
    model = STTran(cfg)
    if generic:
        rng = np.random.default_rng([seed, 17])
        for p in model.parameters():
            p.data += rng.normal(0.0, 0.1, p.shape)
    inp = build_video_input(video, cfg, seed)
    return cfg, model, inp


def end_to_end_gradcheck(seed: int = 0, mode: str = "sgcls", max_per_param: int | None = 12) -> GradCheckReport:
    """Finite-difference check of the full loss on a tiny video (T=3, window 2)."""
    with precision(64):
        cfg, model, inp = tiny_video_setup(mode, seed, generic=True)

        def loss():
            return model.loss(inp, model.forward(inp, train=True)).total

        return grad_check(loss, model.parameters(), seed=seed, max_per_param=max_per_param)


def corrupted_gradcheck(seed: int = 0) -> GradCheckReport:
    with corrupted_backward():
        return end_to_end_gradcheck(seed, max_per_param=4)


def encoder_permutation_error(seed: int = 0, n: int = 5, d: int = 16) -> float:
    """Max deviation between encoder(permuted input) and permuted encoder output."""
    with precision(64):
        rng = np.random.default_rng(seed)
        ps = ParameterSet(seed)
        layers = [AttentionParams.build(ps, "enc.0", d, 2, 24)]
        x = rng.normal(size=(n, d))
        perm = rng.permutation(n)
        frames = np.zeros(n, dtype=np.int64)
        a = spatial_encoder(Tensor(x), frames, layers).data[perm]
        b = spatial_encoder(Tensor(x[perm]), frames, layers).data
        return float(np.abs(a - b).max())


def decoder_swap_difference(kind: str, seed: int = 0, per_frame: int = 3, d: int = 16) -> float:
    """Max difference after swapping the two frames of one window (outputs re-aligned)."""
    with precision(64):
        rng = np.random.default_rng(seed)
        ps = ParameterSet(seed)
        layers = [AttentionParams.build(ps, f"dec.{i}", d, 2, 24) for i in range(2)]
        enc: FrameEncoding = build_frame_encoding(kind, 2, d, ps)
        if kind == "learned":
            enc.vectors.data[:] = rng.normal(0.0, 1.0, enc.vectors.shape)
        x = rng.normal(size=(2 * per_frame, d))
        frames = np.repeat([0, 1], per_frame)
        windows = make_windows(2, 2)
        z1, _ = temporal_decoder(Tensor(x), frames, windows, enc, layers)
        swapped = np.concatenate([x[per_frame:], x[:per_frame]])
        z2, _ = temporal_decoder(Tensor(swapped), frames, windows, enc, layers)
        realigned = np.concatenate([z2.data[per_frame:], z2.data[:per_frame]])
        return float(np.abs(z1.data - realigned).max())


def random_pairs(rng: np.random.Generator, n_pairs: int, sizes=(2, 3, 4), n_classes: int = 4) -> list[PairPrediction]:
    out = []
    for k in range(n_pairs):
        sb = (float(k * 20), 0.0, float(k * 20 + 10), 10.0)
        ob = (float(k * 20), 20.0, float(k * 20 + 10), 30.0)
        att = softmax(Tensor(rng.normal(size=(1, sizes[0]))), axis=1).data[0]
        scores = [att] + [rng.random(n) for n in sizes[1:]]
        out.append(PairPrediction(k, 0, int(rng.integers(1, n_classes)), sb, ob, float(rng.random()), float(rng.random()), scores))
    return out


def brute_force_recall(frames, k: int) -> float | None:
    """Reference recall: greedy consumption written as explicit loops."""
    values = []
    for ranked, gts in frames:
        if not gts:
            continue
        used = [False] * len(gts)
        for pred in ranked[:k]:
            for g, gt in enumerate(gts):
                if used[g]:
                    continue
                same = (pred.predicate == gt.predicate and pred.subject_class == gt.subject_class
                        and pred.object_class == gt.object_class
                        and tuple(pred.subject_box) == tuple(gt.subject_box)
                        and tuple(pred.object_box) == tuple(gt.object_box))
                if same:
                    used[g] = True
                    break
        values.append(sum(used) / len(gts))
    return sum(values) / len(values) if values else None


def strategy_invariants(seed: int = 0, n_instances: int = 50) -> list[str]:
    """Violations of the strategy/recall invariants on random instances."""
    from .evaluation import GroundTruthTriplet

    rng = np.random.default_rng(seed)
    problems = []
    for n in range(n_instances):
        frames = []
        for _ in range(int(rng.integers(1, 6))):
            pairs = random_pairs(rng, int(rng.integers(1, 5)))
            cands = score_triplets(pairs)
            gts = []
            for c in cands:
                if rng.random() < 0.2:
                    gts.append(GroundTruthTriplet(c.subject_class, c.subject_box, c.predicate, c.object_class, c.object_box))
            frames.append((cands, gts))
        for cands, _ in frames:
            w, no = apply_strategy(cands, "with"), apply_strategy(cands, "no")
            if not set(w) <= set(no):
                problems.append(f"instance {n}: with not a subset of no")
            per_pair: dict[int, int] = {}
            for t in w:
                per_pair[t.pair_index] = per_pair.get(t.pair_index, 0) + 1
            if any(v > 3 for v in per_pair.values()):
                problems.append(f"instance {n}: more than 3 triplets per pair")
            sizes = [len(apply_strategy(cands, "semi", th)) for th in (0.1, 0.5, 0.9, 0.99)]
            if any(b > a for a, b in zip(sizes, sizes[1:])):
                problems.append(f"instance {n}: semi output grows with threshold")
        for s in ("with", "semi", "no"):
            ranked = [(apply_strategy(c, s), g) for c, g in frames]
            r = [recall_at_k(ranked, k) for k in (10, 20, 50)]
            if r[0] is not None and not r[0] <= r[1] <= r[2]:
                problems.append(f"instance {n}: recall not monotone in K for {s}")
            for k in (1, 10):
                if recall_at_k(ranked, k) != brute_force_recall(ranked, k):
                    problems.append(f"instance {n}: recall@{k} disagrees with reference for {s}")
    if abs(ap_pred([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1]) - (1 + 2 / 3 + 3 / 4) / 3) > 1e-12:
        problems.append("ap_pred hand example")
    return problems


def _timed(name: str, seed: int, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, seed, time.perf_counter() - start)


def run_verify(cfg: ModelConfig | None = None, seed: int | None = None) -> list[CheckResult]:
    seed = (cfg.seed if cfg is not None else 0) if seed is None else seed
    results = []

    def gradcheck():
        rep = end_to_end_gradcheck(seed)
        return rep.passed(1e-4), f"max rel. error {rep.max_rel_error:.2e} at {rep.worst} ({rep.n_checked} entries)"

    def negative_control():
        rep = corrupted_gradcheck(seed)
        return rep.max_rel_error > 1e-2, f"corrupted backward gives {rep.max_rel_error:.2e}"

    def encoder_perm():
        err = encoder_permutation_error(seed)
        return err <= 1e-5, f"max deviation {err:.2e}"

    def decoder_eq():
        learned = decoder_swap_difference("learned", seed)
        none = decoder_swap_difference("none", seed)
        return learned > 1e-6 and none <= 1e-5, f"learned {learned:.2e}, none {none:.2e}"

    def clip_idem():
        from .numerics import Parameter

        rng = np.random.default_rng(seed)
        ps = [Parameter(rng.normal(size=(3, 4)), "a"), Parameter(rng.normal(size=5), "b")]
        for p in ps:
            p.grad = rng.normal(size=p.shape) * 10
        clip_global_norm(ps, 5.0)
        once = [p.grad.copy() for p in ps]
        clip_global_norm(ps, 5.0)
        return all(np.allclose(a, p.grad, rtol=0, atol=1e-12) for a, p in zip(once, ps)), "clip twice == clip once"

    def strategies():
        problems = strategy_invariants(seed)
        return not problems, "ok" if not problems else "; ".join(problems[:3])

    def determinism():
        with precision(64):
            _, m1, inp = tiny_video_setup("predcls", seed)
            _, m2, _ = tiny_video_setup("predcls", seed)
            a = m1.forward(inp).type_logits
            b = m2.forward(inp).type_logits
        same = all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
        return same, "identical forward passes" if same else "forward passes differ"

    for name, fn in [
        ("end-to-end gradient check", gradcheck),
        ("gradient check negative control", negative_control),
        ("spatial encoder permutation equivariance", encoder_perm),
        ("temporal decoder frame-swap equivariance", decoder_eq),
        ("clip_global_norm idempotence", clip_idem),
        ("strategy and recall invariants", strategies),
        ("seeded determinism", determinism),
    ]:
        results.append(_timed(name, seed, fn))
    return results
