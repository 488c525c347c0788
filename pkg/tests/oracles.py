"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, no shared helpers with the
package) so that agreement is meaningful.
"""

import math


def attention_loop(q, k, v):
    out = []
    for qi in q:
        logits = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(len(qi)) for kj in k]
        m = max(logits)
        w = [math.exp(x - m) for x in logits]
        z = sum(w)
        out.append([sum(w[j] / z * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return out


def margin_loop(scores, positives):
    total = 0.0
    for p in range(len(scores)):
        if p not in positives:
            continue
        for q in range(len(scores)):
            if q in positives:
                continue
            total += max(0.0, 1.0 - scores[p] + scores[q])
    return total


def box_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def strategy_reference(pairs, kind, threshold=0.9):
    """Ranked (pair, predicate id, s_rel) tuples from raw per-pair scores.

    ``pairs`` items are dicts with keys pair, s_sub, s_obj and scores (list of
    per-type lists).
    """
    kept = []
    for p in pairs:
        base = 0
        for typ, scores in enumerate(p["scores"]):
            chosen = []
            if kind == "no":
                chosen = list(range(len(scores)))
            elif kind == "with" or (kind == "semi" and typ == 0):
                best = 0
                for i in range(1, len(scores)):
                    if scores[i] > scores[best]:
                        best = i
                chosen = [best]
            else:
                chosen = [i for i in range(len(scores)) if scores[i] > threshold]
            for i in chosen:
                kept.append((p["pair"], base + i, p["s_sub"] * scores[i] * p["s_obj"], typ, scores[i]))
            base += len(scores)
    # selection sort on (score desc, pair asc, predicate asc)
    ranked = []
    rest = list(kept)
    while rest:
        best = 0
        for i in range(1, len(rest)):
            a, b = rest[i], rest[best]
            if a[2] > b[2] or (a[2] == b[2] and (a[0], a[1]) < (b[0], b[1])):
                best = i
        ranked.append(rest.pop(best))
    return ranked


def recall_reference(frames, k, iou_threshold=0.5):
    """frames: list of (ranked predictions, gts); items are
    (subject_class, subject_box, predicate, object_class, object_box)."""
    ratios = []
    for ranked, gts in frames:
        if len(gts) == 0:
            continue
        taken = [False] * len(gts)
        for pred in ranked[:k]:
            for g in range(len(gts)):
                gt = gts[g]
                if taken[g]:
                    continue
                if (pred[0] == gt[0] and pred[2] == gt[2] and pred[3] == gt[3]
                        and box_iou(pred[1], gt[1]) >= iou_threshold and box_iou(pred[4], gt[4]) >= iou_threshold):
                    taken[g] = True
                    break
        ratios.append(sum(taken) / len(gts))
    if not ratios:
        return None
    return sum(ratios) / len(ratios)


def ap_reference(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits = 0
    precisions = []
    for rank, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1
