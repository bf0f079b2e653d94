"""Slow, independent reference implementations used by the tests."""

import itertools
import math


def brute_force_assignment(cost):
    """Minimum total cost over every injective row->column (or column->row) map."""
    n, m = len(cost), len(cost[0]) if len(cost) else 0
    if n == 0 or m == 0:
        return 0.0
    best = math.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = 0.0
            for r in range(n):
                total += cost[r][cols[r]]
            best = min(best, total)
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted(zip(rows, range(m)))
            total = 0.0
            for r, c in pairs:
                total += cost[r][c]
            best = min(best, total)
    return best


def _iou(a, b):
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def oracle_recalls(preds, gts, k, num_predicates):
    """Scene-averaged recall and per-predicate recall by exhaustive scanning.

    ``preds`` items are lists of (score, s_label, p_label, o_label, s_box, o_box);
    ``gts`` items are (entity_classes, entity_boxes, triplets).
    """
    scene_r = []
    per_sum = [0.0] * num_predicates
    per_n = [0] * num_predicates
    for cands, (cls, boxes, trips) in zip(preds, gts):
        if not trips:
            continue
        order = sorted(range(len(cands)), key=lambda i: (-cands[i][0], i))[:k]
        hit = []
        for s, p, o in trips:
            found = False
            for i in order:
                _, sl, pl, ol, sb, ob = cands[i]
                if (sl == cls[s] and pl == p and ol == cls[o]
                        and _iou(sb, boxes[s]) >= 0.5 and _iou(ob, boxes[o]) >= 0.5):
                    found = True
                    break
            hit.append(found)
        scene_r.append(sum(hit) / len(hit))
        for c in set(p for _, p, _ in trips):
            sel = [h for h, (_, p, _) in zip(hit, trips) if p == c]
            per_sum[c] += sum(sel) / len(sel)
            per_n[c] += 1
    r = sum(scene_r) / len(scene_r)
    per = [per_sum[c] / per_n[c] for c in range(num_predicates) if per_n[c]]
    return r, sum(per) / len(per)


def supcon_closed_form(feats, labels, tau, denominator="negatives-only"):
    """Scalar loops over rows; positives exclude self."""
    n = len(feats)
    dot = lambda a, b: sum(x * y for x, y in zip(a, b))
    total = 0.0
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if denominator == "negatives-only":
            den = [j for j in range(n) if labels[j] != labels[i]]
        else:
            den = [j for j in range(n) if j != i]
        if not pos or not den:
            continue
        attract = sum(dot(feats[i], feats[j]) / tau for j in pos) / len(pos)
        repel = math.log(sum(math.exp(dot(feats[i], feats[j]) / tau) for j in den))
        total += attract - repel
    return -total


def cross_closed_form(vis, txt, labels, tau, denominator="negatives-only"):
    """(v2l, l2v) directional losses by scalar loops."""
    dot = lambda a, b: sum(x * y for x, y in zip(a, b))

    def direction(a, b):
        n = len(a)
        total, used = 0.0, 0
        for i in range(n):
            pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
            den = ([j for j in range(n) if labels[j] != labels[i]]
                   if denominator == "negatives-only" else [j for j in range(n) if j != i])
            if not pos or not den:
                continue
            used += 1
            attract = sum(dot(a[i], b[j]) / tau for j in pos) / len(pos)
            repel = math.log(sum(math.exp(dot(a[i], b[j]) / tau) for j in den))
            total += attract - repel
        return -total, used

    return direction(vis, txt), direction(txt, vis)


def unit(v):
    norm = math.sqrt(sum(x * x for x in v))
    return [x / norm for x in v]
