"""Inference, setting substitution and recall reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import pairwise_iou
from .metrics import SETTINGS, GroundTruth, RecallReport, ScoredTriplets, recall_at_k
from .model import SceneGraphModel
from .scenegen import SceneSample, stack_levels


@dataclass
class QueryPredictions:
    """Per-query probabilities and boxes for one scene."""

    p_subject: np.ndarray  # (N_t, C_e + 1)
    p_predicate: np.ndarray  # (N_t, C_p)
    p_object: np.ndarray
    subject_boxes: np.ndarray  # (N_t, 4)
    object_boxes: np.ndarray


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: SceneGraphModel, scenes: Sequence[SceneSample], batch_size: int = 16):
    out: list[QueryPredictions] = []
    for i in range(0, len(scenes), batch_size):
        chunk = list(scenes[i : i + batch_size])
        tr = model.forward(stack_levels(chunk)).triplets
        ps = _softmax(tr.subject_logits.data.astype(np.float64))
        pp = _softmax(tr.predicate_logits.data.astype(np.float64))
        po = _softmax(tr.object_logits.data.astype(np.float64))
        for b in range(len(chunk)):
            out.append(QueryPredictions(ps[b], pp[b], po[b],
                                        tr.subject_boxes.data[b].astype(np.float64),
                                        tr.object_boxes.data[b].astype(np.float64)))
    return out


def _entity_guess(probs: np.ndarray):
    real = probs[:, :-1]
    labels = real.argmax(axis=1)
    return labels, real[np.arange(len(labels)), labels]


def _substitute(boxes, labels, conf, gt: GroundTruth, use_labels: bool):
    """Replace each box (and optionally label) with its best-IoU ground-truth entity."""
    if len(gt.entity_boxes) == 0:
        return boxes, labels, conf
    iou = pairwise_iou(boxes, gt.entity_boxes)
    best = iou.argmax(axis=1)
    hit = iou[np.arange(len(boxes)), best] > 0
    boxes, labels, conf = boxes.copy(), labels.copy(), conf.copy()
    boxes[hit] = gt.entity_boxes[best[hit]]
    if use_labels:
        labels[hit] = np.asarray(gt.entity_classes)[best[hit]]
        conf[hit] = 1.0
    return boxes, labels, conf


def candidates(q: QueryPredictions, gt: GroundTruth, setting: str = "sgdet") -> ScoredTriplets:
    """One candidate per (query, predicate class), scored p_s * p_p * p_o."""
    s_lab, s_conf = _entity_guess(q.p_subject)
    o_lab, o_conf = _entity_guess(q.p_object)
    s_box, o_box = q.subject_boxes, q.object_boxes
    if setting in ("predcls", "sgcls"):
        use = setting == "predcls"
        s_box, s_lab, s_conf = _substitute(s_box, s_lab, s_conf, gt, use)
        o_box, o_lab, o_conf = _substitute(o_box, o_lab, o_conf, gt, use)
    n, c = q.p_predicate.shape
    rep = lambda a: np.repeat(a, c, axis=0)
    scores = (s_conf[:, None] * q.p_predicate * o_conf[:, None]).reshape(-1)
    return ScoredTriplets(rep(s_lab), np.tile(np.arange(c), n), rep(o_lab),
                          rep(s_box), rep(o_box), scores)


def ground_truth(scene: SceneSample) -> GroundTruth:
    return GroundTruth(scene.entity_classes, scene.entity_boxes, scene.triplets)


def evaluate(model: SceneGraphModel, scenes: Sequence[SceneSample],
             settings=SETTINGS, ks=(20, 50)) -> dict[str, RecallReport]:
    preds = predict(model, scenes)
    gts = [ground_truth(s) for s in scenes]
    n_pred = model.cfg.data.num_predicate_classes
    return {
        s: recall_at_k([candidates(q, g, s) for q, g in zip(preds, gts)], gts, ks, n_pred, s)
        for s in settings
    }


def setting_order_exceptions(reports: dict[str, RecallReport]) -> list[str]:
    """Where PredCLS >= SGCLS >= SGDET fails; an empirical expectation, not a law."""
    chain = [s for s in SETTINGS if s in reports]
    issues = []
    for hi, lo in zip(chain, chain[1:]):
        for k in reports[hi].ks:
            for name, a, b in (("R", reports[hi].recall[k], reports[lo].recall[k]),
                               ("mR", reports[hi].mean_recall[k], reports[lo].mean_recall[k])):
                if a < b:
                    issues.append(f"{name}@{k}: {hi}={a:.4f} < {lo}={b:.4f}")
    return issues


# ----------------------------------------------------------------------
# text output


def format_reports(reports: dict[str, RecallReport], predicate_names=None) -> str:
    lines = ["graph constraint: off (each query proposes every predicate class)"]
    first = next(iter(reports.values()))
    ks = first.ks
    head = ["setting"] + [f"R@{k}" for k in ks] + [f"mR@{k}" for k in ks]
    rows = [[s] + [f"{r.recall[k]:.4f}" for k in ks] + [f"{r.mean_recall[k]:.4f}" for k in ks]
            for s, r in reports.items()]
    lines += _table(head, rows)
    names = predicate_names or [str(i) for i in range(len(first.predicate_counts))]
    lines.append("")
    k = ks[0]
    head = ["predicate", "gt"] + [f"{s}@{k}" for s in reports]
    rows = []
    for c, name in enumerate(names):
        vals = []
        for r in reports.values():
            v = r.per_predicate[k][c]
            vals.append("-" if np.isnan(v) else f"{v:.4f}")
        rows.append([name, str(int(first.predicate_counts[c]))] + vals)
    lines += _table(head, rows)
    lines.append("")
    lines.append("[metrics]")
    for s, r in reports.items():
        for k in ks:
            lines.append(f"{s}.R@{k}={r.recall[k]!r}")
            lines.append(f"{s}.mR@{k}={r.mean_recall[k]!r}")
        lines.append(f"{s}.scenes={r.n_scenes}")
        lines.append(f"{s}.gt_triplets={r.n_gt}")
    return "\n".join(lines) + "\n"


def _table(head, rows) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)]
    fmt = lambda r: "  ".join(str(x).ljust(w) if i == 0 else str(x).rjust(w)
                              for i, (x, w) in enumerate(zip(r, widths)))
    return [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]


def top_triplets_dump(model: SceneGraphModel, scenes: Sequence[SceneSample], top: int = 10,
                      setting: str = "sgdet") -> str:
    """Each scene's highest-scoring triplets as readable text."""
    ents = model.cfg.data.entity_names
    preds = model.cfg.data.predicate_names
    lines = []
    for idx, (scene, q) in enumerate(zip(scenes, predict(model, scenes))):
        gt = ground_truth(scene)
        cand = candidates(q, gt, setting)
        best = cand.take(cand.ranked()[:top])
        lines.append(f"scene {idx} (seed {scene.seed}): "
                     + "; ".join(f"{ents[s]} {preds[p]} {ents[o]}" for s, p, o in
                                 ((gt.entity_classes[a], r, gt.entity_classes[b])
                                  for a, r, b in scene.triplets)))
        for rank in range(len(best)):
            lines.append(
                f"  {rank + 1:2d}. {best.scores[rank]:.4f}  {ents[best.subject_labels[rank]]}"
                f" {preds[best.predicate_labels[rank]]} {ents[best.object_labels[rank]]}"
            )
    return "\n".join(lines) + "\n"
