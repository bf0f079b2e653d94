"""Bipartite matching of predictions to ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .boxes import pairwise_giou
from .errors import InputError


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (prediction, ground truth), prediction-sorted
    unmatched: list[int] = field(default_factory=list)
    cost: float = 0.0

    @property
    def pred_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)


def hungarian(cost) -> MatchResult:
    """Minimum-cost assignment of rows (predictions) to columns (ground truth).

    Ties resolve deterministically: the solver scans columns in index order
    and keeps the first strict improvement.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise InputError(f"cost must be a matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(c))[0])
        raise InputError(f"cost matrix has a non-finite entry at {bad}")
    n, m = c.shape
    if n == 0 or m == 0:
        return MatchResult([], list(range(n)), 0.0)
    rows, cols = _kernels.linear_sum_assignment(c)
    pairs = [(int(r), int(k)) for r, k in zip(rows, cols)]
    matched = {r for r, _ in pairs}
    total = 0.0
    for r, k in pairs:
        total += c[r, k]
    return MatchResult(pairs, [i for i in range(n) if i not in matched], float(total))


def entity_match_cost(probs, boxes, gt_classes, gt_boxes, w_cls=1.0, w_l1=5.0, w_giou=2.0):
    """DETR-style cost (n_pred, n_gt) from class probabilities and boxes."""
    probs = np.asarray(probs, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    cls = -probs[:, np.asarray(gt_classes, dtype=np.int64)]
    l1 = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(-1)
    return w_cls * cls + w_l1 * l1 - w_giou * pairwise_giou(boxes, gt_boxes)


def triplet_match_cost(
    p_subject, p_predicate, p_object, subject_boxes, object_boxes,
    gt_triplets, w_cls=1.0, w_l1=5.0, w_giou=2.0,
):
    """Cost (N_t, n_gt) of assigning triplet predictions to ground-truth triplets.

    ``gt_triplets`` is the tuple produced by :func:`expand_triplets`.
    """
    s_cls, p_cls, o_cls, s_box, o_box = gt_triplets
    cls = (-np.asarray(p_subject)[:, s_cls] - np.asarray(p_object)[:, o_cls]
           - np.asarray(p_predicate)[:, p_cls])
    sb, ob = np.asarray(subject_boxes, dtype=np.float64), np.asarray(object_boxes, dtype=np.float64)
    l1 = (np.abs(sb[:, None, :] - s_box[None]).sum(-1)
          + np.abs(ob[:, None, :] - o_box[None]).sum(-1))
    g = pairwise_giou(sb, s_box) + pairwise_giou(ob, o_box)
    return w_cls * cls + w_l1 * l1 - w_giou * g


def expand_triplets(triplets, entity_classes, entity_boxes):
    """Per-triplet (subject class, predicate, object class, subject box, object box)."""
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    classes = np.asarray(entity_classes, dtype=np.int64)
    boxes = np.asarray(entity_boxes, dtype=np.float64)
    return classes[t[:, 0]], t[:, 1], classes[t[:, 2]], boxes[t[:, 0]], boxes[t[:, 2]]
