"""Triplet recall (R@K) and mean per-predicate recall (mR@K).

A prediction hits a ground-truth triplet when all three labels agree and
both its subject and object boxes reach IoU >= 0.5 with the ground-truth
boxes. Each ground-truth triplet counts at most once; a single prediction
may credit several ground-truth triplets. No graph constraint is applied:
every query proposes one candidate per predicate class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import pairwise_iou
from .errors import ConfigError, ContractError

SETTINGS = ("predcls", "sgcls", "sgdet")
IOU_THRESHOLD = 0.5


@dataclass
class ScoredTriplets:
    """Ranked candidate triplets for one scene (arrays of equal length)."""

    subject_labels: np.ndarray
    predicate_labels: np.ndarray
    object_labels: np.ndarray
    subject_boxes: np.ndarray
    object_boxes: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def ranked(self) -> np.ndarray:
        """Indices by descending score; ties keep the original order."""
        return np.argsort(-self.scores, kind="stable")

    def take(self, idx) -> "ScoredTriplets":
        return ScoredTriplets(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


@dataclass
class GroundTruth:
    entity_classes: np.ndarray
    entity_boxes: np.ndarray
    triplets: np.ndarray  # (m, 3): subject entity, predicate, object entity


def hits_at_k(pred: ScoredTriplets, gt: GroundTruth, k: int) -> np.ndarray:
    """Boolean vector over ground-truth triplets: recovered in the top ``k``."""
    if k <= 0:
        raise ConfigError(f"K must be positive, got {k}")
    t = np.asarray(gt.triplets, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0 or len(pred) == 0:
        return np.zeros(len(t), dtype=bool)
    top = pred.take(pred.ranked()[:k])
    cls = np.asarray(gt.entity_classes)
    boxes = np.asarray(gt.entity_boxes, dtype=np.float64)
    label_ok = (
        (top.subject_labels[:, None] == cls[t[:, 0]][None, :])
        & (top.predicate_labels[:, None] == t[:, 1][None, :])
        & (top.object_labels[:, None] == cls[t[:, 2]][None, :])
    )
    s_ok = pairwise_iou(top.subject_boxes, boxes[t[:, 0]]) >= IOU_THRESHOLD
    o_ok = pairwise_iou(top.object_boxes, boxes[t[:, 2]]) >= IOU_THRESHOLD
    return (label_ok & s_ok & o_ok).any(axis=0)


@dataclass
class RecallReport:
    setting: str
    ks: tuple[int, ...]
    recall: dict[int, float]
    per_predicate: dict[int, np.ndarray]  # K -> (C_p,) with NaN where absent
    mean_recall: dict[int, float]
    n_scenes: int
    n_gt: int
    predicate_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def mean_recall_at_k(per_predicate) -> float:
    """Unweighted mean over predicates that have ground truth (non-NaN entries)."""
    r = np.asarray(per_predicate, dtype=np.float64)
    present = ~np.isnan(r)
    if not present.any():
        raise ContractError("no predicate has ground-truth instances")
    return float(r[present].mean())


def recall_at_k(
    predictions: list[ScoredTriplets],
    ground_truth: list[GroundTruth],
    ks=(20, 50),
    num_predicates: int | None = None,
    setting: str = "sgdet",
) -> RecallReport:
    """Scene-averaged R@K and per-predicate recall.

    R@K averages each scene's hit fraction over scenes with ground truth.
    Per-predicate recall averages, over scenes containing that predicate,
    the fraction of its instances recovered; mR@K is their mean.
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    if len(predictions) != len(ground_truth):
        raise ContractError(f"{len(predictions)} predictions for {len(ground_truth)} scenes")
    ks = tuple(int(k) for k in ks)
    if num_predicates is None:
        num_predicates = 1 + max(
            (int(np.max(g.triplets[:, 1])) for g in ground_truth if len(g.triplets)), default=0
        )
    counts = np.zeros(num_predicates, dtype=np.int64)
    recall, per_pred, mean = {}, {}, {}
    for k in ks:
        scene_recalls = []
        pred_sum = np.zeros(num_predicates)
        pred_scenes = np.zeros(num_predicates)
        for pred, gt in zip(predictions, ground_truth):
            t = np.asarray(gt.triplets, dtype=np.int64).reshape(-1, 3)
            if len(t) == 0:
                continue
            hits = hits_at_k(pred, gt, k)
            scene_recalls.append(hits.mean())
            for c in np.unique(t[:, 1]):
                sel = t[:, 1] == c
                pred_sum[c] += hits[sel].mean()
                pred_scenes[c] += 1
        if not scene_recalls:
            raise ContractError("ground truth holds no triplets")
        recall[k] = float(np.mean(scene_recalls))
        with np.errstate(invalid="ignore", divide="ignore"):
            per_pred[k] = np.where(pred_scenes > 0, pred_sum / np.maximum(pred_scenes, 1), np.nan)
        mean[k] = mean_recall_at_k(per_pred[k])
    for gt in ground_truth:
        t = np.asarray(gt.triplets, dtype=np.int64).reshape(-1, 3)
        np.add.at(counts, t[:, 1], 1)
    return RecallReport(setting, ks, recall, per_pred, mean, len(ground_truth),
                        int(counts.sum()), counts)
