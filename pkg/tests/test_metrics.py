import numpy as np
import pytest

from oracles import oracle_recalls
from srtr.errors import ConfigError, ContractError
from srtr.metrics import GroundTruth, ScoredTriplets, hits_at_k, mean_recall_at_k, recall_at_k

BOXES = np.array([[0.2, 0.2, 0.2, 0.2], [0.6, 0.6, 0.2, 0.2], [0.8, 0.2, 0.1, 0.1]])
CLASSES = np.array([0, 1, 2])


def _pred(rows, scores=None):
    rows = np.asarray(rows)
    s, p, o = rows[:, 0], rows[:, 1], rows[:, 2]
    scores = np.linspace(1, 0.5, len(rows)) if scores is None else np.asarray(scores, float)
    return ScoredTriplets(CLASSES[s], p, CLASSES[o], BOXES[s], BOXES[o], scores)


def test_perfect_predictor_scores_one():
    trips = np.array([[0, 3, 1], [1, 0, 2]])
    gt = GroundTruth(CLASSES, BOXES, trips)
    rep = recall_at_k([_pred(trips)], [gt], (1, 2), 4)
    assert rep.recall[2] == 1.0 and rep.mean_recall[2] == 1.0
    assert rep.recall[1] == 0.5


def test_wrong_labels_score_zero():
    gt = GroundTruth(CLASSES, BOXES, np.array([[0, 3, 1]]))
    rep = recall_at_k([_pred([[0, 2, 1], [1, 3, 0]])], [gt], (20,), 4)
    assert rep.recall[20] == 0.0


def test_low_iou_does_not_count():
    gt = GroundTruth(CLASSES, BOXES, np.array([[0, 3, 1]]))
    pred = _pred([[0, 3, 1]])
    pred.subject_boxes = pred.subject_boxes + np.array([0.15, 0, 0, 0])
    assert not hits_at_k(pred, gt, 5).any()


def test_k_must_be_positive():
    gt = GroundTruth(CLASSES, BOXES, np.array([[0, 3, 1]]))
    with pytest.raises(ConfigError):
        hits_at_k(_pred([[0, 3, 1]]), gt, 0)


def test_mean_recall_arithmetic():
    assert mean_recall_at_k([0.3, 0.3, np.nan, 0.3]) == pytest.approx(0.3)
    assert mean_recall_at_k([1.0, 0.0]) == 0.5
    with pytest.raises(ContractError):
        mean_recall_at_k([np.nan, np.nan])


def test_long_tail_pulls_mean_recall_down():
    # predicate 0 appears often and is always found; predicate 3 is rare and always missed
    gts, preds = [], []
    for _ in range(9):
        gts.append(GroundTruth(CLASSES, BOXES, np.array([[0, 0, 1], [1, 0, 2]])))
        preds.append(_pred([[0, 0, 1], [1, 0, 2]]))
    gts.append(GroundTruth(CLASSES, BOXES, np.array([[0, 3, 2], [0, 0, 1]])))
    preds.append(_pred([[0, 0, 1]]))
    rep = recall_at_k(preds, gts, (20,), 4)
    r, mr = oracle_recalls(
        [[(float(p.scores[i]), int(p.subject_labels[i]), int(p.predicate_labels[i]),
           int(p.object_labels[i]), p.subject_boxes[i].tolist(), p.object_boxes[i].tolist())
          for i in range(len(p))] for p in preds],
        [(g.entity_classes.tolist(), g.entity_boxes.tolist(), g.triplets.tolist()) for g in gts],
        20, 4)
    assert rep.recall[20] == r == pytest.approx(0.95)
    assert rep.mean_recall[20] == mr == 0.5


def test_ties_keep_input_order():
    gt = GroundTruth(CLASSES, BOXES, np.array([[0, 3, 1]]))
    pred = _pred([[1, 1, 1], [0, 3, 1]], scores=[0.5, 0.5])
    assert not hits_at_k(pred, gt, 1).any()
    assert hits_at_k(pred, gt, 2).all()


def test_scenes_without_triplets_are_skipped_and_all_empty_is_error():
    empty = GroundTruth(CLASSES, BOXES, np.zeros((0, 3), int))
    gt = GroundTruth(CLASSES, BOXES, np.array([[0, 3, 1]]))
    rep = recall_at_k([_pred([[0, 3, 1]]), _pred([[0, 3, 1]])], [gt, empty], (20,), 4)
    assert rep.recall[20] == 1.0
    with pytest.raises(ContractError):
        recall_at_k([_pred([[0, 3, 1]])], [empty], (20,), 4)
