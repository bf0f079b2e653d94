import numpy as np
import pytest

from srtr.config import preset
from srtr.evaluate import (
    QueryPredictions,
    candidates,
    evaluate,
    format_reports,
    ground_truth,
    setting_order_exceptions,
    top_triplets_dump,
)
from srtr.metrics import GroundTruth
from srtr.model import SceneGraphModel
from srtr.scenegen import generate_dataset


@pytest.fixture(scope="module")
def setup():
    cfg = preset("desk").replace(model={"d_model": 32, "n_heads": 4, "n_entities": 6,
                                        "n_triplets": 8, "d_align": 16})
    return SceneGraphModel(cfg, seed=0), generate_dataset(6, cfg.data, base_seed=2)


def _query(ps, pp, po, sb, ob):
    return QueryPredictions(np.array(ps), np.array(pp), np.array(po), np.array(sb), np.array(ob))


GT = GroundTruth(np.array([1, 0]), np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.7, 0.2, 0.2]]),
                 np.array([[0, 1, 1]]))


def test_candidates_enumerate_every_predicate_with_product_score():
    q = _query([[0.1, 0.7, 0.2]], [[0.25, 0.75]], [[0.6, 0.3, 0.1]],
               [[0.3, 0.3, 0.2, 0.2]], [[0.7, 0.7, 0.2, 0.2]])
    c = candidates(q, GT)
    assert len(c) == 2
    np.testing.assert_allclose(c.scores, [0.7 * 0.25 * 0.6, 0.7 * 0.75 * 0.6])
    assert c.subject_labels.tolist() == [1, 1] and c.object_labels.tolist() == [0, 0]


def test_substitution_rules_per_setting():
    # right labels are not the argmax; boxes are rough but overlap the ground truth
    q = _query([[0.6, 0.3, 0.1]], [[0.1, 0.9]], [[0.2, 0.5, 0.3]],
               [[0.33, 0.32, 0.25, 0.2]], [[0.66, 0.72, 0.2, 0.3]])
    det, cls, pred = (candidates(q, GT, s) for s in ("sgdet", "sgcls", "predcls"))
    assert not np.array_equal(det.subject_boxes[0], GT.entity_boxes[0])
    assert np.array_equal(cls.subject_boxes[0], GT.entity_boxes[0])
    assert cls.subject_labels[0] == 0  # boxes only
    assert pred.subject_labels[0] == 1 and pred.object_labels[0] == 0
    np.testing.assert_allclose(pred.scores, [0.1, 0.9])  # labels given with confidence 1


def test_evaluation_is_deterministic_and_monotone(setup):
    model, scenes = setup
    a = evaluate(model, scenes)
    b = evaluate(model, scenes)
    for s in a:
        assert a[s].recall == b[s].recall and a[s].mean_recall == b[s].mean_recall
        assert a[s].recall[20] <= a[s].recall[50]
    assert isinstance(setting_order_exceptions(a), list)


def test_report_text_has_header_tables_and_key_values(setup):
    model, scenes = setup
    text = format_reports(evaluate(model, scenes), model.cfg.data.predicate_names)
    assert text.startswith("graph constraint: off")
    assert "[metrics]" in text and "sgdet.R@20=" in text and "left of" in text


def test_top_triplet_dump_lists_ten_per_scene(setup):
    model, scenes = setup
    dump = top_triplets_dump(model, scenes[:2])
    lines = dump.splitlines()
    assert lines[0].startswith("scene 0") and lines[11].startswith("scene 1")
    assert lines[10].lstrip().startswith("10.")


def test_ground_truth_view(setup):
    _, scenes = setup
    g = ground_truth(scenes[0])
    assert g.triplets is scenes[0].triplets
