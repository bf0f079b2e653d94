import math

import numpy as np
import pytest

from srtr import tensor as T
from srtr.boxes import giou, pairwise_giou
from srtr.errors import ContractError, NumericError
from srtr.losses import (
    ContrastiveDiagnostics,
    box_losses,
    contrastive_masks,
    supcon_loss,
    total_loss,
    vla_loss,
    weighted_cross_entropy,
)
from srtr.tensor import Tensor


def test_masks_exclude_self():
    pos, den = contrastive_masks([0, 0, 1])
    assert not pos.diagonal().any() and not den.diagonal().any()
    assert pos[0, 1] and not den[0, 1] and den[0, 2]
    _, den_all = contrastive_masks([0, 0, 1], "all")
    assert den_all[0, 1] and den_all[0, 2]


def test_supcon_without_usable_anchor_is_a_contract_error():
    with pytest.raises(ContractError):
        supcon_loss(np.eye(3), [0, 1, 2], 0.1)  # nobody has a positive
    with pytest.raises(ContractError):
        supcon_loss(np.eye(1), [0], 0.1)


def test_supcon_skips_and_counts_singletons():
    diag = ContrastiveDiagnostics()
    supcon_loss(np.eye(3), [0, 0, 1], 0.5, diagnostics=diag)
    assert (diag.anchors, diag.no_positive) == (2, 1)


def test_supcon_tau_as_log_parameter():
    f = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    a = supcon_loss(f, [0, 0, 1], 0.25).item()
    b = supcon_loss(f, [0, 0, 1], Tensor(np.array(math.log(0.25)))).item()
    assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(NumericError):
        supcon_loss(f, [0, 0, 1], 0.0)


def test_vla_empty_batch_is_zero_with_flag():
    empty = {r: np.zeros((0, 4)) for r in ("subject", "predicate", "object")}
    labels = {r: np.zeros(0, dtype=int) for r in empty}
    diag = ContrastiveDiagnostics()
    loss = vla_loss({r: Tensor(v) for r, v in empty.items()}, empty, labels, 0.1, None,
                    diagnostics=diag)
    assert loss.item() == 0.0 and diag.empty


def test_vla_is_sum_of_both_directions():
    rng = np.random.default_rng(0)
    v = T.l2_normalize(Tensor(rng.normal(size=(4, 3)))).data
    t = T.l2_normalize(Tensor(rng.normal(size=(4, 3)))).data
    y = np.array([0, 0, 1, 1])
    only = {"subject": Tensor(v), "predicate": Tensor(np.zeros((0, 3))),
            "object": Tensor(np.zeros((0, 3)))}
    ling = {"subject": t, "predicate": np.zeros((0, 3)), "object": np.zeros((0, 3))}
    labels = {"subject": y, "predicate": y[:0], "object": y[:0]}
    loss = vla_loss(only, ling, labels, 0.5, reduction="sum").item()
    swapped = vla_loss({**only, "subject": Tensor(t)}, {**ling, "subject": v}, labels, 0.5,
                       reduction="sum").item()
    assert loss == pytest.approx(swapped, rel=1e-12)


def test_weighted_cross_entropy_matches_manual():
    logits = np.array([[[2.0, 0.5, -1.0], [0.0, 0.0, 3.0]]])
    targets = np.array([[0, 2]])
    w = np.array([[1.0, 0.1]])
    got = weighted_cross_entropy(Tensor(logits), targets, w).item()
    lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    want = -(1.0 * lp[0, 0, 0] + 0.1 * lp[0, 1, 2]) / 1.1
    assert got == pytest.approx(want, rel=1e-12)


def test_giou_identity_and_disjoint():
    b = np.array([[0.5, 0.5, 0.2, 0.2], [0.2, 0.2, 0.1, 0.1]])
    np.testing.assert_allclose(giou(Tensor(b), b).data, 1.0)
    far = np.array([[0.8, 0.8, 0.1, 0.1], [0.9, 0.9, 0.05, 0.05]])
    assert (giou(Tensor(b), far).data < 0).all()
    np.testing.assert_allclose(np.diag(pairwise_giou(b, far)), giou(Tensor(b), far).data)


def test_box_losses_zero_at_target():
    b = np.array([[0.5, 0.5, 0.2, 0.2]])
    l1, g = box_losses(Tensor(b), b, 1.0)
    assert l1.item() == 0.0 and g.item() == pytest.approx(0.0, abs=1e-12)


def test_total_loss_reconciles_and_rejects_nan():
    comps = {"a": Tensor(np.array(1.5)), "b": Tensor(np.array(2.0))}
    out = total_loss(comps, {"a": 2.0, "b": 0.5})
    assert out.total.item() == pytest.approx(4.0)
    with pytest.raises(NumericError, match="b"):
        total_loss({"a": comps["a"], "b": Tensor(np.array(np.nan))}, {"a": 1.0, "b": 1.0})


def test_two_anchor_worked_example():
    # anchors 0 and 1 are positives of each other (sim 1); item 2 is the negative (sim 0)
    f = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert supcon_loss(f, [0, 0, 1], 1.0).item() == pytest.approx(-2.0, abs=1e-12)


def test_identical_features_closed_form():
    f = np.tile([[0.6, 0.8]], (4, 1))
    # each anchor: one positive, denominator with |A(i)| = 2 -> -(s - log(2 e^s)) = log 2
    assert supcon_loss(f, [0, 0, 1, 1], 1.0).item() == pytest.approx(4 * math.log(2))
    f3 = np.tile([[0.6, 0.8]], (3, 1))
    diag = ContrastiveDiagnostics()
    assert supcon_loss(f3, [0, 0, 1], 1.0, diagnostics=diag).item() == pytest.approx(0.0)


def test_raising_a_positive_similarity_lowers_the_loss():
    base = np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]])
    closer = np.array([[1.0, 0.0], [0.96, 0.28], [0.0, 1.0]])
    y = [0, 0, 1]
    assert supcon_loss(closer, y, 0.5).item() < supcon_loss(base, y, 0.5).item()


def _roles(rng, n=6, d=5):
    make = lambda: T.l2_normalize(Tensor(rng.normal(size=(n, d)))).data
    labels = {"subject": rng.integers(0, 2, n), "predicate": rng.integers(0, 3, n),
              "object": rng.integers(0, 2, n)}
    return ({r: make() for r in labels}, {r: make() for r in labels}, labels)


def test_vla_invariant_to_pair_order():
    rng = np.random.default_rng(7)
    vis, txt, lab = _roles(rng)
    perm = rng.permutation(6)
    a = vla_loss({r: Tensor(v) for r, v in vis.items()}, txt, lab, 0.2).item()
    b = vla_loss({r: Tensor(v[perm]) for r, v in vis.items()}, {r: t[perm] for r, t in txt.items()},
                 {r: y[perm] for r, y in lab.items()}, 0.2).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_mirrored_banks_have_equal_directions():
    from srtr.losses import cross_modal_loss

    rng = np.random.default_rng(8)
    v = T.l2_normalize(Tensor(rng.normal(size=(4, 3)))).data
    _, v2l, l2v = cross_modal_loss(v, v.copy(), [0, 1, 1, 0], 0.3)
    assert abs(v2l.item() - l2v.item()) < 1e-9


def test_unset_prototype_keeps_the_unaugmented_half():
    from srtr.linguistic import PrototypeMemory
    from srtr.losses import predicate_alignment_features

    rng = np.random.default_rng(9)
    v = T.l2_normalize(Tensor(rng.normal(size=(3, 4)))).data
    t = T.l2_normalize(Tensor(rng.normal(size=(3, 4)))).data
    v_cat, t_cat = predicate_alignment_features(Tensor(v), t, [0, 1, 0], PrototypeMemory(2, 4))
    # cat(v, v)/sqrt(2) . cat(t, 0) = v.t / sqrt(2)
    np.testing.assert_allclose(v_cat.data @ t_cat.data.T, (v @ t.T) / math.sqrt(2), atol=1e-12)
