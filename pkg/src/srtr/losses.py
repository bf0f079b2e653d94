"""Set-prediction losses, supervised contrastive alignment and the total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import giou
from .config import LossConfig
from .errors import ContractError, NumericError
from .linguistic import PrototypeMemory
from .tensor import Tensor


@dataclass
class ContrastiveDiagnostics:
    anchors: int = 0
    no_positive: int = 0
    no_negative: int = 0
    empty: bool = False

    def merge(self, other: "ContrastiveDiagnostics") -> None:
        self.anchors += other.anchors
        self.no_positive += other.no_positive
        self.no_negative += other.no_negative


def contrastive_masks(labels, denominator: str = "negatives-only"):
    """Positive and denominator masks; positives exclude the anchor itself."""
    y = np.asarray(labels).reshape(-1)
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(len(y), dtype=bool)
    pos = same & off_diag
    if denominator == "negatives-only":
        den = ~same
    elif denominator == "all":
        den = off_diag
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    return pos, den


def _anchor_sum(sims: Tensor, pos: np.ndarray, den: np.ndarray, diag: ContrastiveDiagnostics):
    """Sum over usable anchors i of mean_k sims[i, k] - logsumexp_a sims[i, a]."""
    has_pos, has_den = pos.any(1), den.any(1)
    diag.no_positive += int((~has_pos).sum())
    diag.no_negative += int((has_pos & ~has_den).sum())
    keep = np.flatnonzero(has_pos & has_den)
    diag.anchors += len(keep)
    if len(keep) == 0:
        return None
    rows = sims[keep]
    pos_w = pos[keep] / pos[keep].sum(1, keepdims=True)
    attract = T.tsum(rows * pos_w, axis=1)
    repel = T.logsumexp(rows, axis=1, mask=den[keep])
    return T.tsum(attract - repel)


def _inv_tau(tau) -> Tensor:
    """1/tau as a tensor; a Tensor argument is read as log(tau)."""
    if isinstance(tau, Tensor):
        return T.exp(-tau)
    if tau <= 0:
        raise NumericError(f"temperature must be positive, got {tau}")
    return T.Tensor(np.array(1.0 / tau))


def supcon_loss(
    features,
    labels,
    tau,
    denominator: str = "negatives-only",
    diagnostics: ContrastiveDiagnostics | None = None,
) -> Tensor:
    """Supervised contrastive loss over unit-norm rows.

    ``tau`` is a positive float, or a Tensor holding log(tau). Anchors are
    summed; positives of an anchor are averaged. Anchors without a positive
    or without a denominator member are skipped and counted.
    """
    x = T.as_tensor(features)
    if x.shape[0] < 2:
        raise ContractError("supervised contrastive loss needs at least two features")
    diag = diagnostics if diagnostics is not None else ContrastiveDiagnostics()
    pos, den = contrastive_masks(labels, denominator)
    sims = T.matmul(x, T.swapaxes(x, 0, 1)) * _inv_tau(tau)
    total = _anchor_sum(sims, pos, den, diag)
    if total is None:
        diag.empty = True
        raise ContractError("every anchor lacks a positive or a negative")
    return -total


def cross_modal_loss(
    visual,
    linguistic,
    labels,
    tau,
    denominator: str = "negatives-only",
    diagnostics: ContrastiveDiagnostics | None = None,
):
    """Both directions of the visual/linguistic contrastive sum for one role.

    Returns ``(loss, v2l, l2v)``; the directional terms are reported so their
    symmetry can be checked. ``None`` entries mean no usable anchors.
    """
    v = T.as_tensor(visual)
    t = T.as_tensor(linguistic)
    diag = diagnostics if diagnostics is not None else ContrastiveDiagnostics()
    pos, den = contrastive_masks(labels, denominator)
    sims = T.matmul(v, T.swapaxes(t, 0, 1)) * _inv_tau(tau)
    v2l = _anchor_sum(sims, pos, den, diag)
    l2v = _anchor_sum(T.swapaxes(sims, 0, 1), pos, den, ContrastiveDiagnostics())
    if v2l is None:
        return None, None, None
    return -(v2l + l2v), -v2l, -l2v


def predicate_alignment_features(visual, linguistic, labels, prototypes: PrototypeMemory | None):
    """cat(t_p, proto) against cat(t̂_p, t̂_p), both renormalized to unit rows."""
    v = T.as_tensor(visual)
    t = np.asarray(linguistic.data if isinstance(linguistic, Tensor) else linguistic)
    proto = (np.zeros_like(t) if prototypes is None
             else prototypes.lookup(labels).astype(t.dtype))
    t_cat = T.l2_normalize(T.Tensor(np.concatenate([t, proto], axis=-1)))
    v_cat = T.l2_normalize(T.concat([v, v], axis=-1))
    return v_cat, t_cat


ROLES = ("subject", "predicate", "object")


def vla_loss(
    visual: dict,
    linguistic: dict,
    labels: dict,
    tau,
    prototypes: PrototypeMemory | None = None,
    denominator: str = "negatives-only",
    diagnostics: ContrastiveDiagnostics | None = None,
    reduction: str = "mean",
) -> Tensor:
    """Alignment loss summed over the three roles.

    Each mapping is keyed by role and holds the matched rows gathered across
    the minibatch. Within a role, anchor terms are summed (``reduction="sum"``)
    or averaged over usable anchors (``"mean"``). With nothing usable the
    result is a constant zero and ``diagnostics.empty`` is set.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diag = diagnostics if diagnostics is not None else ContrastiveDiagnostics()
    total = None
    for role in ROLES:
        v, t, y = visual[role], linguistic[role], np.asarray(labels[role])
        if len(y) == 0:
            continue
        if role == "predicate":
            v, t = predicate_alignment_features(v, t, y, prototypes)
        before = diag.anchors
        loss, _, _ = cross_modal_loss(v, t, y, tau, denominator, diag)
        if loss is not None:
            if reduction == "mean":
                loss = loss * (1.0 / (diag.anchors - before))
            total = loss if total is None else total + loss
    if total is None:
        diag.empty = True
        return T.Tensor(np.array(0.0, dtype=T.default_dtype()))
    return total


# ----------------------------------------------------------------------
# detection


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """sum(w * -log p[target]) / sum(w) over all leading positions."""
    logp = T.log_softmax(logits, axis=-1)
    idx = np.indices(targets.shape)
    picked = logp[(*idx, targets)]
    w = weights.astype(logp.data.dtype)
    return -T.tsum(picked * w) * (1.0 / w.sum())


def box_losses(pred: Tensor, target: np.ndarray, norm: float) -> tuple[Tensor, Tensor]:
    """Summed L1 and (1 - GIoU) over matched boxes, divided by ``norm``."""
    tgt = T.Tensor(target.astype(pred.data.dtype))
    l1 = T.tsum(T.abs_(pred - tgt)) * (1.0 / norm)
    g = T.tsum(1.0 - giou(pred, tgt)) * (1.0 / norm)
    return l1, g


def _zero() -> Tensor:
    return T.Tensor(np.array(0.0, dtype=T.default_dtype()))


def set_targets(shape, matches, gt_classes, no_object: int, no_object_weight: float):
    """Class targets and weights for a (B, N) grid of queries."""
    targets = np.full(shape, no_object, dtype=np.int64)
    weights = np.full(shape, no_object_weight)
    for b, (m, cls) in enumerate(zip(matches, gt_classes)):
        if m.pairs:
            targets[b, m.pred_indices] = np.asarray(cls)[m.gt_indices]
            weights[b, m.pred_indices] = 1.0
    return targets, weights


def matched_index(matches) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened (batch, prediction, ground truth) indices of all matched pairs."""
    b = [np.full(len(m.pairs), i, dtype=np.int64) for i, m in enumerate(matches)]
    q = [m.pred_indices for m in matches]
    g = [m.gt_indices for m in matches]
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    return cat(b), cat(q), cat(g)


def entity_losses(logits: Tensor, boxes: Tensor, scenes, matches, cfg: LossConfig) -> dict:
    n_cls = logits.shape[-1] - 1
    targets, weights = set_targets(logits.shape[:2], matches,
                                   [s.entity_classes for s in scenes], n_cls,
                                   cfg.no_object_weight)
    out = {"entity_cls": weighted_cross_entropy(logits, targets, weights)}
    b, q, g = matched_index(matches)
    if len(b):
        gt = np.concatenate([s.entity_boxes[m.gt_indices] for s, m in zip(scenes, matches)])
        out["entity_l1"], out["entity_giou"] = box_losses(boxes[b, q], gt, len(b))
    else:
        out["entity_l1"] = out["entity_giou"] = _zero()
    return out


def triplet_losses(trip, gt_expanded, matches, cfg: LossConfig) -> dict:
    """Subject/object/predicate classification and subject/object box losses.

    ``gt_expanded`` holds one :func:`matching.expand_triplets` tuple per scene.
    Unmatched queries are supervised as no-object on the entity heads only.
    """
    n_cls = trip.subject_logits.shape[-1] - 1
    shape = trip.subject_logits.shape[:2]
    out = {}
    for key, logits, col in (("subject_cls", trip.subject_logits, 0),
                             ("object_cls", trip.object_logits, 2)):
        targets, weights = set_targets(shape, matches, [g[col] for g in gt_expanded],
                                       n_cls, cfg.no_object_weight)
        out[key] = weighted_cross_entropy(logits, targets, weights)
    b, q, g = matched_index(matches)
    if len(b) == 0:
        out["predicate_cls"] = out["box_l1"] = out["box_giou"] = _zero()
        return out
    pick = lambda col: np.concatenate([gt[col][m.gt_indices]
                                       for gt, m in zip(gt_expanded, matches)])
    p_logp = T.log_softmax(trip.predicate_logits[b, q], axis=-1)
    out["predicate_cls"] = -T.mean(p_logp[np.arange(len(b)), pick(1)])
    s_l1, s_g = box_losses(trip.subject_boxes[b, q], pick(3), len(b))
    o_l1, o_g = box_losses(trip.object_boxes[b, q], pick(4), len(b))
    out["box_l1"] = s_l1 + o_l1
    out["box_giou"] = s_g + o_g
    return out


# ----------------------------------------------------------------------
# total


COMPONENTS = (
    "entity_cls", "entity_l1", "entity_giou",
    "subject_cls", "object_cls", "predicate_cls",
    "box_l1", "box_giou", "vla",
)


def loss_weights(cfg: LossConfig) -> dict[str, float]:
    e = cfg.entity_weight
    return {
        "entity_cls": e * cfg.w_cls, "entity_l1": e * cfg.w_l1, "entity_giou": e * cfg.w_giou,
        "subject_cls": cfg.w_cls, "object_cls": cfg.w_cls, "predicate_cls": cfg.w_cls,
        "box_l1": cfg.w_l1, "box_giou": cfg.w_giou, "vla": cfg.lambda_vla,
    }


@dataclass
class LossBreakdown:
    components: dict[str, Tensor]
    weights: dict[str, float]
    total: Tensor
    diagnostics: ContrastiveDiagnostics = field(default_factory=ContrastiveDiagnostics)

    def values(self) -> dict[str, float]:
        out = {k: float(v.data) for k, v in self.components.items()}
        out["total"] = float(self.total.data)
        return out


def total_loss(components: dict[str, Tensor], weights: dict[str, float]) -> LossBreakdown:
    """Weighted sum; a non-finite component raises naming that component."""
    total = None
    values = {name: float(np.asarray(value.data)) for name, value in components.items()}
    for name, value in components.items():
        if not math.isfinite(values[name]):
            dump = " ".join(f"{k}={v!r}" for k, v in values.items())
            raise NumericError(f"loss component {name!r} is not finite; components: {dump}")
        w = weights.get(name, 0.0)
        term = value * w
        total = term if total is None else total + term
    if total is None:
        total = _zero()
    return LossBreakdown(dict(components), dict(weights), total)
