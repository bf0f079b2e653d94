"""Self-reasoning decoder: s+o->p, then s+p->o, then p+o->s.

Stage order is fixed. The predicate stage reads the entity representations;
the object stage reads keys built from the initial subject query and the
predicate representation; the subject stage reads keys built from the
initial predicate query and the object representation. Stage keys are
computed once per stage and held fixed across its layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import (
    AttentionConfig,
    apply_linear,
    apply_mlp,
    ffn_block,
    init_ffn_block,
    init_linear,
    init_mlp,
    sine_positional_encoding,
)
from .tensor import ParamScope, ParamStore, Tensor


@dataclass
class PositionalCodes:
    entity: np.ndarray  # E_e, fixed (N_e, d)
    subject: Tensor  # E_s, learnable (d,)
    predicate: Tensor  # E_p
    obj: Tensor  # E_o

    @classmethod
    def from_params(cls, p: ParamScope, n_entities: int, d_model: int, dtype=np.float64):
        table = sine_positional_encoding(n_entities, d_model).astype(dtype)
        return cls(table, p["E_s"], p["E_p"], p["E_o"])


@dataclass
class TripletOutput:
    subject: Tensor  # H_s
    predicate: Tensor  # H_p
    obj: Tensor  # H_o
    subject_logits: Tensor  # (..., N_t, C_e + 1)
    object_logits: Tensor  # (..., N_t, C_e + 1)
    predicate_logits: Tensor  # (..., N_t, C_p)
    subject_boxes: Tensor  # (..., N_t, 4)
    object_boxes: Tensor
    subject_embed: Tensor  # unit rows, (..., N_t, d_align)
    predicate_embed: Tensor
    object_embed: Tensor


def add_sr_params(
    store: ParamStore,
    cfg: AttentionConfig,
    n_layers: int,
    n_entity_classes: int,
    n_predicate_classes: int,
    d_align: int,
    self_reasoning: bool = True,
) -> None:
    p = store.scope("sr")
    for name in ("E_s", "E_p", "E_o"):
        p.normal(name, (cfg.d_model,), std=0.1)
    for stage in ("p", "o", "s"):
        for i in range(n_layers):
            init_ffn_block(p.scope(f"{stage}.layer{i}"), cfg)
    if self_reasoning:
        init_linear(p.scope("k_sp"), 2 * cfg.d_model, cfg.d_model)
        init_linear(p.scope("k_po"), 2 * cfg.d_model, cfg.d_model)
    h = store.scope("heads")
    init_linear(h.scope("cls_s"), cfg.d_model, n_entity_classes + 1)
    init_linear(h.scope("cls_o"), cfg.d_model, n_entity_classes + 1)
    init_linear(h.scope("cls_p"), cfg.d_model, n_predicate_classes)
    init_mlp(h.scope("box_s"), [cfg.d_model, cfg.d_model, cfg.d_model, 4])
    init_mlp(h.scope("box_o"), [cfg.d_model, cfg.d_model, cfg.d_model, 4])
    for role in ("s", "p", "o"):
        init_linear(h.scope(f"embed_{role}"), cfg.d_model, d_align)


def _check_layers(n_layers: int) -> None:
    if n_layers < 1:
        raise ConfigError(f"each reasoning stage needs >= 1 layer, got {n_layers}")


def _memory(base: Tensor, pos, pos_on_values: bool) -> tuple[Tensor, Tensor]:
    keys = base + pos
    return keys, keys if pos_on_values else base


def _run_stage(query, qpos, base, kpos, cfg, p, n_layers, pos_on_values, return_weights):
    _check_layers(n_layers)
    keys, values = _memory(base, kpos, pos_on_values)
    weights = []
    for i in range(n_layers):
        query, w = ffn_block(query + qpos, keys, values, cfg, p.scope(f"layer{i}"), True)
        weights.append(w)
    return (query, weights) if return_weights else query


def reason_predicate(
    q_p0: Tensor,
    h_e: Tensor,
    codes: PositionalCodes,
    cfg: AttentionConfig,
    p: ParamScope,
    n_layers: int = 3,
    pos_on_values: bool = True,
    return_weights: bool = False,
):
    """s+o->p: predicate queries attend to the entity representations."""
    return _run_stage(
        q_p0, codes.predicate, h_e, codes.entity, cfg, p.scope("p"),
        n_layers, pos_on_values, return_weights,
    )


def reason_object(
    q_o0: Tensor,
    q_s0: Tensor,
    h_p: Tensor,
    codes: PositionalCodes,
    cfg: AttentionConfig,
    p: ParamScope,
    n_layers: int = 3,
    pos_on_values: bool = True,
    return_weights: bool = False,
):
    """s+p->o: object queries attend to keys fused from subject and predicate."""
    k_sp = apply_linear(T.concat([q_s0, h_p], axis=-1), p.scope("k_sp"))
    return _run_stage(
        q_o0, codes.obj, k_sp, codes.subject + codes.predicate, cfg, p.scope("o"),
        n_layers, pos_on_values, return_weights,
    )


def reason_subject(
    q_s0: Tensor,
    q_p0: Tensor,
    h_o: Tensor,
    codes: PositionalCodes,
    cfg: AttentionConfig,
    p: ParamScope,
    n_layers: int = 3,
    pos_on_values: bool = True,
    return_weights: bool = False,
):
    """p+o->s: subject queries attend to keys fused from predicate and object."""
    k_po = apply_linear(T.concat([q_p0, h_o], axis=-1), p.scope("k_po"))
    return _run_stage(
        q_s0, codes.subject, k_po, codes.predicate + codes.obj, cfg, p.scope("s"),
        n_layers, pos_on_values, return_weights,
    )


def self_reasoning(q_s0, q_p0, q_o0, h_e, codes, cfg, p, n_layers=3, pos_on_values=True):
    """All three stages in order; returns (H_s, H_p, H_o)."""
    h_p = reason_predicate(q_p0, h_e, codes, cfg, p, n_layers, pos_on_values)
    h_o = reason_object(q_o0, q_s0, h_p, codes, cfg, p, n_layers, pos_on_values)
    h_s = reason_subject(q_s0, q_p0, h_o, codes, cfg, p, n_layers, pos_on_values)
    return h_s, h_p, h_o


def parallel_decoding(q_s0, q_p0, q_o0, h_e, codes, cfg, p, n_layers=3, pos_on_values=True):
    """Ablation baseline: each query stream attends only to the entities."""
    out = []
    for role, q, pos in (("s", q_s0, codes.subject), ("p", q_p0, codes.predicate),
                         ("o", q_o0, codes.obj)):
        out.append(_run_stage(q, pos, h_e, codes.entity, cfg, p.scope(role),
                              n_layers, pos_on_values, False))
    return tuple(out)


def triplet_heads(h_s: Tensor, h_p: Tensor, h_o: Tensor, p: ParamScope) -> TripletOutput:
    """Class, box and alignment-embedding heads for the three streams."""
    return TripletOutput(
        subject=h_s,
        predicate=h_p,
        obj=h_o,
        subject_logits=apply_linear(h_s, p.scope("cls_s")),
        object_logits=apply_linear(h_o, p.scope("cls_o")),
        predicate_logits=apply_linear(h_p, p.scope("cls_p")),
        subject_boxes=T.sigmoid(apply_mlp(h_s, p.scope("box_s"), 3)),
        object_boxes=T.sigmoid(apply_mlp(h_o, p.scope("box_o"), 3)),
        subject_embed=T.l2_normalize(apply_linear(h_s, p.scope("embed_s"))),
        predicate_embed=T.l2_normalize(apply_linear(h_p, p.scope("embed_p"))),
        object_embed=T.l2_normalize(apply_linear(h_o, p.scope("embed_o"))),
    )
