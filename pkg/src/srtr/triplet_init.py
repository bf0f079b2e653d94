"""Vision- and location-aware triplet query initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import tensor as T
from .entity import MultiScaleFeatures
from .errors import ConfigError, DimensionError
from .nn import AttentionConfig, merge_heads, split_heads, apply_linear, attend, init_linear
from .tensor import ParamScope, ParamStore, Tensor


@dataclass
class TripletQueries:
    queries: Tensor  # Q_t, (..., N_t, 3d)
    subject: Tensor  # Q_s0
    predicate: Tensor  # Q_p0
    obj: Tensor  # Q_o0
    attention: list[Tensor] = field(default_factory=list)  # per-third weights


@dataclass
class PoolDiagnostics:
    clamped_boxes: int = 0


def _per_box(fn, boxes: np.ndarray, level_shapes):
    lead = boxes.shape[:-2]
    return [fn(b, list(level_shapes)) for b in boxes.reshape(-1, boxes.shape[-2], 4)], lead


def pool_matrix(boxes: np.ndarray, level_shapes, diagnostics: PoolDiagnostics | None = None):
    """Interpolation weights (..., N_e, n_tokens) for ``boxes``."""
    results, lead = _per_box(_kernels.bilinear_pool_matrix, boxes, level_shapes)
    if diagnostics is not None:
        diagnostics.clamped_boxes += sum(c for _, c in results)
    return np.stack([m for m, _ in results]).reshape(*lead, boxes.shape[-2], -1)


def pool_jacobian(boxes: np.ndarray, level_shapes) -> np.ndarray:
    """d(weights)/d(cx, cy, w, h), shaped (..., 4, N_e, n_tokens)."""
    results, lead = _per_box(_kernels.bilinear_pool_jacobian, boxes, level_shapes)
    return np.stack(results).reshape(*lead, 4, boxes.shape[-2], -1)


def roi_pool(tokens: Tensor, boxes: Tensor, level_shapes,
             diagnostics: PoolDiagnostics | None = None) -> Tensor:
    """Bilinear 3x3-grid pooling of ``tokens`` inside each box, averaged over levels.

    Differentiable in both the tokens and the box coordinates.
    """
    box_data = boxes.data.astype(np.float64)
    dtype = tokens.data.dtype
    weights = pool_matrix(box_data, level_shapes, diagnostics).astype(dtype)
    out = np.matmul(weights, tokens.data)

    def bw(g):
        g_tok = np.matmul(np.swapaxes(weights, -1, -2), g)
        g_tok = T._unbroadcast(g_tok, tokens.shape)
        if not boxes.requires_grad:
            return g_tok, None
        jac = pool_jacobian(box_data, level_shapes).astype(dtype)
        # (..., N_e, n_tokens): how each token moves each pooled vector along g
        gt = np.matmul(g, np.swapaxes(tokens.data, -1, -2))
        g_box = np.einsum("...knt,...nt->...nk", jac, gt)
        return g_tok, T._unbroadcast(g_box, boxes.shape)

    return T.custom_op(out, (tokens, boxes), bw)


def roi_pool_map(
    memory: MultiScaleFeatures,
    boxes: Tensor,
    p: ParamScope | None = None,
    diagnostics: PoolDiagnostics | None = None,
) -> Tensor:
    """Per-entity visual features sampled from every level inside its box.

    With ``p`` ``None`` the pooled vectors are returned before the linear
    projection.
    """
    pooled = roi_pool(memory.tokens, boxes, memory.level_shapes, diagnostics)
    return pooled if p is None else apply_linear(pooled, p)


def build_kv(fea: Tensor, boxes: Tensor, p: ParamScope) -> tuple[Tensor, Tensor]:
    """Keys and values: pooled features plus a rectified box embedding."""
    if fea.shape[:-1] != boxes.shape[:-1]:
        raise DimensionError(f"entity count mismatch: {fea.shape} vs {boxes.shape}")
    kv = fea + T.relu(apply_linear(boxes, p))
    return kv, kv


def add_triplet_params(store: ParamStore, cfg: AttentionConfig, n_queries: int) -> None:
    p = store.scope("triplet")
    init_linear(p.scope("roi"), cfg.d_model, cfg.d_model)
    init_linear(p.scope("box_fc"), 4, cfg.d_model)
    p.normal("query_init", (n_queries, 3 * cfg.d_model), std=1.0)
    init_linear(p.scope("k"), cfg.d_model, cfg.d_model, bias=False)
    init_linear(p.scope("v"), cfg.d_model, cfg.d_model)
    for part in ("s", "p", "o"):
        init_linear(p.scope(f"q_{part}"), cfg.d_model, cfg.d_model)
        init_linear(p.scope(f"o_{part}"), cfg.d_model, cfg.d_model)


def init_triplet_queries(
    query_init: Tensor, keys: Tensor, values: Tensor, cfg: AttentionConfig, p: ParamScope
) -> TripletQueries:
    """Cross-attend each third of the triplet query to the entity keys/values.

    Keys and values are projected once and shared; each third has its own
    query and output projection. The three outputs are concatenated into
    the triplet query and returned alongside the decoupled thirds.
    """
    width = query_init.shape[-1]
    if width % 3:
        raise ConfigError(f"triplet query width {width} is not divisible by 3")
    if width // 3 != cfg.d_model:
        raise DimensionError(f"triplet query third {width // 3} != d_model {cfg.d_model}")
    kh = split_heads(apply_linear(keys, p.scope("k")), cfg.n_heads)
    vh = split_heads(apply_linear(values, p.scope("v")), cfg.n_heads)
    outs, weights = [], []
    for part, q in zip(("s", "p", "o"), T.split(query_init, 3, axis=-1)):
        qh = split_heads(apply_linear(q, p.scope(f"q_{part}")), cfg.n_heads)
        ctx, w = attend(qh, kh, vh, cfg.head_dim)
        outs.append(apply_linear(merge_heads(ctx), p.scope(f"o_{part}")))
        weights.append(w)
    q_t = T.concat(outs, axis=-1)
    s0, p0, o0 = T.split(q_t, 3, axis=-1)
    return TripletQueries(q_t, s0, p0, o0, weights)
