"""Attention and feed-forward blocks.

Blocks are plain functions over tensors plus a :class:`ParamScope` holding
their weights; ``init_*`` helpers register those weights. Post-norm
ordering throughout (residual add, then layer norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import ParamScope, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    dropout: float = 0.0
    ffn_mult: int = 4

    def __post_init__(self):
        if self.n_heads < 1:
            raise ConfigError("n_heads must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


# ----------------------------------------------------------------------
# parameter registration


def init_linear(p: ParamScope, d_in: int, d_out: int, bias: bool = True) -> None:
    p.xavier("w", d_in, d_out)
    if bias:
        p.zeros("b", (d_out,))


def apply_linear(x: Tensor, p: ParamScope) -> Tensor:
    return T.linear(x, p["w"], p["b"] if "b" in p else None)


def init_mlp(p: ParamScope, dims: list[int]) -> None:
    for i in range(len(dims) - 1):
        init_linear(p.scope(f"l{i}"), dims[i], dims[i + 1])


def apply_mlp(x: Tensor, p: ParamScope, n_layers: int) -> Tensor:
    for i in range(n_layers):
        x = apply_linear(x, p.scope(f"l{i}"))
        if i < n_layers - 1:
            x = T.relu(x)
    return x


def init_layer_norm(p: ParamScope, d: int) -> None:
    p.ones("g", (d,))
    p.zeros("b", (d,))


def apply_layer_norm(x: Tensor, p: ParamScope) -> Tensor:
    return T.layer_norm(x, p["g"], p["b"])


def init_mha(p: ParamScope, cfg: AttentionConfig) -> None:
    """Query/key/value/output projections.

    The key projection has no bias: a shared offset on every key shifts all
    logits of a query equally and cancels in the softmax.
    """
    d = cfg.d_model
    init_linear(p.scope("q"), d, d)
    init_linear(p.scope("k"), d, d, bias=False)
    init_linear(p.scope("v"), d, d)
    init_linear(p.scope("o"), d, d)


def init_ffn_block(p: ParamScope, cfg: AttentionConfig) -> None:
    init_mha(p.scope("attn"), cfg)
    init_layer_norm(p.scope("norm1"), cfg.d_model)
    init_linear(p.scope("ff1"), cfg.d_model, cfg.ffn_mult * cfg.d_model)
    init_linear(p.scope("ff2"), cfg.ffn_mult * cfg.d_model, cfg.d_model)
    init_layer_norm(p.scope("norm2"), cfg.d_model)


# ----------------------------------------------------------------------
# forward


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, n_heads, d // n_heads))
    return T.swapaxes(x, -2, -3)  # (..., h, n, hd)


def merge_heads(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)  # (..., n, h, hd)
    *lead, n, h, hd = x.shape
    return T.reshape(x, (*lead, n, h * hd))


def attend(qh: Tensor, kh: Tensor, vh: Tensor, head_dim: int):
    """Scaled dot-product attention on already split heads."""
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(head_dim))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, vh), weights


def _check_widths(cfg: AttentionConfig, *xs: Tensor) -> None:
    for x in xs:
        if x.shape[-1] != cfg.d_model:
            raise DimensionError(
                f"attention input width {x.shape[-1]} != d_model {cfg.d_model}"
            )


def mha(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    cfg: AttentionConfig,
    p: ParamScope,
    return_weights: bool = False,
):
    """Multi-head attention of ``q`` (..., n_q, d) over memory ``k``/``v``."""
    _check_widths(cfg, q, k, v)
    if k.shape[-2] < 1 or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    qh = split_heads(apply_linear(q, p.scope("q")), cfg.n_heads)
    kh = split_heads(apply_linear(k, p.scope("k")), cfg.n_heads)
    vh = split_heads(apply_linear(v, p.scope("v")), cfg.n_heads)
    ctx, weights = attend(qh, kh, vh, cfg.head_dim)
    out = apply_linear(merge_heads(ctx), p.scope("o"))
    return (out, weights) if return_weights else out


def feed_forward(x: Tensor, p: ParamScope) -> Tensor:
    return apply_linear(T.relu(apply_linear(x, p.scope("ff1"))), p.scope("ff2"))


def ffn_block(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    cfg: AttentionConfig,
    p: ParamScope,
    return_weights: bool = False,
):
    """``FFN(MHA(q, k, v))`` with skip connections and post-norm."""
    attn, weights = mha(q, k, v, cfg, p.scope("attn"), return_weights=True)
    x = apply_layer_norm(q + attn, p.scope("norm1"))
    out = apply_layer_norm(x + feed_forward(x, p), p.scope("norm2"))
    return (out, weights) if return_weights else out


def sine_positional_encoding(n: int, d: int) -> np.ndarray:
    """Interleaved sin/cos table of shape (n, d) over a 10000-base frequency ladder."""
    if d % 2:
        raise ConfigError(f"sine positional encoding needs an even width, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def grid_positional_encoding(
    level_shapes: list[tuple[int, int]], d: int, temperature: float = 10000.0
) -> np.ndarray:
    """Sine codes of normalized cell centres, y in the first half of the width, x in the second.

    Levels are stacked in the given order, each flattened row-major, so the
    table lines up with :class:`srtr.entity.MultiScaleFeatures` tokens.
    """
    if d % 4:
        raise ConfigError(f"grid positional encoding needs a width divisible by 4, got {d}")
    half = d // 2
    freq = temperature ** (-np.arange(0, half, 2, dtype=np.float64) / half)
    rows = []
    for h, w in level_shapes:
        ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
        for coord in (ys.ravel(), xs.ravel()):
            ang = 2 * np.pi * coord[:, None] * freq
            part = np.empty((coord.size, half))
            part[:, 0::2], part[:, 1::2] = np.sin(ang), np.cos(ang)
            rows.append(part)
    per_level = [np.concatenate(rows[i:i + 2], axis=1) for i in range(0, len(rows), 2)]
    return np.concatenate(per_level, axis=0)
