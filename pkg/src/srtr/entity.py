"""Scene encoder and entity decoder.

A dense-attention stand-in for a CNN backbone plus deformable encoder and
decoder: multi-scale grids are projected, position-coded, flattened and
self-attended; learnable entity queries then decode them into entity
representations, class logits and boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import (
    AttentionConfig,
    apply_layer_norm,
    apply_linear,
    apply_mlp,
    ffn_block,
    init_ffn_block,
    init_layer_norm,
    init_linear,
    init_mha,
    init_mlp,
    mha,
    grid_positional_encoding,
)
from .tensor import ParamScope, ParamStore, Tensor


@dataclass
class MultiScaleFeatures:
    """Flattened multi-scale tokens.

    ``tokens`` has shape (..., n_tokens, width); levels are concatenated
    coarse-to-fine, each flattened row-major. ``pos`` holds the fixed
    positional code per token when the tokens came out of the encoder.
    """

    tokens: Tensor
    level_shapes: list[tuple[int, int]]
    pos: np.ndarray | None = None

    def __post_init__(self):
        if not self.level_shapes:
            raise DimensionError("at least one feature level is required")
        total = sum(h * w for h, w in self.level_shapes)
        if self.tokens.shape[-2] != total:
            raise DimensionError(
                f"{self.tokens.shape[-2]} tokens for level shapes {self.level_shapes}"
            )

    @classmethod
    def from_levels(cls, levels: list[np.ndarray]) -> "MultiScaleFeatures":
        """Build from grids shaped (..., H, W, C), coarse level first."""
        widths = {lv.shape[-1] for lv in levels}
        if len(widths) != 1:
            raise DimensionError(f"feature levels disagree on width: {sorted(widths)}")
        shapes = [(lv.shape[-3], lv.shape[-2]) for lv in levels]
        flat = [lv.reshape(*lv.shape[:-3], -1, lv.shape[-1]) for lv in levels]
        return cls(T.Tensor(np.concatenate(flat, axis=-2)), shapes)

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]

    def level_slices(self) -> list[slice]:
        out, start = [], 0
        for h, w in self.level_shapes:
            out.append(slice(start, start + h * w))
            start += h * w
        return out

    def levels(self) -> list[np.ndarray]:
        """Token data reshaped back to (..., H, W, width) per level."""
        data = self.tokens.data
        return [
            data[..., sl, :].reshape(*data.shape[:-2], h, w, data.shape[-1])
            for sl, (h, w) in zip(self.level_slices(), self.level_shapes)
        ]


@dataclass
class EntityOutput:
    hidden: Tensor  # H_e, (..., N_e, d)
    boxes: Tensor  # B_e, (..., N_e, 4) cxcywh in (0, 1)
    logits: Tensor  # (..., N_e, C_e + 1), last column = no-object


def add_encoder_params(
    store: ParamStore, cfg: AttentionConfig, raw_channels: int, n_levels: int, n_layers: int
) -> None:
    p = store.scope("encoder")
    for lvl in range(n_levels):
        init_linear(p.scope(f"proj{lvl}"), raw_channels, cfg.d_model)
    p.normal("level_embed", (n_levels, cfg.d_model), std=0.1)
    for i in range(n_layers):
        init_ffn_block(p.scope(f"layer{i}"), cfg)


def encode_scene(
    raw: MultiScaleFeatures,
    cfg: AttentionConfig,
    p: ParamScope,
    n_layers: int,
    positional: bool = True,
) -> MultiScaleFeatures:
    """Project each level, add position codes, then dense self-attention."""
    parts = []
    for lvl, sl in enumerate(raw.level_slices()):
        proj = p.scope(f"proj{lvl}")
        if raw.width != proj["w"].shape[0]:
            raise DimensionError(
                f"level {lvl} width {raw.width} != expected {proj['w'].shape[0]}"
            )
        parts.append(apply_linear(raw.tokens[..., sl, :], proj))
    x = T.concat(parts, axis=-2)
    pos = grid_positional_encoding(raw.level_shapes, cfg.d_model).astype(x.data.dtype)
    if positional:
        level_ids = np.concatenate(
            [np.full(h * w, i) for i, (h, w) in enumerate(raw.level_shapes)]
        )
        x = x + pos + p["level_embed"][level_ids]
    for i in range(n_layers):
        x = ffn_block(x, x, x, cfg, p.scope(f"layer{i}"))
    return MultiScaleFeatures(x, raw.level_shapes, pos=pos)


def add_entity_params(
    store: ParamStore, cfg: AttentionConfig, n_queries: int, n_classes: int, n_layers: int
) -> None:
    p = store.scope("entity")
    p.normal("query", (n_queries, cfg.d_model), std=1.0)
    for i in range(n_layers):
        lp = p.scope(f"layer{i}")
        init_mha(lp.scope("self"), cfg)
        init_layer_norm(lp.scope("norm0"), cfg.d_model)
        init_ffn_block(lp, cfg)
    init_linear(p.scope("cls"), cfg.d_model, n_classes + 1)
    init_mlp(p.scope("box"), [cfg.d_model, cfg.d_model, cfg.d_model, 4])


def decode_entities(
    memory: MultiScaleFeatures,
    cfg: AttentionConfig,
    p: ParamScope,
    n_layers: int,
    pos_on_values: bool = True,
) -> EntityOutput:
    """Entity queries: self-attention, cross-attention to memory, feed-forward."""
    mem = memory.tokens
    if memory.pos is not None:
        keys = mem + memory.pos
        values = keys if pos_on_values else mem
    else:
        keys = values = mem
    x = p["query"]
    for i in range(n_layers):
        lp = p.scope(f"layer{i}")
        x = apply_layer_norm(x + mha(x, x, x, cfg, lp.scope("self")), lp.scope("norm0"))
        x = ffn_block(x, keys, values, cfg, lp)
    if x.ndim < mem.ndim:  # no layers ran against a batched memory
        x = x + T.Tensor(np.zeros(mem.shape[:-2] + x.shape, dtype=x.data.dtype))
    logits = apply_linear(x, p.scope("cls"))
    boxes = T.sigmoid(apply_mlp(x, p.scope("box"), 3))
    return EntityOutput(x, boxes, logits)


__all__ = [
    "EntityOutput",
    "MultiScaleFeatures",
    "decode_entities",
    "encode_scene",
    "add_encoder_params",
    "add_entity_params",
]
