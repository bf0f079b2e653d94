"""The assembled one-stage scene-graph model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .entity import (
    EntityOutput,
    MultiScaleFeatures,
    add_encoder_params,
    add_entity_params,
    decode_entities,
    encode_scene,
)
from .nn import AttentionConfig
from .sr_decoder import (
    PositionalCodes,
    TripletOutput,
    add_sr_params,
    parallel_decoding,
    self_reasoning,
    triplet_heads,
)
from .tensor import ParamStore, Tensor
from .triplet_init import (
    PoolDiagnostics,
    TripletQueries,
    add_triplet_params,
    build_kv,
    init_triplet_queries,
    roi_pool_map,
)

TAU_PARAM = "loss.log_tau"


@dataclass
class ModelOutput:
    memory: MultiScaleFeatures
    entities: EntityOutput
    queries: TripletQueries
    triplets: TripletOutput
    pool: PoolDiagnostics


class SceneGraphModel:
    """Parameters plus the forward pass; holds no per-batch state."""

    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        m = cfg.model
        self.attn = AttentionConfig(m.d_model, m.n_heads, ffn_mult=m.ffn_mult)
        self.params = ParamStore(cfg.train.seed if seed is None else seed)
        data = cfg.data
        add_encoder_params(self.params, self.attn, data.raw_channels, data.n_levels,
                           m.encoder_layers)
        add_entity_params(self.params, self.attn, m.n_entities, data.num_entity_classes,
                          m.entity_layers)
        add_triplet_params(self.params, self.attn, m.n_triplets)
        add_sr_params(self.params, self.attn, m.sr_layers, data.num_entity_classes,
                      data.num_predicate_classes, m.d_align, m.self_reasoning)
        self.params.add(TAU_PARAM, np.array(math.log(cfg.loss.tau_init)))

    @property
    def log_tau(self) -> Tensor:
        return self.params[TAU_PARAM]

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data))

    def clamp_tau(self) -> None:
        lo, hi = math.log(self.cfg.loss.tau_min), math.log(self.cfg.loss.tau_max)
        t = self.log_tau
        t.data = np.clip(t.data, lo, hi).astype(t.data.dtype)

    def encode(self, levels: list[np.ndarray]) -> MultiScaleFeatures:
        dtype = T.default_dtype()
        raw = MultiScaleFeatures.from_levels([np.asarray(lv, dtype=dtype) for lv in levels])
        return encode_scene(raw, self.attn, self.params.scope("encoder"),
                            self.cfg.model.encoder_layers, self.cfg.model.encoder_positional)

    def forward(self, levels: list[np.ndarray]) -> ModelOutput:
        """Run the model on grids shaped (B, H, W, C) per level, coarse first."""
        m = self.cfg.model
        p = self.params
        memory = self.encode(levels)
        ents = decode_entities(memory, self.attn, p.scope("entity"), m.entity_layers,
                               m.pos_on_values)
        diag = PoolDiagnostics()
        fea = roi_pool_map(memory, ents.boxes, p.scope("triplet.roi"), diag)
        keys, values = build_kv(fea, ents.boxes, p.scope("triplet.box_fc"))
        queries = init_triplet_queries(p["triplet.query_init"], keys, values, self.attn,
                                       p.scope("triplet"))
        codes = PositionalCodes.from_params(p.scope("sr"), m.n_entities, m.d_model,
                                            T.default_dtype())
        decode = self_reasoning if m.self_reasoning else parallel_decoding
        h_s, h_p, h_o = decode(queries.subject, queries.predicate, queries.obj, ents.hidden,
                               codes, self.attn, p.scope("sr"), m.sr_layers, m.pos_on_values)
        trip = triplet_heads(h_s, h_p, h_o, p.scope("heads"))
        return ModelOutput(memory, ents, queries, trip, diag)
