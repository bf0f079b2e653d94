"""Training loop, optimizer and checkpoints."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from . import tensor as T
from .config import RunConfig, from_dict
from .errors import ContractError, LoadError, NumericError
from .linguistic import PrototypeMemory, TripletText, make_bank
from .losses import (
    ContrastiveDiagnostics,
    entity_losses,
    loss_weights,
    total_loss,
    triplet_losses,
    vla_loss,
)
from .matching import (
    MatchResult,
    entity_match_cost,
    expand_triplets,
    hungarian,
    triplet_match_cost,
)
from .model import TAU_PARAM, ModelOutput, SceneGraphModel
from .scenegen import SceneSample, stack_levels

CHECKPOINT_VERSION = 1


class AdamW:
    """Adaptive moments with decoupled weight decay and per-group learning rates.

    Weight decay only touches matrices; vectors (biases, norms, codes) and
    scalars are left alone.
    """

    def __init__(self, params: T.ParamStore, lr_for: Callable[[str], float],
                 weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8, grad_clip=0.0):
        self.params = params
        self.lr_for = lr_for
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def grad_norm(self) -> float:
        total = 0.0
        for _, p in self.params.items():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        return math.sqrt(total)

    def step(self) -> float:
        norm = self.grad_norm()
        scale = 1.0
        if self.grad_clip > 0 and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if not self.params.trainable(k) or p.grad is None:
                continue
            g = p.grad * scale
            lr = self.lr_for(k)
            if self.weight_decay and p.data.ndim >= 2:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - lr * update).astype(p.data.dtype)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m/{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(state[f"v/{k}"], dtype=self.v[k].dtype)


def lr_schedule(cfg: RunConfig) -> Callable[[str], float]:
    o = cfg.optim

    def lr_for(name: str) -> float:
        if name == TAU_PARAM:
            return o.lr_tau
        if name.startswith("encoder."):
            return o.lr_encoder
        return o.lr

    return lr_for


# ----------------------------------------------------------------------
# one step


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def match_batch(out: ModelOutput, scenes: Sequence[SceneSample], cfg: RunConfig):
    """Hungarian matches for entities and triplets, one pair of results per scene."""
    lc = cfg.loss
    for name, t in (("entity logits", out.entities.logits), ("entity boxes", out.entities.boxes),
                    ("subject logits", out.triplets.subject_logits),
                    ("predicate logits", out.triplets.predicate_logits),
                    ("object logits", out.triplets.object_logits),
                    ("subject boxes", out.triplets.subject_boxes),
                    ("object boxes", out.triplets.object_boxes)):
        if not np.isfinite(t.data).all():
            raise NumericError(f"non-finite {name} before matching")
    ent_p = _softmax(out.entities.logits.data.astype(np.float64))
    ent_b = out.entities.boxes.data
    tr = out.triplets
    p_s = _softmax(tr.subject_logits.data.astype(np.float64))
    p_o = _softmax(tr.object_logits.data.astype(np.float64))
    p_p = _softmax(tr.predicate_logits.data.astype(np.float64))
    ent_m, trip_m, expanded = [], [], []
    for b, sc in enumerate(scenes):
        cost = entity_match_cost(ent_p[b], ent_b[b], sc.entity_classes, sc.entity_boxes,
                                 lc.w_cls, lc.w_l1, lc.w_giou)
        ent_m.append(hungarian(cost))
        ex = expand_triplets(sc.triplets, sc.entity_classes, sc.entity_boxes)
        expanded.append(ex)
        cost = triplet_match_cost(p_s[b], p_p[b], p_o[b], tr.subject_boxes.data[b],
                                  tr.object_boxes.data[b], ex, lc.w_cls, lc.w_l1, lc.w_giou)
        trip_m.append(hungarian(cost))
    return ent_m, trip_m, expanded


def alignment_batch(out: ModelOutput, expanded, matches: list[MatchResult], text: TripletText):
    """Matched visual embeddings, linguistic targets and labels per role."""
    b_idx, q_idx, rows = [], [], []
    for b, (ex, m) in enumerate(zip(expanded, matches)):
        for q, g in m.pairs:
            b_idx.append(b)
            q_idx.append(q)
            rows.append((int(ex[0][g]), int(ex[1][g]), int(ex[2][g])))
    b_idx = np.array(b_idx, dtype=np.int64)
    q_idx = np.array(q_idx, dtype=np.int64)
    tr = out.triplets
    dtype = tr.subject_embed.data.dtype
    t_s, t_p, t_o = text.batch(rows)
    labels = np.array(rows, dtype=np.int64).reshape(-1, 3)
    visual = {
        "subject": tr.subject_embed[b_idx, q_idx],
        "predicate": tr.predicate_embed[b_idx, q_idx],
        "object": tr.object_embed[b_idx, q_idx],
    }
    linguistic = {"subject": t_s.astype(dtype), "predicate": t_p.astype(dtype),
                  "object": t_o.astype(dtype)}
    roles = {"subject": labels[:, 0], "predicate": labels[:, 1], "object": labels[:, 2]}
    return visual, linguistic, roles


def compute_objective(model: SceneGraphModel, scenes: Sequence[SceneSample],
                      text: TripletText, protos: PrototypeMemory | None):
    """Forward, match and score one batch; returns (breakdown, alignment targets)."""
    cfg = model.cfg
    out = model.forward(stack_levels(list(scenes)))
    ent_m, trip_m, expanded = match_batch(out, scenes, cfg)
    comps = entity_losses(out.entities.logits, out.entities.boxes, scenes, ent_m, cfg.loss)
    comps.update(triplet_losses(out.triplets, expanded, trip_m, cfg.loss))
    visual, linguistic, labels = alignment_batch(out, expanded, trip_m, text)
    diag = ContrastiveDiagnostics()
    comps["vla"] = vla_loss(visual, linguistic, labels, model.log_tau, protos,
                            cfg.loss.denominator, diag, cfg.loss.vla_reduction)
    breakdown = total_loss(comps, loss_weights(cfg.loss))
    breakdown.diagnostics = diag
    return breakdown, (linguistic, labels)


# ----------------------------------------------------------------------
# loop


@dataclass
class TrainState:
    model: SceneGraphModel
    optimizer: AdamW
    prototypes: PrototypeMemory
    text: TripletText
    step: int = 0
    log: list[str] = field(default_factory=list)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def format_log_line(step: int, values: dict) -> str:
    return f"{step}\t" + " ".join(f"{k}={_fmt(v)}" for k, v in values.items())


def parse_log_line(line: str) -> tuple[int, dict[str, float]]:
    step, rest = line.rstrip("\n").split("\t", 1)
    return int(step), {k: float(v) for k, v in (kv.split("=", 1) for kv in rest.split())}


def init_state(cfg: RunConfig, seed: int | None = None) -> TrainState:
    model = SceneGraphModel(cfg, seed)
    opt = AdamW(model.params, lr_schedule(cfg), cfg.optim.weight_decay,
                (cfg.optim.beta1, cfg.optim.beta2), cfg.optim.eps, cfg.optim.grad_clip)
    bank = make_bank(cfg.model.d_align, cfg.text.source, cfg.text.seed, cfg.text.bank_path)
    text = TripletText(bank, cfg.data.entity_names, cfg.data.predicate_names)
    protos = PrototypeMemory(cfg.data.num_predicate_classes, cfg.model.d_align,
                             cfg.text.momentum, cfg.text.exact_mean)
    return TrainState(model, opt, protos, text)


def batch_order(n: int, batch_size: int, steps: int, seed: int) -> list[np.ndarray]:
    """Index batches from reshuffled epochs; a batch never wraps an epoch."""
    rng = np.random.default_rng(seed)
    size = min(batch_size, n)
    out: list[np.ndarray] = []
    while len(out) < steps:
        perm = rng.permutation(n)
        for i in range(0, n - size + 1, size):
            out.append(np.sort(perm[i : i + size]))
            if len(out) == steps:
                break
    return out


def train_step(state: TrainState, scenes: Sequence[SceneSample]) -> dict[str, float]:
    model = state.model
    cfg = model.cfg
    breakdown, (linguistic, labels) = compute_objective(model, scenes, state.text,
                                                         state.prototypes)
    T.backward(breakdown.total, model.params)
    grad_norm = state.optimizer.step()
    model.clamp_tau()
    tau = model.tau
    if not cfg.loss.tau_min * (1 - 1e-12) <= tau <= cfg.loss.tau_max * (1 + 1e-12):
        raise ContractError(f"temperature {tau} left [{cfg.loss.tau_min}, {cfg.loss.tau_max}]")
    for cls, feat in zip(labels["predicate"], linguistic["predicate"]):
        state.prototypes.update(int(cls), feat)
    state.step += 1
    values = breakdown.values()
    values.update(tau=tau, grad_norm=grad_norm, anchors=breakdown.diagnostics.anchors)
    return values


def train(
    cfg: RunConfig,
    scenes: Sequence[SceneSample],
    steps: int | None = None,
    seed: int | None = None,
    state: TrainState | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    callback: Callable[[TrainState, dict], None] | None = None,
) -> TrainState:
    """Run ``steps`` optimizer steps (default ``cfg.train.steps``) over ``scenes``."""
    T.set_mode(cfg.train.precision)
    seed = cfg.train.seed if seed is None else seed
    state = state or init_state(cfg, seed)
    steps = cfg.train.steps if steps is None else steps
    if not scenes:
        raise ContractError("training needs at least one scene")
    order = batch_order(len(scenes), cfg.train.batch_size, state.step + steps, seed + 7919)
    log_file = open(log_path, "a") if log_path else None
    try:
        for idx in order[state.step :]:
            try:
                values = train_step(state, [scenes[i] for i in idx])
            except NumericError as exc:
                raise NumericError(f"step {state.step}: {exc}") from None
            if cfg.train.log_every and (state.step - 1) % cfg.train.log_every == 0:
                line = format_log_line(state.step - 1, values)
                state.log.append(line)
                if log_file:
                    log_file.write(line + "\n")
                    log_file.flush()
            if callback:
                callback(state, values)
            every = cfg.train.checkpoint_every
            if checkpoint_dir and every and state.step % every == 0:
                save_checkpoint(state, Path(checkpoint_dir) / f"step{state.step:06d}.npz")
    finally:
        if log_file:
            log_file.close()
    if checkpoint_dir:
        save_checkpoint(state, Path(checkpoint_dir) / "final.npz")
    return state


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = state.model.cfg
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "step": state.step,
        "tau": state.model.tau,
        "seed": state.model.params.seed,
        "kernel_backend": _kernels.BACKEND,
        "precision": T.get_mode(),
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)}
    arrays.update({f"param/{k}": v for k, v in state.model.params.state().items()})
    arrays.update({f"opt/{k}": v for k, v in state.optimizer.state().items()})
    arrays.update({f"proto/{k}": v for k, v in state.prototypes.state().items()})
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint_meta(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (OSError, ValueError, KeyError) as exc:
        raise LoadError(f"unreadable checkpoint {path}: {exc}") from None
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    return meta, arrays


def load_checkpoint(path, cfg: RunConfig | None = None, force: bool = False) -> TrainState:
    """Rebuild a training state; a differing ``cfg`` is refused unless ``force``."""
    meta, arrays = read_checkpoint_meta(path)
    stored = from_dict(meta["config"])
    if stored.digest() != meta["config_hash"]:
        raise LoadError(f"{path}: stored config does not match its recorded hash")
    if cfg is not None and cfg.digest() != meta["config_hash"] and not force:
        raise ContractError(
            f"config hash {cfg.digest()} differs from checkpoint {meta['config_hash']}; "
            "pass force to override"
        )
    use = cfg if (cfg is not None and force) else stored
    T.set_mode(use.train.precision)
    state = init_state(use, meta["seed"])
    pick = lambda prefix: {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    state.model.params.load_state(pick("param/"))
    state.optimizer.load_state(pick("opt/"))
    state.prototypes.load_state(pick("proto/"))
    state.step = int(meta["step"])
    return state
