"""Run configuration: dataclass sections, presets and a line-oriented file format.

A config file holds one option per line::

    # comments and blank lines are ignored
    preset = desk
    model.d_model = 64
    loss.lambda_vla = 0.5
    train.seeds = 0, 1, 2

``preset`` (optional, first option) picks the base values; every other key
must name an existing ``section.field``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .scenegen import GenConfig

CONFIG_ENV = "SRTR_CONFIG"


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 8
    ffn_mult: int = 2
    encoder_layers: int = 1
    entity_layers: int = 3
    sr_layers: int = 3
    n_entities: int = 20
    n_triplets: int = 40
    d_align: int = 512
    self_reasoning: bool = True
    pos_on_values: bool = True
    encoder_positional: bool = True


@dataclass
class LossConfig:
    w_cls: float = 1.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    lambda_vla: float = 0.5
    no_object_weight: float = 0.1
    entity_weight: float = 1.0
    denominator: str = "negatives-only"
    vla_reduction: str = "mean"
    tau_init: float = 0.07
    tau_min: float = 1e-3
    tau_max: float = 100.0


@dataclass
class OptimConfig:
    lr: float = 1e-4
    lr_encoder: float = 1e-5
    lr_tau: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 8
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    n_scenes: int = 64
    data_seed: int = 0
    precision: str = "reference"
    log_every: int = 1
    checkpoint_every: int = 0
    eval_every: int = 0


@dataclass
class TextConfig:
    source: str = "surrogate"
    bank_path: str = ""
    seed: int = 0
    momentum: float = 0.9
    exact_mean: bool = False


@dataclass
class PathsConfig:
    data: str = ""
    out: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    text: TextConfig = field(default_factory=TextConfig)
    data: GenConfig = field(default_factory=GenConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    preset: str = "desk"

    def validate(self) -> "RunConfig":
        m = self.model
        for name in ("d_model", "n_heads", "n_entities", "n_triplets", "d_align", "ffn_mult"):
            if getattr(m, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if m.d_model % m.n_heads:
            raise ConfigError(f"model.d_model={m.d_model} not divisible by n_heads={m.n_heads}")
        if m.d_model % 4:
            raise ConfigError("model.d_model must be divisible by 4 for the 2-D sine position codes")
        if m.sr_layers < 1:
            raise ConfigError("model.sr_layers must be >= 1")
        if min(m.encoder_layers, m.entity_layers) < 0:
            raise ConfigError("layer counts must be >= 0")
        lc = self.loss
        if lc.denominator not in ("negatives-only", "all"):
            raise ConfigError(f"loss.denominator must be negatives-only or all, got {lc.denominator!r}")
        if not 0 < lc.tau_min <= lc.tau_init <= lc.tau_max:
            raise ConfigError("need 0 < loss.tau_min <= loss.tau_init <= loss.tau_max")
        if lc.vla_reduction not in ("mean", "sum"):
            raise ConfigError(f"loss.vla_reduction must be mean or sum, got {lc.vla_reduction!r}")
        if min(lc.w_cls, lc.w_l1, lc.w_giou, lc.lambda_vla, lc.no_object_weight) < 0:
            raise ConfigError("loss weights must be >= 0")
        t = self.train
        if t.batch_size < 1 or t.steps < 0 or t.n_scenes < 1:
            raise ConfigError("train.batch_size, train.n_scenes must be >= 1 and steps >= 0")
        if t.precision not in ("reference", "fast"):
            raise ConfigError(f"train.precision must be reference or fast, got {t.precision!r}")
        if self.text.source not in ("surrogate", "imported"):
            raise ConfigError("text.source must be surrogate or imported")
        if self.text.source == "imported" and not self.text.bank_path:
            raise ConfigError("text.source = imported needs text.bank_path")
        if not 0 <= self.text.momentum < 1:
            raise ConfigError("text.momentum must lie in [0, 1)")
        self.data.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that shapes a run; output paths are excluded."""
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "RunConfig":
        """Copy with ``section={field: value}`` overrides applied."""
        new = from_dict(self.to_dict())
        for section, values in sections.items():
            for key, value in values.items():
                _assign(new, f"{section}.{key}", value)
        return new.validate()


# ----------------------------------------------------------------------
# presets


def _desk() -> RunConfig:
    cfg = RunConfig()
    # The small encoder trains at the decoder rate. The temperature moves
    # slowly: under the negatives-only denominator lowering it always lowers
    # the loss, so a fast rate drives it onto the clamp and swamps detection.
    cfg.optim = OptimConfig(lr=3e-4, lr_encoder=3e-4, lr_tau=1e-4, grad_clip=1.0)
    return cfg


def _paper() -> RunConfig:
    cfg = RunConfig(preset="paper")
    cfg.model = ModelConfig(
        d_model=256, n_heads=8, ffn_mult=4, encoder_layers=6, entity_layers=6,
        sr_layers=3, n_entities=100, n_triplets=200, d_align=512,
    )
    cfg.optim = OptimConfig(lr=1e-4, lr_encoder=1e-5, lr_tau=1e-4, grad_clip=0.1)
    return cfg


def _gradcheck() -> RunConfig:
    cfg = RunConfig(preset="gradcheck")
    cfg.model = ModelConfig(
        d_model=16, n_heads=2, ffn_mult=2, encoder_layers=1, entity_layers=1,
        sr_layers=2, n_entities=4, n_triplets=6, d_align=8,
    )
    cfg.data = GenConfig(grid_size=4, n_levels=2, raw_channels=4, min_entities=3,
                         max_entities=3)
    # four scenes give repeated labels, so every alignment role has anchors
    cfg.train = TrainConfig(batch_size=4, n_scenes=4)
    return cfg


PRESETS = {"desk": _desk, "paper": _paper, "gradcheck": _gradcheck}


def preset(name: str) -> RunConfig:
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    cfg.preset = name
    return cfg.validate()


# ----------------------------------------------------------------------
# parsing


def _coerce(raw: str, current: Any, where: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def _assign(cfg: RunConfig, key: str, value: Any, where: str | None = None) -> None:
    where = where or key
    parts = key.split(".")
    if len(parts) != 2:
        raise ConfigError(f"{where}: expected section.key, got {key!r}")
    section, name = parts
    sec = getattr(cfg, section, None)
    if sec is None or not dataclasses.is_dataclass(sec) or section == "preset":
        raise ConfigError(f"{where}: unknown section {section!r}")
    if name not in {f.name for f in dataclasses.fields(sec)}:
        raise ConfigError(f"{where}: unknown key {key!r}")
    current = getattr(sec, name)
    if isinstance(value, str):
        value = _coerce(value, current, where)
    elif isinstance(current, tuple):
        value = tuple(value)
    setattr(sec, name, value)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    entries: list[tuple[int, str, str]] = []
    base = "desk"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if entries:
                raise ConfigError(f"{source}:{lineno}: preset must come before other options")
            base = value
            continue
        entries.append((lineno, key, value))
    cfg = preset(base)
    for lineno, key, value in entries:
        _assign(cfg, key, value, f"{source}:{lineno}")
    return cfg.validate()


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Read a config file; falls back to ``$SRTR_CONFIG``, then the desk preset."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return preset("desk")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def dump_config(cfg: RunConfig) -> str:
    lines = [f"preset = {cfg.preset}"]
    for section in ("model", "loss", "optim", "train", "text", "data", "paths"):
        for f in dataclasses.fields(getattr(cfg, section)):
            value = getattr(getattr(cfg, section), f.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def from_dict(d: dict[str, Any]) -> RunConfig:
    cfg = RunConfig(preset=d.get("preset", "desk"))
    for section, values in d.items():
        if section == "preset":
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            _assign(cfg, f"{section}.{key}", value)
    return cfg.validate()
