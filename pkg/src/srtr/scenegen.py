"""Procedurally generated relational scenes.

Each scene places a few axis-aligned entities on the unit square. Every
entity is rendered into the finest feature grid as a Gaussian blob whose
channel signature is a fixed per-class pattern; coarser levels are 2x2
average pools of the next finer one. Relations come from fixed geometric
rules and are sub-sampled with a Zipf-like bias so annotations are sparse
and long-tailed.

Dataset file layout (little endian)::

    magic      6 bytes   b"SRTRDS"
    version    uint16    currently 1
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON:
               {"version", "config", "config_hash", "num_entity_classes",
                "num_predicate_classes", "level_shapes", "raw_channels",
                "num_scenes"}
    records    num_scenes times:
        rec_len    uint32   bytes that follow in this record
        seed       uint64
        n_ent      uint16
        n_trip     uint16
        classes    n_ent * int32
        boxes      n_ent * 4 * float64   (cx, cy, w, h)
        triplets   n_trip * 3 * int32   (subject, predicate, object)
        levels     float64 grids, coarse to fine, each H * W * C row-major

Split manifests are text files with one ``<split>\\t<scene index>`` per line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GenerationError, LoadError

ENTITY_NAMES = (
    "circle", "square", "triangle", "star", "ring",
    "cross", "diamond", "hexagon", "arrow", "heart",
    "moon", "spiral", "bolt", "drop", "leaf", "crown",
)

# Ordered by how often each relation holds between random boxes, so the
# Zipf weight and the geometric base rate both fall with the class index.
PREDICATE_NAMES = (
    "left of", "right of", "above", "below",
    "larger than", "overlapping", "near", "inside",
)

FORMAT_MAGIC = b"SRTRDS"
FORMAT_VERSION = 1


@dataclass
class GenConfig:
    num_entity_classes: int = 10
    num_predicate_classes: int = 8
    min_entities: int = 3
    max_entities: int = 5
    skew: float = 1.5
    annotation_rate: float = 0.4
    grid_size: int = 12
    n_levels: int = 2
    raw_channels: int = 16
    noise: float = 0.05
    min_size: float = 0.12
    max_size: float = 0.4
    nest_prob: float = 0.3
    min_center_dist: float = 0.1
    max_retries: int = 200

    def validate(self) -> None:
        if self.num_entity_classes < 2 or self.num_predicate_classes < 2:
            raise ConfigError("class counts must be >= 2")
        if self.num_entity_classes > len(ENTITY_NAMES):
            raise ConfigError(f"at most {len(ENTITY_NAMES)} entity classes are named")
        if self.num_predicate_classes > len(PREDICATE_NAMES):
            raise ConfigError(f"at most {len(PREDICATE_NAMES)} predicate rules exist")
        if self.skew < 0:
            raise ConfigError("skew must be >= 0")
        if not 2 <= self.min_entities <= self.max_entities:
            raise ConfigError("need 2 <= min_entities <= max_entities")
        if self.grid_size % (2 ** (self.n_levels - 1)):
            raise ConfigError("grid_size must be divisible by 2**(n_levels - 1)")
        if not 0 < self.min_size <= self.max_size < 1:
            raise ConfigError("box size range must lie inside (0, 1)")

    @property
    def level_shapes(self) -> list[tuple[int, int]]:
        """Grid shapes, coarse first."""
        sizes = [self.grid_size // 2**k for k in range(self.n_levels)]
        return [(s, s) for s in reversed(sizes)]

    @property
    def entity_names(self) -> tuple[str, ...]:
        return ENTITY_NAMES[: self.num_entity_classes]

    @property
    def predicate_names(self) -> tuple[str, ...]:
        return PREDICATE_NAMES[: self.num_predicate_classes]

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SceneSample:
    levels: list[np.ndarray]  # coarse to fine, each (H, W, C)
    entity_classes: np.ndarray  # (n,) int
    entity_boxes: np.ndarray  # (n, 4) cxcywh
    triplets: np.ndarray  # (m, 3) int: subject, predicate, object
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (
            self.seed == other.seed
            and len(self.levels) == len(other.levels)
            and all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels))
            and np.array_equal(self.entity_classes, other.entity_classes)
            and np.array_equal(self.entity_boxes, other.entity_boxes)
            and np.array_equal(self.triplets, other.triplets)
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.levels, self.entity_classes, self.entity_boxes, self.triplets):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def class_patterns(num_classes: int, channels: int) -> np.ndarray:
    """Fixed unit-norm channel signature per class (orthonormal when possible)."""
    rng = np.random.default_rng(0x5C3E)
    m = rng.normal(size=(max(num_classes, channels), channels))
    if num_classes <= channels:
        q, _ = np.linalg.qr(m.T)
        return q.T[:num_classes].copy()
    return m[:num_classes] / np.linalg.norm(m[:num_classes], axis=1, keepdims=True)


def average_pool2(grid: np.ndarray) -> np.ndarray:
    h, w, c = grid.shape
    return grid.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def render(classes, boxes, cfg: GenConfig, rng: np.random.Generator | None = None):
    """Finest-level grid of Gaussian blobs plus noise, and its pooled levels."""
    n = cfg.grid_size
    centers = (np.arange(n) + 0.5) / n
    patterns = class_patterns(cfg.num_entity_classes, cfg.raw_channels)
    grid = np.zeros((n, n, cfg.raw_channels))
    for c, (cx, cy, w, h) in zip(classes, boxes):
        gx = np.exp(-0.5 * ((centers - cx) / (w / 3.0)) ** 2)
        gy = np.exp(-0.5 * ((centers - cy) / (h / 3.0)) ** 2)
        grid += np.outer(gy, gx)[:, :, None] * patterns[c]
    if cfg.noise > 0 and rng is not None:
        grid += rng.normal(0.0, cfg.noise, grid.shape)
    levels = [grid]
    for _ in range(cfg.n_levels - 1):
        levels.append(average_pool2(levels[-1]))
    return levels[::-1]


def _place(rng: np.random.Generator, k: int, cfg: GenConfig) -> np.ndarray:
    margin = 0.01
    boxes: list[np.ndarray] = []
    for _ in range(k):
        for _attempt in range(cfg.max_retries):
            parents = [b for b in boxes if min(b[2], b[3]) >= 2 * cfg.min_size]
            if parents and rng.random() < cfg.nest_prob:
                par = parents[rng.integers(len(parents))]
                w = par[2] * rng.uniform(0.35, 0.6)
                h = par[3] * rng.uniform(0.35, 0.6)
                cx = rng.uniform(par[0] - (par[2] - w) / 2, par[0] + (par[2] - w) / 2)
                cy = rng.uniform(par[1] - (par[3] - h) / 2, par[1] + (par[3] - h) / 2)
            else:
                w, h = rng.uniform(cfg.min_size, cfg.max_size, 2)
                cx = rng.uniform(w / 2 + margin, 1 - w / 2 - margin)
                cy = rng.uniform(h / 2 + margin, 1 - h / 2 - margin)
            cand = np.array([cx, cy, w, h])
            if all(np.hypot(cx - b[0], cy - b[1]) >= cfg.min_center_dist for b in boxes):
                boxes.append(cand)
                break
        else:
            raise GenerationError(f"could not place entity {len(boxes)} after retries")
    return np.array(boxes)


# ----------------------------------------------------------------------
# relation rules


def _xyxy(b):
    return b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2


def relation_holds(name: str, a: np.ndarray, b: np.ndarray) -> bool:
    """Whether predicate ``name`` holds for subject box ``a`` and object ``b``."""
    ax0, ay0, ax1, ay1 = _xyxy(a)
    bx0, by0, bx1, by1 = _xyxy(b)
    contains_ab = ax0 >= bx0 and ay0 >= by0 and ax1 <= bx1 and ay1 <= by1
    contains_ba = bx0 >= ax0 and by0 >= ay0 and bx1 <= ax1 and by1 <= ay1
    if name == "left of":
        return a[0] + 0.1 < b[0]
    if name == "right of":
        return a[0] > b[0] + 0.1
    if name == "above":
        return a[1] + 0.1 < b[1]
    if name == "below":
        return a[1] > b[1] + 0.1
    if name == "larger than":
        return a[2] * a[3] > 1.25 * b[2] * b[3]
    if name == "near":
        return float(np.hypot(a[0] - b[0], a[1] - b[1])) < 0.2
    if name == "overlapping":
        iw = min(ax1, bx1) - max(ax0, bx0)
        ih = min(ay1, by1) - max(ay0, by0)
        return iw > 0 and ih > 0 and not contains_ab and not contains_ba
    if name == "inside":
        return contains_ab
    raise KeyError(name)


def holding_relations(boxes: np.ndarray, num_predicates: int) -> list[tuple[int, int, int]]:
    """Every (subject, predicate, object) whose geometric rule is satisfied."""
    out = []
    names = PREDICATE_NAMES[:num_predicates]
    for i in range(len(boxes)):
        for j in range(len(boxes)):
            if i == j:
                continue
            for r, name in enumerate(names):
                if relation_holds(name, boxes[i], boxes[j]):
                    out.append((i, r, j))
    return out


def zipf_weights(n: int, skew: float) -> np.ndarray:
    return (np.arange(1, n + 1, dtype=np.float64)) ** (-skew)


def predicate_rules(
    boxes: np.ndarray, rng: np.random.Generator, cfg: GenConfig
) -> np.ndarray:
    """Sample annotated triplets from the relations that hold.

    Each holding relation of class ``r`` is kept with probability
    ``annotation_rate * w_r / w_0``. A scene that ends up empty keeps its
    single highest-weight holding relation.
    """
    if len(boxes) < 2:
        return np.zeros((0, 3), dtype=np.int64)
    holding = holding_relations(boxes, cfg.num_predicate_classes)
    w = zipf_weights(cfg.num_predicate_classes, cfg.skew)
    keep_p = cfg.annotation_rate * w / w[0]
    draws = rng.random(len(holding))
    kept = [t for t, u in zip(holding, draws) if u < keep_p[t[1]]]
    if not kept and holding:
        kept = [min(holding, key=lambda t: (t[1], t[0], t[2]))]
    return np.array(kept, dtype=np.int64).reshape(-1, 3)


def generate_scene(seed: int, cfg: GenConfig) -> SceneSample:
    cfg.validate()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_retries):
        k = int(rng.integers(cfg.min_entities, cfg.max_entities + 1))
        boxes = _place(rng, k, cfg)
        triplets = predicate_rules(boxes, rng, cfg)
        if len(triplets):
            break
    else:
        raise GenerationError(f"scene {seed}: no relation holds after retries")
    classes = rng.integers(0, cfg.num_entity_classes, size=len(boxes)).astype(np.int64)
    levels = render(classes, boxes, cfg, rng)
    return SceneSample(levels, classes, boxes, triplets, seed=seed)


def generate_dataset(n: int, cfg: GenConfig, base_seed: int = 0) -> list[SceneSample]:
    return [generate_scene(base_seed * 1_000_003 + i, cfg) for i in range(n)]


def stack_levels(samples: list[SceneSample]) -> list[np.ndarray]:
    """Batch the per-scene grids into (B, H, W, C) arrays per level."""
    return [np.stack([s.levels[i] for s in samples]) for i in range(len(samples[0].levels))]


# ----------------------------------------------------------------------
# persistence


def write_dataset(samples: list[SceneSample], path, cfg: GenConfig) -> None:
    header = {
        "version": FORMAT_VERSION,
        "config": dataclasses.asdict(cfg),
        "config_hash": cfg.digest(),
        "num_entity_classes": cfg.num_entity_classes,
        "num_predicate_classes": cfg.num_predicate_classes,
        "level_shapes": cfg.level_shapes,
        "raw_channels": cfg.raw_channels,
        "num_scenes": len(samples),
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(hdr)))
        fh.write(hdr)
        for s in samples:
            body = [
                struct.pack("<QHH", s.seed, len(s.entity_classes), len(s.triplets)),
                np.asarray(s.entity_classes, dtype="<i4").tobytes(),
                np.asarray(s.entity_boxes, dtype="<f8").tobytes(),
                np.asarray(s.triplets, dtype="<i4").tobytes(),
            ]
            body += [np.asarray(lv, dtype="<f8").tobytes() for lv in s.levels]
            payload = b"".join(body)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def read_dataset(path) -> tuple[list[SceneSample], GenConfig]:
    data = Path(path).read_bytes()
    if data[:6] != FORMAT_MAGIC:
        raise LoadError(f"{path}: bad magic at byte offset 0")
    if len(data) < 12:
        raise LoadError(f"{path}: truncated header at byte offset {len(data)}")
    version, hdr_len = struct.unpack_from("<HI", data, 6)
    if version != FORMAT_VERSION:
        raise LoadError(f"{path}: unsupported version {version} at byte offset 6")
    off = 12
    if len(data) < off + hdr_len:
        raise LoadError(f"{path}: truncated header at byte offset {len(data)}")
    header = json.loads(data[off: off + hdr_len].decode("utf-8"))
    off += hdr_len
    cfg = GenConfig(**header["config"])
    shapes = [tuple(s) for s in header["level_shapes"]]
    ch = header["raw_channels"]
    samples = []
    for idx in range(header["num_scenes"]):
        if len(data) < off + 4:
            raise LoadError(f"{path}: record {idx} truncated at byte offset {off}")
        (rec_len,) = struct.unpack_from("<I", data, off)
        start = off + 4
        if len(data) < start + rec_len:
            raise LoadError(f"{path}: record {idx} truncated at byte offset {start}")
        seed, n_ent, n_trip = struct.unpack_from("<QHH", data, start)
        cur = start + 12
        need = n_ent * 4 + n_ent * 32 + n_trip * 12 + sum(h * w * ch * 8 for h, w in shapes)
        if cur + need != start + rec_len:
            raise LoadError(f"{path}: record {idx} length mismatch at byte offset {start}")
        classes = np.frombuffer(data, "<i4", n_ent, cur).astype(np.int64)
        cur += n_ent * 4
        boxes = np.frombuffer(data, "<f8", n_ent * 4, cur).reshape(n_ent, 4).copy()
        cur += n_ent * 32
        trip = np.frombuffer(data, "<i4", n_trip * 3, cur).reshape(n_trip, 3).astype(np.int64)
        cur += n_trip * 12
        levels = []
        for h, w in shapes:
            levels.append(np.frombuffer(data, "<f8", h * w * ch, cur).reshape(h, w, ch).copy())
            cur += h * w * ch * 8
        samples.append(SceneSample(levels, classes, boxes, trip, seed=int(seed)))
        off = start + rec_len
    if off != len(data):
        raise LoadError(f"{path}: {len(data) - off} trailing bytes at byte offset {off}")
    return samples, cfg


def split_indices(n: int, seed: int = 0, train_fraction: float = 0.7) -> dict[str, list[int]]:
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return {"train": sorted(order[:n_train].tolist()), "val": sorted(order[n_train:].tolist())}


def write_manifest(splits: dict[str, list[int]], path) -> None:
    lines = [f"{name}\t{i}" for name, ids in splits.items() for i in ids]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, list[int]]:
    splits: dict[str, list[int]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, idx = line.split("\t")
            splits.setdefault(name, []).append(int(idx))
        except ValueError as exc:
            raise LoadError(f"{path}: malformed manifest line {lineno}") from exc
    return splits
