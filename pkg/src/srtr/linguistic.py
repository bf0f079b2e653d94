"""Prompt text features and per-predicate prototypes.

The default text encoder is a surrogate: each whitespace token is hashed
into a seed for a pseudo-random unit vector, and a prompt's embedding is the
normalized mean of its token vectors. Shared words therefore yield
correlated embeddings, and distinct prompts are nearly orthogonal in high
dimension. A bank of precomputed embeddings can be loaded instead.

Bank file format::

    vla-bank v1 dim=<d>
    <canonical prompt>\\t<d whitespace-separated floats>
    ...
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BankLookupError, DimensionError, InputError, LoadError

PROMPT_TEMPLATE = "A photo of {}"
BANK_HEADER = re.compile(r"^vla-bank v1 dim=(\d+)$")


def canonicalize(text: str) -> str:
    return " ".join(text.lower().split())


def build_prompts(subject: str, predicate: str, obj: str) -> tuple[str, str, str]:
    """Subject, predicate and object prompts for one triplet."""
    for role, name in (("subject", subject), ("predicate", predicate), ("object", obj)):
        if not name or not name.strip():
            raise InputError(f"empty {role} name")
    s, p, o = (" ".join(x.split()) for x in (subject, predicate, obj))
    return (
        PROMPT_TEMPLATE.format(s),
        PROMPT_TEMPLATE.format(f"{s} {p} {o}"),
        PROMPT_TEMPLATE.format(o),
    )


def _token_vector(token: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{token}".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def surrogate_embedding(prompt: str, seed: int, dim: int) -> np.ndarray:
    tokens = canonicalize(prompt).split()
    if not tokens:
        raise InputError("cannot embed an empty prompt")
    v = np.mean([_token_vector(t, seed, dim) for t in tokens], axis=0)
    return v / np.linalg.norm(v)


@dataclass
class TextBank:
    d_align: int
    source: str = "surrogate"  # or "imported"
    seed: int = 0
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, prompt: str) -> bool:
        return canonicalize(prompt) in self.entries

    def save(self, path) -> None:
        lines = [f"vla-bank v1 dim={self.d_align}"]
        for key, vec in self.entries.items():
            lines.append(key + "\t" + " ".join(repr(float(x)) for x in vec))
        Path(path).write_text("\n".join(lines) + "\n")


def embed_text(prompt: str, bank: TextBank, seed: int | None = None) -> np.ndarray:
    """Unit embedding of ``prompt``; surrogate banks memoize what they compute."""
    key = canonicalize(prompt)
    hit = bank.entries.get(key)
    if hit is not None:
        return hit
    if bank.source == "imported":
        raise BankLookupError(f"prompt {key!r} is not in the embedding bank")
    vec = surrogate_embedding(key, bank.seed if seed is None else seed, bank.d_align)
    bank.entries[key] = vec
    return vec


def load_embedding_bank(path, expected_dim: int | None = None) -> TextBank:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read embedding bank {path}: {exc.strerror}") from None
    if not lines:
        raise LoadError(f"{path}:1: missing header")
    m = BANK_HEADER.match(lines[0].strip())
    if not m:
        raise LoadError(f"{path}:1: bad header {lines[0]!r}")
    dim = int(m.group(1))
    if dim < 1:
        raise LoadError(f"{path}:1: dimension must be positive")
    if expected_dim is not None and dim != expected_dim:
        raise LoadError(f"{path}:1: bank dimension {dim} != configured {expected_dim}")
    bank = TextBank(dim, source="imported")
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        if "\t" not in line:
            raise LoadError(f"{path}:{lineno}: expected '<key><TAB><floats>'")
        raw_key, raw_vec = line.split("\t", 1)
        key = canonicalize(raw_key)
        if not key:
            raise LoadError(f"{path}:{lineno}: empty key")
        if key in bank.entries:
            raise LoadError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            vec = np.array([float(x) for x in raw_vec.split()], dtype=np.float64)
        except ValueError:
            raise LoadError(f"{path}:{lineno}: non-numeric vector entry") from None
        if vec.size != dim:
            raise LoadError(f"{path}:{lineno}: {vec.size} values, expected {dim}")
        norm = np.linalg.norm(vec)
        if not np.isfinite(norm) or norm == 0:
            raise LoadError(f"{path}:{lineno}: vector must be finite and nonzero")
        bank.entries[key] = vec / norm
    return bank


def make_bank(d_align: int, source: str = "surrogate", seed: int = 0,
              path: str | None = None) -> TextBank:
    if source == "imported":
        return load_embedding_bank(path, expected_dim=d_align)
    return TextBank(d_align, "surrogate", seed)


class PrototypeMemory:
    """Per-predicate running prototype of linguistic features.

    Moving-average mode: ``proto = m * proto + (1 - m) * feature``, with the
    first observation copied in. ``exact_mean`` keeps the true running mean.
    Values are plain arrays and never enter the autodiff graph.
    """

    def __init__(self, n_classes: int, dim: int, momentum: float = 0.9,
                 exact_mean: bool = False):
        self.momentum = momentum
        self.exact_mean = exact_mean
        self.vectors = np.zeros((n_classes, dim))
        self.counts = np.zeros(n_classes, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def initialized(self, cls: int) -> bool:
        return bool(self.counts[cls] > 0)

    def update(self, cls: int, feature) -> None:
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (self.dim,):
            raise DimensionError(f"prototype feature shape {f.shape} != ({self.dim},)")
        n = self.counts[cls]
        if n == 0:
            self.vectors[cls] = f
        elif self.exact_mean:
            self.vectors[cls] += (f - self.vectors[cls]) / (n + 1)
        else:
            self.vectors[cls] = self.momentum * self.vectors[cls] + (1 - self.momentum) * f
        self.counts[cls] = n + 1

    def lookup(self, classes) -> np.ndarray:
        return self.vectors[np.asarray(classes, dtype=np.int64)]

    def state(self) -> dict[str, np.ndarray]:
        return {"vectors": self.vectors.copy(), "counts": self.counts.copy()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if state["vectors"].shape != self.vectors.shape:
            raise DimensionError(
                f"prototype table {state['vectors'].shape} != {self.vectors.shape}"
            )
        self.vectors = np.array(state["vectors"], dtype=np.float64)
        self.counts = np.array(state["counts"], dtype=np.int64)


def update_prototype(mem: PrototypeMemory, cls: int, feature) -> PrototypeMemory:
    mem.update(cls, feature)
    return mem


class TripletText:
    """Linguistic features for every (subject, predicate, object) class triple.

    Caches per-class role embeddings so training steps only gather rows.
    """

    def __init__(self, bank: TextBank, entity_names, predicate_names):
        self.bank = bank
        self.entity_names = tuple(entity_names)
        self.predicate_names = tuple(predicate_names)
        self._role_cache: dict[tuple[int, int, int], tuple[np.ndarray, ...]] = {}

    def features(self, s: int, p: int, o: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        key = (int(s), int(p), int(o))
        hit = self._role_cache.get(key)
        if hit is None:
            prompts = build_prompts(self.entity_names[key[0]], self.predicate_names[key[1]],
                                    self.entity_names[key[2]])
            hit = tuple(embed_text(pr, self.bank) for pr in prompts)
            self._role_cache[key] = hit
        return hit

    def batch(self, triplets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (n, d) subject, predicate and object features."""
        rows = [self.features(*t) for t in triplets]
        if not rows:
            z = np.zeros((0, self.bank.d_align))
            return z, z.copy(), z.copy()
        return tuple(np.stack(col) for col in zip(*rows))
