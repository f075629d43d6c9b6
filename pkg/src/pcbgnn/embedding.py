"""Name embeddings for nets, symbols, and pins.

Every name string is mapped to a 384-dimensional unit vector. The default
embedder hashes character n-grams, which keeps the package free of any
pretrained-model runtime while preserving the property the downstream model
relies on: similar names produce similar vectors. Externally produced tables
(e.g. from a sentence-transformer exporter) can be loaded from disk and used
as a drop-in replacement; names missing from a table fall back to the hashed
embedder.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

EMBED_DIM = 384

# FNV-1a, 64 bit (public-domain constants). Fixed so that embeddings are
# identical across platforms and implementations.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


class HashNgramEmbedder:
    """Signed feature hashing of character n-grams (n = 1..3).

    The name is wrapped in start/end markers ("^", "$"), all 1/2/3-grams of
    the marked string are hashed with FNV-1a 64, and each gram adds +/-1
    (sign from the hash's top bit) to one of 384 bins (hash modulo 384).
    The bin vector is then L2-normalized.
    """

    source = "hash-ngram-v1"

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, name: str) -> np.ndarray:
        if not name:
            raise ValueError("cannot embed an empty name")
        marked = "^" + name + "$"
        vec = np.zeros(self.dim, dtype=np.float64)
        for n in (1, 2, 3):
            for i in range(len(marked) - n + 1):
                h = _fnv1a64(marked[i : i + n].encode("utf-8"))
                sign = 1.0 if (h >> 63) == 0 else -1.0
                vec[h % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # All grams cancelled (essentially impossible, but keep the
            # unit-norm postcondition total).
            vec[_fnv1a64(marked.encode("utf-8")) % self.dim] = 1.0
            return vec
        return vec / norm


@dataclass
class EmbeddingTable:
    """A name -> unit vector map with provenance metadata."""

    dim: int = EMBED_DIM
    source: str = "hash-ngram-v1"
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        for name, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"entry {name!r} has length {vec.shape[0] if vec.ndim == 1 else vec.shape}, "
                    f"expected {self.dim}"
                )
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"entry {name!r} is not L2-normalized (norm={norm!r})")


class TableEmbedder:
    """Embedder backed by an :class:`EmbeddingTable`.

    Unknown names fall back to the hashed n-gram embedder (and are logged),
    unless ``strict`` is set, in which case they raise KeyError. Real
    schematics have an unbounded name vocabulary, so the fallback is on by
    default.
    """

    def __init__(self, table: EmbeddingTable, strict: bool = False):
        self.table = table
        self.fallback = None if strict else HashNgramEmbedder(table.dim)
        self.source = table.source

    def embed(self, name: str) -> np.ndarray:
        if not name:
            raise ValueError("cannot embed an empty name")
        vec = self.table.entries.get(name)
        if vec is not None:
            return vec
        if self.fallback is None:
            raise KeyError(f"name {name!r} not in embedding table and no fallback configured")
        logger.info("name %r not in embedding table, falling back to %s", name, self.fallback.source)
        return self.fallback.embed(name)


def embed_name(name: str, embedder) -> np.ndarray:
    """Embed a single name with the given embedder (default interface)."""
    return embedder.embed(name)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def similarity_matrix(names: list[str], embedder) -> np.ndarray:
    """Pairwise cosine similarity matrix; symmetric with unit diagonal."""
    if not names:
        raise ValueError("similarity_matrix requires at least one name")
    vecs = np.stack([embedder.embed(n) for n in names])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    vecs = vecs / norms
    mat = vecs @ vecs.T
    mat = (mat + mat.T) / 2.0  # exact symmetry despite float rounding
    np.fill_diagonal(mat, 1.0)
    return np.clip(mat, -1.0, 1.0)


def store_table(table: EmbeddingTable, path) -> None:
    table.validate()
    doc = {
        "dim": table.dim,
        "source": table.source,
        "entries": {name: [float(x) for x in vec] for name, vec in table.entries.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_table(path) -> EmbeddingTable:
    """Load a table file, re-validating dims and norms.

    Vectors whose norm is within 1e-6 of 1 are renormalized with a warning;
    anything further off (or zero) is an error.
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or set(doc) != {"dim", "source", "entries"}:
        raise ValueError(f"malformed table file {path}: expected keys dim, source, entries")
    dim = doc["dim"]
    entries: dict[str, np.ndarray] = {}
    for name, values in doc["entries"].items():
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (dim,):
            raise ValueError(f"table entry {name!r} has length {vec.size}, expected dim {dim}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or abs(norm - 1.0) > 1e-6:
            raise ValueError(f"table entry {name!r} is not unit-norm (norm={norm!r})")
        if abs(norm - 1.0) > 1e-9:
            warnings.warn(f"renormalizing table entry {name!r} (norm was {norm!r})")
            vec = vec / norm
        entries[name] = vec
    return EmbeddingTable(dim=dim, source=doc["source"], entries=entries)
