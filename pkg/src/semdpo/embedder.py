"""Frozen text embedder and the distances built on it.

The embedder is a hashed character n-gram term-frequency vector: lowercase,
pad with ``#``, hash every byte n-gram with FNV-1a 64 into ``embed_dim``
slots, L2-normalise. Everything is computed in plain Python floats with a
fixed slot order so the output is bit-identical on every IEEE-754 platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from semdpo.rng import fnv1a64

EmbeddingVector = np.ndarray


@dataclass(frozen=True)
class EmbedderConfig:
    embed_dim: int = 64
    ngram_size: int = 3

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.ngram_size < 1:
            raise ValueError(f"ngram_size must be >= 1, got {self.ngram_size}")


DEFAULT_EMBEDDER = EmbedderConfig()


def _freeze(values) -> EmbeddingVector:
    vec = np.array(values, dtype=np.float64)
    vec.flags.writeable = False
    return vec


def basis_vector(dim: int) -> EmbeddingVector:
    values = [0.0] * dim
    values[0] = 1.0
    return _freeze(values)


def embed(text: str, cfg: EmbedderConfig = DEFAULT_EMBEDDER) -> EmbeddingVector:
    """Embed ``text`` as a unit-norm hashed n-gram count vector.

    Text with no non-whitespace content has no informative n-gram and maps
    to the first basis vector.
    """
    dim, n = cfg.embed_dim, cfg.ngram_size
    if not text.strip():
        return basis_vector(dim)
    data = ("#" + text.lower() + "#").encode("utf-8")
    if len(data) < n:
        return basis_vector(dim)
    counts = [0.0] * dim
    for i in range(len(data) - n + 1):
        counts[fnv1a64(data[i : i + n]) % dim] += 1.0
    sq = 0.0
    for c in counts:  # ascending slot order
        sq += c * c
    norm = math.sqrt(sq)
    return _freeze([c / norm for c in counts])


def _check_dims(a: EmbeddingVector, b: EmbeddingVector) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    _check_dims(a, b)
    if np.array_equal(a, b):
        # unit vectors by contract; avoid a last-ulp miss on the self product
        return 1.0
    s = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        s += x * y
    return s


def cosine_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    return 1.0 - cosine_similarity(a, b)


def euclidean_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    _check_dims(a, b)
    s = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        diff = x - y
        s += diff * diff
    return math.sqrt(s)
