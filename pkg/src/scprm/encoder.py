"""Hashed bag-of-tokens text encoder.

This is the fixed text-to-vector map used in place of an LLM hidden state.
Each token is hashed (keyed by a seed) to a bucket in ``[0, d)`` and a sign;
signed counts are accumulated and the result is L2-normalised.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

# Seed reserved for the frozen schema embedder; never used by ``encode``.
FROZEN_SCHEMA_SEED = 0x5C4E_3A11

_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class EncoderConfig:
    dimension: int = 256
    hash_seed: int = 0
    max_tokens: int = 512

    def __post_init__(self):
        if self.dimension < 8:
            raise ValueError(f"encoder dimension must be >= 8, got {self.dimension}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=1 << 16)
def _bucket(token: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                             key=seed.to_bytes(8, "little", signed=True)).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % dim, (1.0 if h & 1 else -1.0)


@lru_cache(maxsize=1 << 17)
def _embed(text: str, seed: int, dim: int, max_tokens: int) -> np.ndarray:
    vec = np.zeros(dim)
    for tok in tokenize(text)[:max_tokens]:
        idx, sign = _bucket(tok, seed, dim)
        vec[idx] += sign
    norm = np.sqrt(vec @ vec)
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


def encode(cfg: EncoderConfig, text: str) -> np.ndarray:
    """Embed ``text``; the returned array is read-only and unit-norm (or zero)."""
    return _embed(text, cfg.hash_seed, cfg.dimension, cfg.max_tokens)


def frozen_schema_encode(cfg: EncoderConfig, schema_text: str) -> np.ndarray:
    return _embed(schema_text, FROZEN_SCHEMA_SEED, cfg.dimension, cfg.max_tokens)
