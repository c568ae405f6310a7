"""Query and reasoning schemas, the schema-distance target and schema noise."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence, TypeVar

import numpy as np

from .encoder import EncoderConfig, frozen_schema_encode
from .graph import KnowledgeGraph, QuerySchema, Trajectory


@dataclass(frozen=True)
class ReasoningSchema:
    type_sequence: tuple[str, ...]

    def elements(self) -> list[str]:
        return list(self.type_sequence)


def reasoning_schema(g: KnowledgeGraph, t: Trajectory) -> ReasoningSchema:
    t.validate(g)
    return ReasoningSchema(tuple(g.type_of(e) for e in t.entities()))


def schema_text(first: str, rest: Sequence[str] = ()) -> str:
    return " -> ".join(s.strip().lower() for s in (first, *rest))


def _text_of(s: QuerySchema | ReasoningSchema) -> str:
    els = s.elements()
    return schema_text(els[0], els[1:])


def future_target(cfg: EncoderConfig, m_q: QuerySchema | ReasoningSchema,
                  m_pi: QuerySchema | ReasoningSchema) -> float:
    """exp(-||Psi*(m_q) - Psi*(m_pi)||^2) with the frozen schema embedder."""
    diff = frozen_schema_encode(cfg, _text_of(m_q)) - frozen_schema_encode(cfg, _text_of(m_pi))
    return math.exp(-float(diff @ diff))


S = TypeVar("S", QuerySchema, ReasoningSchema)


def inject_schema_noise(s: S, rho: float, rng: random.Random, type_vocab: Iterable[str]) -> S:
    """Corrupt ``s`` with probability ``rho`` by one replace-or-swap edit.

    A replacement draws a vocabulary type different from the one it
    overwrites whenever the vocabulary allows it.  Swaps exchange two
    adjacent elements and are only possible for length >= 2.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    vocab = sorted(set(type_vocab))
    if not vocab:
        raise ValueError("type vocabulary is empty")
    if rng.random() >= rho:
        return s
    els = s.elements()
    if len(els) >= 2 and rng.random() < 0.5:
        i = rng.randrange(len(els) - 1)
        els[i], els[i + 1] = els[i + 1], els[i]
    else:
        i = rng.randrange(len(els))
        choices = [v for v in vocab if v != els[i]] or vocab
        els[i] = rng.choice(choices)
    if isinstance(s, QuerySchema):
        return QuerySchema.from_elements(els)
    return ReasoningSchema(tuple(els))


def schema_distance_sq(cfg: EncoderConfig, a: str, b: str) -> float:
    d = frozen_schema_encode(cfg, a) - frozen_schema_encode(cfg, b)
    return float(np.dot(d, d))
