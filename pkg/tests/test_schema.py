import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from scprm.encoder import EncoderConfig, frozen_schema_encode
from scprm.graph import QuerySchema
from scprm.schema import (ReasoningSchema, future_target, inject_schema_noise, reasoning_schema,
                          schema_text)

CFG = EncoderConfig(dimension=256)
TYPES = ["disease", "gene", "mirna", "pathway", "drug", "symptom"]


def test_reasoning_schema_follows_entity_types(tiny, gold):
    assert reasoning_schema(tiny, gold).type_sequence == ("disease", "gene", "mirna")
    assert reasoning_schema(tiny, gold.prefix(1)).type_sequence == ("disease", "gene")
    assert reasoning_schema(tiny, gold.prefix(0)).type_sequence == ("disease",)


def test_schema_text_is_lowercased():
    assert schema_text("Disease", ["GENE", " mirna "]) == "disease -> gene -> mirna"


def test_identical_schemas_give_one():
    s = QuerySchema("disease", ("gene",))
    assert future_target(CFG, s, ReasoningSchema(("disease", "gene"))) == 1.0


def test_orthogonal_embeddings_give_exp_minus_two():
    # two single-token schemas landing in different buckets are orthonormal
    u = frozen_schema_encode(CFG, "disease")
    other = next(t for t in TYPES[1:] if abs(frozen_schema_encode(CFG, t) @ u) == 0.0)
    got = future_target(CFG, ReasoningSchema(("disease",)), ReasoningSchema((other,)))
    assert got == pytest.approx(0.1353352832366127, abs=1e-12)


def test_gold_prefix_targets_increase_to_one(tiny, gold, tiny_query):
    vals = [future_target(CFG, tiny_query.schema, reasoning_schema(tiny, gold.prefix(k)))
            for k in range(len(gold) + 1)]
    assert vals == sorted(vals) and vals[-1] == 1.0


def test_noise_rate_zero_and_one():
    s = QuerySchema("disease", ("gene", "mirna"))
    rng = random.Random(0)
    assert all(inject_schema_noise(s, 0.0, rng, TYPES) is s for _ in range(50))
    changed = [inject_schema_noise(s, 1.0, rng, TYPES) for _ in range(200)]
    assert all(c != s for c in changed)
    assert all(len(c.elements()) == 3 for c in changed)


def test_noise_rejects_bad_rate():
    with pytest.raises(ValueError):
        inject_schema_noise(QuerySchema("a"), 1.5, random.Random(0), TYPES)


def test_noise_rate_is_respected():
    s = QuerySchema("disease", ("gene", "mirna"))
    rng = random.Random(3)
    n = 4000
    hits = sum(inject_schema_noise(s, 0.3, rng, TYPES) != s for _ in range(n))
    # binomial(4000, 0.3): sd ~ 29
    assert abs(hits - 0.3 * n) < 150


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(TYPES), min_size=1, max_size=5), st.integers(0, 10_000))
def test_noise_preserves_length_and_vocab(els, seed):
    s = ReasoningSchema(tuple(els))
    out = inject_schema_noise(s, 1.0, random.Random(seed), TYPES)
    assert isinstance(out, ReasoningSchema)
    assert len(out.type_sequence) == len(els)
    assert set(out.type_sequence) <= set(TYPES)
    diffs = sum(a != b for a, b in zip(out.type_sequence, els))
    assert diffs in (0, 1, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(TYPES), min_size=1, max_size=5),
       st.lists(st.sampled_from(TYPES), min_size=1, max_size=5))
def test_target_in_unit_interval_and_symmetric(a, b):
    sa, sb = ReasoningSchema(tuple(a)), ReasoningSchema(tuple(b))
    t = future_target(CFG, sa, sb)
    assert 0.0 < t <= 1.0
    assert t == future_target(CFG, sb, sa)
    assert t >= math.exp(-4.0)
