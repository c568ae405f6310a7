import numpy as np
import pytest

from scprm.graph import Entity, KnowledgeGraph, QueryRecord, QuerySchema, Trajectory, Triplet

# a -> b -> c is the sound chain; everything else is a detour
TINY_ENTITIES = [
    ("disease_a", "disease"),
    ("gene_b", "gene"),
    ("mirna_c", "mirna"),
    ("symptom_d", "symptom"),
    ("gene_e", "gene"),
]
TINY_TRIPLES = [
    ("disease_a", "associates", "gene_b"),
    ("gene_b", "targets", "mirna_c"),
    ("disease_a", "speculated", "symptom_d"),
    ("disease_a", "comentioned", "gene_e"),
    ("gene_e", "anecdotal", "mirna_c"),
    ("symptom_d", "retracted", "gene_b"),
    ("gene_b", "coincides", "symptom_d"),
]


def make_graph(entities=TINY_ENTITIES, triples=TINY_TRIPLES):
    ents = [Entity(i, lbl, typ) for i, (lbl, typ) in enumerate(entities)]
    ids = {lbl: i for i, (lbl, _) in enumerate(entities)}
    return KnowledgeGraph(ents, [Triplet(ids[h], r, ids[t]) for h, r, t in triples])


@pytest.fixture
def tiny():
    return make_graph()


@pytest.fixture
def tiny_query():
    return QueryRecord(
        id="q0", text="Which mirna is reached from disease_a through gene?",
        anchor="disease_a", answers=("mirna_c",),
        schema=QuerySchema("disease", ("gene", "mirna")),
        gold_paths=((("disease_a", "associates", "gene_b"), ("gene_b", "targets", "mirna_c")),),
    )


@pytest.fixture
def gold(tiny):
    return Trajectory(0, (("associates", 1), ("targets", 2)))


def randomize(m, rng, scale=1.0):
    """Give every head parameter a random value (in place) and return ``m``."""
    for head in (m.risk_head, m.schema_head):
        for k, v in head.params.items():
            head.params[k] = np.asarray(rng.normal(0.0, scale, size=v.shape))
    return m


# criterion number -> (passed, one-line detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
