"""Seeded synthetic typed graph with planted gold paths and distractors.

Each query owns a private chain ``anchor -> ... -> answer`` whose hops use
level-specific *sound* relations and whose entity types follow a fixed type
ladder (disease -> gene -> mirna -> ...).  Every other edge in the graph uses
a *risky* relation, so any path that leaves a query's chain contains at least
one risky hop.  At least three distractor paths per query reach an
answer-typed entity of another chain through one risky hop, which is the
"right answer type, wrong evidence" situation the reward has to veto.
"""
from __future__ import annotations

import random

from .errors import InfeasibleError
from .graph import Entity, KnowledgeGraph, QueryRecord, QuerySchema, Trajectory, Triplet

TYPE_LADDER = ("disease", "gene", "mirna", "pathway", "drug", "trial", "outcome", "cohort")
OFF_TYPES = ("symptom", "tissue", "publication")
SOUND_RELATIONS = ("associates", "targets", "regulates", "involves", "treats", "evaluates", "reports")
RISKY_RELATIONS = ("comentioned", "speculated", "anecdotal", "unverified", "coincides", "retracted")

_TEMPLATES = (
    "Which {answer} is reached from {anchor}{via}?",
    "Find the {answer} connected to {anchor}{via}.",
    "What {answer} relates to {anchor}{via}?",
)


def _via(types) -> str:
    if not types:
        return ""
    return " through " + " then ".join(types)


def synth_graph(seed: int, n_entities: int = 200, branching: int = 4, depth: int = 4,
                n_queries: int = 50, n_distractors: int = 3,
                parallel_prob: float = 0.3) -> tuple[KnowledgeGraph, list[QueryRecord]]:
    if depth < 1 or depth >= len(TYPE_LADDER):
        raise InfeasibleError(f"depth must lie in 1..{len(TYPE_LADDER) - 1}, got {depth}")
    if branching < n_distractors + 1:
        raise InfeasibleError(f"branching {branching} leaves no room for {n_distractors} distractors")
    if n_queries < 2:
        raise InfeasibleError("need at least two queries so distractors can reach other chains")
    rng = random.Random(seed)
    lengths = [i % depth + 1 for i in range(n_queries)]
    rng.shuffle(lengths)
    n_chain = sum(L + 1 for L in lengths)
    n_off = n_entities - n_chain
    if n_off < branching:
        raise InfeasibleError(
            f"{n_entities} entities cannot hold {n_queries} chains ({n_chain} entities) "
            f"plus {branching} off-ladder entities")

    counters: dict[str, int] = {}
    entities: list[Entity] = []

    def new_entity(typ: str) -> int:
        counters[typ] = counters.get(typ, 0) + 1
        entities.append(Entity(len(entities), f"{typ}_{counters[typ]:03d}", typ))
        return len(entities) - 1

    chains = [[new_entity(TYPE_LADDER[lvl]) for lvl in range(L + 1)] for L in lengths]
    for i in range(n_off):
        new_entity(OFF_TYPES[i % len(OFF_TYPES)])

    edges: set[Triplet] = set()
    out: dict[int, set[tuple[str, int]]] = {e.id: set() for e in entities}

    def add(h: int, r: str, t: int) -> None:
        edges.add(Triplet(h, r, t))
        out[h].add((r, t))

    for chain in chains:
        for lvl in range(len(chain) - 1):
            add(chain[lvl], SOUND_RELATIONS[lvl], chain[lvl + 1])

    # level -> chains long enough to continue from that level to a given depth
    queries = []
    for qi, chain in enumerate(chains):
        L = len(chain) - 1
        made = 0
        attempts = 0
        while made < n_distractors and attempts < 200:
            attempts += 1
            j = rng.randint(1, L)
            src = chain[j - 1]
            if len(out[src]) >= branching:
                continue
            others = [c for ci, c in enumerate(chains) if ci != qi and len(c) - 1 >= L]
            rel = rng.choice(RISKY_RELATIONS)
            if others:
                target = rng.choice(others)[j]
            else:
                target = rng.randrange(n_chain, len(entities))
            if any(t == target for _, t in out[src]):
                continue
            add(src, rel, target)
            made += 1
        if made < n_distractors:
            raise InfeasibleError(f"could not plant {n_distractors} distractors for query {qi}")
        for lvl in range(L):
            if rng.random() < parallel_prob and len(out[chain[lvl]]) < branching:
                add(chain[lvl], rng.choice(RISKY_RELATIONS), chain[lvl + 1])

    # pad every entity up to the branching factor with risky edges
    n = len(entities)
    for e in range(n):
        tries = 0
        while len(out[e]) < branching and tries < 20 * branching:
            tries += 1
            t = rng.randrange(n)
            if t == e or any(tt == t for _, tt in out[e]):
                continue
            add(e, rng.choice(RISKY_RELATIONS), t)

    g = KnowledgeGraph(entities, edges)
    for qi, chain in enumerate(chains):
        types = [TYPE_LADDER[lvl] for lvl in range(len(chain))]
        anchor = g.label(chain[0])
        text = rng.choice(_TEMPLATES).format(answer=types[-1], anchor=anchor, via=_via(types[1:-1]))
        gold = Trajectory(chain[0], tuple((SOUND_RELATIONS[lvl], chain[lvl + 1])
                                          for lvl in range(len(chain) - 1)))
        queries.append(QueryRecord(
            id=f"q{qi:04d}",
            text=text,
            anchor=anchor,
            answers=(g.label(chain[-1]),),
            schema=QuerySchema(types[0], tuple(types[1:])),
            gold_paths=(tuple(tuple(tr) for tr in gold.to_labels(g)),),
        ))
    return g, queries
