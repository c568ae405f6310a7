"""Immutable knowledge-graph store, trajectories and the TSV/JSONL formats."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import GraphFormatError, InvalidTrajectoryError, UnknownEntityError
from .iohelp import atomic_write_text

# Fixed instruction prepended to every risk-head input.
RISK_PROMPT = "Assess whether the latest reasoning step is risky, unsupported or off-topic."


@dataclass(frozen=True)
class Entity:
    id: int
    label: str
    entity_type: str


@dataclass(frozen=True, order=True)
class Triplet:
    head: int
    relation: str
    tail: int


class KnowledgeGraph:
    """Typed entities plus directed, labelled edges.

    Outgoing adjacency is sorted by ``(relation, tail id)`` so that every
    traversal built on top of it is deterministic.  Instances are never
    mutated after construction.
    """

    __slots__ = ("_entities", "_by_label", "_triples", "_adj")

    def __init__(self, entities: Sequence[Entity], triples: Iterable[Triplet]):
        for i, ent in enumerate(entities):
            if ent.id != i:
                raise ValueError(f"entity ids must be contiguous from 0, got {ent.id} at {i}")
            if not ent.label or not ent.entity_type:
                raise ValueError(f"entity {i} has an empty label or type")
        self._entities = tuple(entities)
        self._by_label = {e.label: e.id for e in self._entities}
        if len(self._by_label) != len(self._entities):
            raise ValueError("entity labels must be unique")
        n = len(self._entities)
        triple_set = frozenset(triples)
        adj: list[list[tuple[str, int]]] = [[] for _ in range(n)]
        for t in triple_set:
            if not (0 <= t.head < n and 0 <= t.tail < n):
                raise ValueError(f"triple {t} references an unknown entity id")
            adj[t.head].append((t.relation, t.tail))
        self._triples = triple_set
        self._adj = tuple(tuple(sorted(a)) for a in adj)

    @property
    def entities(self) -> tuple[Entity, ...]:
        return self._entities

    @property
    def triples(self) -> frozenset[Triplet]:
        return self._triples

    @property
    def n_entities(self) -> int:
        return len(self._entities)

    def entity(self, eid: int) -> Entity:
        self._check(eid)
        return self._entities[eid]

    def label(self, eid: int) -> str:
        return self.entity(eid).label

    def type_of(self, eid: int) -> str:
        return self.entity(eid).entity_type

    def id_of(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise UnknownEntityError(label) from None

    def has_edge(self, head: int, relation: str, tail: int) -> bool:
        return Triplet(head, relation, tail) in self._triples

    def neighbors(self, eid: int) -> tuple[tuple[str, int], ...]:
        self._check(eid)
        return self._adj[eid]

    def entity_types(self) -> set[str]:
        return {e.entity_type for e in self._entities}

    def _check(self, eid: int) -> None:
        if not isinstance(eid, (int,)) or not 0 <= eid < len(self._entities):
            raise UnknownEntityError(eid)

    def __reduce__(self):
        return (KnowledgeGraph, (self._entities, self._triples))


def neighbors(g: KnowledgeGraph, e: int) -> tuple[tuple[str, int], ...]:
    return g.neighbors(e)


@dataclass(frozen=True)
class Trajectory:
    """Anchor entity followed by ``(relation, entity)`` hops."""

    anchor: int
    steps: tuple[tuple[str, int], ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def last(self) -> int:
        return self.steps[-1][1] if self.steps else self.anchor

    def entities(self) -> list[int]:
        return [self.anchor] + [e for _, e in self.steps]

    def prefix(self, j: int) -> "Trajectory":
        if not 0 <= j <= len(self.steps):
            raise IndexError(f"prefix length {j} outside 0..{len(self.steps)}")
        return Trajectory(self.anchor, self.steps[:j])

    def key(self) -> tuple:
        return (self.anchor,) + self.steps

    def triples(self) -> list[Triplet]:
        out = []
        prev = self.anchor
        for rel, ent in self.steps:
            out.append(Triplet(prev, rel, ent))
            prev = ent
        return out

    def validate(self, g: KnowledgeGraph) -> None:
        g.entity(self.anchor)
        for t in self.triples():
            if t not in g.triples:
                raise InvalidTrajectoryError(f"edge {_fmt_triplet(g, t)} is not in the graph")

    def to_labels(self, g: KnowledgeGraph) -> list[list[str]]:
        return [[g.label(t.head), t.relation, g.label(t.tail)] for t in self.triples()]

    @classmethod
    def from_labels(cls, g: KnowledgeGraph, triples: Sequence[Sequence[str]],
                    anchor: str | None = None) -> "Trajectory":
        """Rebuild a trajectory from ``[[h, r, t], ...]`` label triples."""
        if not triples:
            if anchor is None:
                raise InvalidTrajectoryError("empty path needs an explicit anchor")
            return cls(g.id_of(anchor))
        traj = cls(g.id_of(triples[0][0]))
        if anchor is not None and g.id_of(anchor) != traj.anchor:
            raise InvalidTrajectoryError(f"path does not start at anchor {anchor!r}")
        for h, r, t in triples:
            if g.id_of(h) != traj.last:
                raise InvalidTrajectoryError(f"path is not contiguous at {h!r}")
            traj = extend(traj, r, g.id_of(t), g)
        return traj


def _fmt_triplet(g: KnowledgeGraph, t: Triplet) -> str:
    def name(i):
        return g.label(i) if 0 <= i < g.n_entities else str(i)
    return f"({name(t.head)}, {t.relation}, {name(t.tail)})"


def extend(t: Trajectory, relation: str, e: int, g: KnowledgeGraph) -> Trajectory:
    """Return ``t`` with one more hop; the hop must be an edge of ``g``."""
    if not g.has_edge(t.last, relation, e):
        raise InvalidTrajectoryError(
            f"edge {_fmt_triplet(g, Triplet(t.last, relation, e))} is not in the graph")
    return Trajectory(t.anchor, t.steps + ((relation, e),))


def render_path(t: Trajectory, g: KnowledgeGraph) -> str:
    parts = [g.label(t.anchor)]
    for rel, ent in t.steps:
        parts.append(f"-{rel}->")
        parts.append(g.label(ent))
    return " ".join(parts)


def render_text(prompt: str, q: str, t: Trajectory, g: KnowledgeGraph) -> str:
    return "\n".join((prompt, q, render_path(t, g)))


@dataclass(frozen=True)
class QuerySchema:
    anchor_type: str
    constraints: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.anchor_type or any(not c for c in self.constraints):
            raise ValueError("schema entries must be non-empty")

    def elements(self) -> list[str]:
        return [self.anchor_type, *self.constraints]

    @classmethod
    def from_elements(cls, elements: Sequence[str]) -> "QuerySchema":
        return cls(elements[0], tuple(elements[1:]))


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    anchor: str
    answers: tuple[str, ...]
    schema: QuerySchema
    gold_paths: tuple[tuple[tuple[str, str, str], ...], ...] = field(default=())

    def gold_trajectories(self, g: KnowledgeGraph) -> list[Trajectory]:
        return [Trajectory.from_labels(g, p, anchor=self.anchor) for p in self.gold_paths]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "anchor": self.anchor,
            "answers": list(self.answers),
            "schema": {"anchor_type": self.schema.anchor_type,
                       "constraints": list(self.schema.constraints)},
            "gold_paths": [[list(tr) for tr in p] for p in self.gold_paths],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QueryRecord":
        sch = obj["schema"]
        return cls(
            id=str(obj["id"]),
            text=obj["text"],
            anchor=obj["anchor"],
            answers=tuple(obj["answers"]),
            schema=QuerySchema(sch["anchor_type"], tuple(sch.get("constraints", ()))),
            gold_paths=tuple(tuple(tuple(tr) for tr in p) for p in obj.get("gold_paths", ())),
        )


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def load_graph(triples_path, types_path) -> KnowledgeGraph:
    """Read ``head<TAB>relation<TAB>tail`` and ``entity<TAB>type`` files.

    Entity ids follow the order of first appearance in the types file.  Every
    entity named by a triple must have exactly one type.
    """
    triples_path, types_path = Path(triples_path), Path(types_path)
    types: dict[str, str] = {}
    for lineno, line in _data_lines(types_path):
        cols = line.split("\t")
        if len(cols) != 2 or not cols[0] or not cols[1]:
            raise GraphFormatError(types_path, lineno, "expected 'entity<TAB>type'")
        ent, typ = cols
        if ent in types and types[ent] != typ:
            raise GraphFormatError(
                types_path, lineno,
                f"entity {ent!r} has conflicting types {types[ent]!r} and {typ!r}")
        types[ent] = typ

    raw_triples = []
    for lineno, line in _data_lines(triples_path):
        cols = line.split("\t")
        if len(cols) != 3 or not all(cols):
            raise GraphFormatError(triples_path, lineno, "expected 'head<TAB>relation<TAB>tail'")
        for ent in (cols[0], cols[2]):
            if ent not in types:
                raise GraphFormatError(triples_path, lineno, f"entity {ent!r} has no type")
        raw_triples.append(cols)

    entities = [Entity(i, label, typ) for i, (label, typ) in enumerate(types.items())]
    ids = {e.label: e.id for e in entities}
    triples = [Triplet(ids[h], r, ids[t]) for h, r, t in raw_triples]
    return KnowledgeGraph(entities, triples)


def save_graph(g: KnowledgeGraph, triples_path, types_path) -> None:
    lines = sorted(f"{g.label(t.head)}\t{t.relation}\t{g.label(t.tail)}" for t in g.triples)
    atomic_write_text(triples_path, "".join(l + "\n" for l in lines))
    atomic_write_text(types_path, "".join(f"{e.label}\t{e.entity_type}\n" for e in g.entities))


def load_queries(path) -> list[QueryRecord]:
    path = Path(path)
    out = []
    for lineno, line in _data_lines(path):
        try:
            out.append(QueryRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(path, lineno, f"bad query record: {exc}") from None
    return out


def save_queries(queries: Iterable[QueryRecord], path) -> None:
    atomic_write_text(path, "".join(json.dumps(q.to_json(), ensure_ascii=False) + "\n"
                                    for q in queries))
