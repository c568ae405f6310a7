"""Monte Carlo tree search over the graph with the path reward as value function."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .errors import ScprmError
from .graph import KnowledgeGraph, QueryRecord, Trajectory
from .reward import ScprmModel, combine, future_success, step_risk

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    c: float = math.sqrt(2.0)
    budget: int = 500
    max_depth: int = 4
    top_k: int = 3

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("exploration constant must be >= 0")
        if self.budget < 1 or self.max_depth < 1 or self.top_k < 1:
            raise ValueError("budget, max_depth and top_k must be >= 1")


class TreeNode:
    """One state (trajectory prefix) of the search tree.

    ``visits`` counts the node's own evaluation plus every backpropagation
    through it, so ``visits == 1 + sum(child.visits)``.  For the edge
    (parent, action) N(s, a) is ``child.visits`` and V(s, a) is
    ``child.value_sum / child.visits``.
    """

    __slots__ = ("state", "action", "children", "pending", "visits", "value_sum",
                 "terminal", "exhausted", "G", "safety", "F")

    def __init__(self, state: Trajectory, action: tuple[str, int] | None = None):
        self.state = state
        self.action = action
        self.children: dict[tuple[str, int], TreeNode] = {}
        self.pending: list[tuple[str, int]] = []
        self.visits = 0
        self.value_sum = 0.0
        self.terminal = False
        self.exhausted = False
        self.G = 0.0
        self.safety = 0.0
        self.F: float | None = None

    @property
    def value(self) -> float:
        return self.value_sum / self.visits if self.visits else 0.0

    def ordered_children(self) -> list["TreeNode"]:
        return [self.children[a] for a in sorted(self.children)]


class PathMemory:
    """Insertion-only set of explored trajectory keys."""

    def __init__(self, keys=()):
        self._keys: set[tuple] = set(keys)

    def __contains__(self, t: Trajectory) -> bool:
        return t.key() in self._keys

    def add(self, t: Trajectory) -> None:
        self._keys.add(t.key())

    def __len__(self) -> int:
        return len(self._keys)


def ucb_scores(node: TreeNode, c: float, candidates: Sequence[TreeNode] | None = None) -> dict:
    kids = candidates if candidates is not None else node.ordered_children()
    out = {}
    for ch in kids:
        if ch.visits == 0:
            out[ch.action] = math.inf
        else:
            out[ch.action] = ch.value + c * math.sqrt(math.log(node.visits) / ch.visits)
    return out


def ucb_select(node: TreeNode, c: float, candidates: Sequence[TreeNode] | None = None):
    """Action maximising V + c*sqrt(ln N(s) / N(s,a)); ties go to the lowest action."""
    kids = candidates if candidates is not None else node.ordered_children()
    if not kids:
        raise ScprmError("cannot select from a node without children")
    scores = ucb_scores(node, c, kids)
    best = None
    for action in sorted(scores):
        if best is None or scores[action] > scores[best]:
            best = action
    return best


class SearchTree:
    def __init__(self, m: ScprmModel, g: KnowledgeGraph, query: QueryRecord, cfg: SearchConfig,
                 memory: PathMemory | None = None):
        self.m, self.g, self.q, self.cfg = m, g, query.text, cfg
        self.query = query
        self.memory = memory if memory is not None else PathMemory()
        self.root = TreeNode(Trajectory(g.id_of(query.anchor)))
        self.root.visits = 1
        self._open(self.root)
        self.evaluated: list[TreeNode] = []
        self.simulations = 0

    def _open(self, node: TreeNode) -> None:
        nbrs = self.g.neighbors(node.state.last)
        if len(node.state) >= self.cfg.max_depth or not nbrs:
            node.terminal = node.exhausted = True
        else:
            node.pending = list(nbrs)

    def _evaluate(self, parent: TreeNode, child: TreeNode) -> float:
        m, t = self.m, child.state
        p = step_risk(m, self.q, t, self.g)
        child.G = parent.G + math.log1p(-p)
        child.safety = parent.safety + (1.0 - p)
        H = math.log(future_success(m, self.q, t, self.g))
        child.F = combine(m.variant, child.G, H, child.safety, len(t))
        return child.F

    def simulate(self) -> bool:
        """Run one select/expand/evaluate/backpropagate pass.

        Returns False (and changes nothing) once every reachable path has
        been evaluated or is already in memory.
        """
        node, path = self.root, [self.root]
        while True:
            while node.pending and self._child_state(node, node.pending[0]) in self.memory:
                node.pending.pop(0)
            if node.pending:
                action = node.pending.pop(0)
                child = TreeNode(self._child_state(node, action), action)
                node.children[action] = child
                F = self._evaluate(node, child)
                self.memory.add(child.state)
                self.evaluated.append(child)
                child.visits, child.value_sum = 1, F
                self._open(child)
                for anc in path:
                    anc.visits += 1
                    anc.value_sum += F
                self._refresh(path + [child])
                self.simulations += 1
                return True
            live = [ch for ch in node.ordered_children() if not ch.exhausted]
            if not live:
                node.exhausted = True
                self._refresh(path)
                return False
            action = ucb_select(node, self.cfg.c, live)
            node = node.children[action]
            path.append(node)

    def _child_state(self, node: TreeNode, action: tuple[str, int]) -> Trajectory:
        return Trajectory(node.state.anchor, node.state.steps + (action,))

    @staticmethod
    def _refresh(path: list[TreeNode]) -> None:
        for n in reversed(path):
            if not n.terminal:
                n.exhausted = not n.pending and all(ch.exhausted for ch in n.children.values())

    @property
    def done(self) -> bool:
        return self.root.exhausted

    def ranked(self) -> list[tuple[Trajectory, float]]:
        return [(n.state, n.F) for n in
                sorted(self.evaluated, key=lambda n: (-n.F, _rank_key(n.state)))]


def _rank_key(t: Trajectory):
    return (len(t), t.steps)


@dataclass
class SearchResult:
    query_id: str
    ranked: list[tuple[Trajectory, float]]
    answers: list[str]
    simulations: int
    diagnostic: str = ""

    def to_json(self, g: KnowledgeGraph, top_k: int) -> dict:
        topk, seen = [], set()
        for t, F in self.ranked:
            if t.last in seen:
                continue
            seen.add(t.last)
            topk.append({"answer": g.label(t.last), "reward": F, "path": t.to_labels(g)})
            if len(topk) == top_k:
                break
        out = {"query_id": self.query_id, "topk": topk, "simulations": self.simulations}
        if self.diagnostic:
            out["diagnostic"] = self.diagnostic
        return out


def top_answers(ranked: Sequence[tuple[Trajectory, float]], g: KnowledgeGraph, k: int) -> list[str]:
    answers, seen = [], set()
    for t, _ in ranked:
        if t.last not in seen:
            seen.add(t.last)
            answers.append(g.label(t.last))
            if len(answers) == k:
                break
    return answers


def search(m: ScprmModel, g: KnowledgeGraph, q: QueryRecord, cfg: SearchConfig,
           memory: PathMemory | None = None) -> SearchResult:
    """Run up to ``cfg.budget`` simulations and rank every evaluated path by F."""
    tree = SearchTree(m, g, q, cfg, memory)
    for _ in range(cfg.budget):
        if tree.done or not tree.simulate():
            break
    ranked = tree.ranked()
    diag = ""
    if not ranked:
        diag = "no path was evaluated (anchor has no unexplored outgoing edges)"
        log.warning("query %s: %s", q.id, diag)
    return SearchResult(q.id, ranked, top_answers(ranked, g, cfg.top_k), tree.simulations, diag)


_WORKER: dict = {}


def _init_worker(m, g, cfg):
    _WORKER.update(m=m, g=g, cfg=cfg)


def _run_one(q: QueryRecord) -> SearchResult:
    return search(_WORKER["m"], _WORKER["g"], q, _WORKER["cfg"])


def search_many(m: ScprmModel, g: KnowledgeGraph, queries: Sequence[QueryRecord],
                cfg: SearchConfig, workers: int = 1) -> list[SearchResult]:
    """Search every query; output is sorted by query id whatever the worker count."""
    if workers <= 1 or len(queries) < 2:
        results = [search(m, g, q, cfg) for q in queries]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(m, g, cfg)) as ex:
            results = list(ex.map(_run_one, queries, chunksize=max(1, len(queries) // (4 * workers))))
    return sorted(results, key=lambda r: r.query_id)

