"""Pairwise/future losses, analytic gradients and the AdamW training loop."""
from __future__ import annotations

import logging
import math
import random
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidTrajectoryError, ScprmError, TrainingError
from .graph import KnowledgeGraph, QueryRecord, Trajectory, extend
from .iohelp import atomic_write_text, read_jsonl, write_jsonl
from .reward import ScprmModel, future_success, path_reward, sigmoid
from .schema import future_target, reasoning_schema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathPair:
    query_id: str
    positive: Trajectory
    negative: Trajectory
    first_error_step: int

    def __post_init__(self):
        if not 1 <= self.first_error_step <= len(self.negative):
            raise InvalidTrajectoryError(
                f"first_error_step {self.first_error_step} outside 1..{len(self.negative)}")
        if len(self.positive) < 1:
            raise InvalidTrajectoryError("positive path must contain at least one step")

    @property
    def positive_step(self) -> int:
        return min(self.first_error_step, len(self.positive))

    def to_json(self, g: KnowledgeGraph) -> dict:
        return {"query_id": self.query_id, "positive": self.positive.to_labels(g),
                "negative": self.negative.to_labels(g), "first_error_step": self.first_error_step}

    @classmethod
    def from_json(cls, obj: dict, g: KnowledgeGraph) -> "PathPair":
        return cls(str(obj["query_id"]), Trajectory.from_labels(g, obj["positive"]),
                   Trajectory.from_labels(g, obj["negative"]), int(obj["first_error_step"]))


def save_pairs(pairs: Sequence[PathPair], g: KnowledgeGraph, path) -> None:
    write_jsonl(path, (p.to_json(g) for p in pairs))


def load_pairs(path, g: KnowledgeGraph) -> list[PathPair]:
    return [PathPair.from_json(obj, g) for obj in read_jsonl(path)]


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.3
    lam: float = 1.0
    lr: float = 2e-4
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # "per_step": prefix k is fitted to its own schema target;
    # "final": every prefix is fitted to the full path's target.
    future_supervision: str = "per_step"
    reduction: str = "sum"

    def __post_init__(self):
        if self.margin < 0 or self.lam < 0:
            raise ValueError("margin and lambda must be non-negative")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.future_supervision not in ("per_step", "final"):
            raise ValueError(f"unknown future_supervision {self.future_supervision!r}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    def to_json(self) -> dict:
        return asdict(self)


# -- scalar losses ---------------------------------------------------------

LOSS_TERMS = ("pair_full", "pair_step", "future")


def _check_terms(terms) -> None:
    bad = [t for t in terms if t not in LOSS_TERMS]
    if bad or not terms:
        raise ValueError(f"loss terms must be a non-empty subset of {LOSS_TERMS}, got {list(terms)}")


def _combine_terms(full, step, fut, lam, terms):
    total = 0.0
    if "pair_full" in terms:
        total += full
    if "pair_step" in terms:
        total += step
    if "future" in terms:
        total += lam * fut
    return total


def softplus(x: float) -> float:
    return float(np.logaddexp(0.0, x))


def pair_loss_full(r_pos: float, r_neg: float, margin: float) -> float:
    """-log sigmoid(r_pos - (r_neg + margin))."""
    return softplus(-(r_pos - (r_neg + margin)))


def pair_loss_grad(r_pos: float, r_neg: float, margin: float) -> float:
    """d pair_loss_full / d r_pos (the r_neg derivative is its negation)."""
    return -float(sigmoid(-(r_pos - (r_neg + margin))))


def pair_loss_step(m: ScprmModel, pair: PathPair, q: str, g: KnowledgeGraph,
                   margin: float) -> float:
    l = pair.first_error_step
    if not 1 <= l <= len(pair.negative):
        raise InvalidTrajectoryError(f"first error step {l} out of range")
    r_pos = path_reward(m, q, pair.positive.prefix(pair.positive_step), g).F
    r_neg = path_reward(m, q, pair.negative.prefix(l), g).F
    return pair_loss_full(r_pos, r_neg, margin)


def future_loss(m: ScprmModel, q: str, t: Trajectory, target: float,
                g: KnowledgeGraph) -> float:
    """(w - target)^2 for the last prefix of ``t``."""
    w = future_success(m, q, t, g)
    return (w - target) ** 2


def _future_terms(query: QueryRecord, t: Trajectory, g: KnowledgeGraph, cfg_enc,
                  mode: str) -> list[tuple[Trajectory, float]]:
    final = future_target(cfg_enc, query.schema, reasoning_schema(g, t))
    out = []
    for k in range(1, len(t) + 1):
        pre = t.prefix(k)
        target = final if mode == "final" else future_target(
            cfg_enc, query.schema, reasoning_schema(g, pre))
        out.append((pre, target))
    return out


def total_loss(m: ScprmModel, batch: Sequence[PathPair], queries: Mapping[str, QueryRecord],
               g: KnowledgeGraph, cfg: TrainConfig, *, parts: bool = False,
               terms: Sequence[str] = LOSS_TERMS):
    """Sum of both pairwise losses plus lambda times the future loss.

    Computed straight from ``path_reward``/``future_success``; the compiled
    gradient path in :class:`CompiledPairs` is checked against this.
    """
    _check_terms(terms)
    if not batch:
        raise ValueError("batch must be non-empty")
    full = step = fut = 0.0
    for pair in batch:
        query = queries[pair.query_id]
        q = query.text
        full += pair_loss_full(path_reward(m, q, pair.positive, g).F,
                               path_reward(m, q, pair.negative, g).F, cfg.margin)
        step += pair_loss_step(m, pair, q, g, cfg.margin)
        for t in (pair.positive, pair.negative):
            for pre, target in _future_terms(query, t, g, m.encoder_cfg, cfg.future_supervision):
                fut += future_loss(m, q, pre, target, g)
    scale = 1.0 / len(batch) if cfg.reduction == "mean" else 1.0
    full, step, fut = full * scale, step * scale, fut * scale
    total = _combine_terms(full, step, fut, cfg.lam, terms)
    if parts:
        return total, {"pair_full": full, "pair_step": step, "future": fut}
    return total


# -- compiled batches and analytic gradients --------------------------------

class CompiledPairs:
    """Pre-encoded features for a fixed pair set.

    The encoder never trains, so every (query, prefix) is embedded once.  Each
    unique item owns one risk-feature row and one schema-feature row; a
    trajectory's G is the ordered sum over the rows of its prefixes.
    """

    def __init__(self, m: ScprmModel, pairs: Sequence[PathPair],
                 queries: Mapping[str, QueryRecord], g: KnowledgeGraph,
                 future_supervision: str = "per_step"):
        self.pairs = list(pairs)
        index: dict[tuple, int] = {}
        xr, xs, prefix_rows, lengths = [], [], [], []

        def item(qid: str, t: Trajectory) -> int:
            key = (qid, t.key())
            if key in index:
                return index[key]
            rows = [item(qid, t.prefix(k)) for k in range(1, len(t))] if len(t) > 1 else []
            q = queries[qid].text
            idx = len(xr)
            index[key] = idx
            xr.append(m.risk_features(q, t, g))
            xs.append(m.schema_features(q, t, g))
            prefix_rows.append(rows + [idx])
            lengths.append(len(t))
            return idx

        self.entries = []
        for pair in self.pairs:
            query = queries[pair.query_id]
            qid = pair.query_id
            pos, neg = item(qid, pair.positive), item(qid, pair.negative)
            pos_l = item(qid, pair.positive.prefix(pair.positive_step))
            neg_l = item(qid, pair.negative.prefix(pair.first_error_step))
            fut = []
            for t in (pair.positive, pair.negative):
                for pre, target in _future_terms(query, t, g, m.encoder_cfg, future_supervision):
                    fut.append((item(qid, pre), target))
            needed = sorted({r for i in (pos, neg, pos_l, neg_l) for r in prefix_rows[i]}
                            | {i for i, _ in fut})
            self.entries.append((pos, neg, pos_l, neg_l, fut, needed))
        self.Xr = np.array(xr)
        self.Xs = np.array(xs)
        self.prefix_rows = prefix_rows
        self.lengths = lengths

    def __len__(self) -> int:
        return len(self.pairs)

    def loss_and_grad(self, m: ScprmModel, cfg: TrainConfig, which: Sequence[int] | None = None,
                      terms: Sequence[str] = LOSS_TERMS):
        """Loss parts and parameter gradients over the selected pairs.

        ``terms`` picks which losses enter the total and the gradient; the
        returned parts always hold all three.
        """
        _check_terms(terms)
        which = range(len(self.entries)) if which is None else which
        entries = [self.entries[i] for i in which]
        if not entries:
            raise ValueError("batch must be non-empty")
        rows = np.array(sorted({r for e in entries for r in e[5]}))
        local = {int(r): i for i, r in enumerate(rows)}
        a, cache_r = m.risk_head.forward(self.Xr[rows])
        s, cache_s = m.schema_head.forward(self.Xs[rows])
        eps = m.epsilon
        sa, ss = sigmoid(a), sigmoid(s)
        p, w = np.clip(sa, eps, 1 - eps), np.clip(ss, eps, 1 - eps)
        live_a = ((sa >= eps) & (sa <= 1 - eps)).astype(float)
        live_s = ((ss >= eps) & (ss <= 1 - eps)).astype(float)
        logsafe = np.log1p(-p)
        H = np.log(w)
        # dF/d logit, per row, scaled later by dL/dF
        da = np.zeros_like(a)
        ds = np.zeros_like(s)
        variant = m.variant

        def reward(item: int) -> float:
            prs = [local[r] for r in self.prefix_rows[item]]
            k = self.lengths[item]
            G = 0.0
            for r in prs:
                G = G + logsafe[r]
            h = H[local[item]]
            if variant == "full":
                return G + h
            if variant == "wo_cr":
                return h
            if variant == "wo_fr":
                return G
            acc = 0.0
            for r in prs:
                acc += 1.0 - p[r]
            return acc / k

        def push(item: int, coef: float) -> None:
            prs = [local[r] for r in self.prefix_rows[item]]
            li = local[item]
            if variant in ("full", "wo_fr"):
                for r in prs:
                    da[r] -= coef * p[r] * live_a[r]
            elif variant == "additive_prm":
                k = self.lengths[item]
                for r in prs:
                    da[r] -= coef * p[r] * (1 - p[r]) * live_a[r] / k
            if variant in ("full", "wo_cr"):
                ds[li] += coef * (1 - w[li]) * live_s[li]

        scale = 1.0 / len(entries) if cfg.reduction == "mean" else 1.0
        full = step = fut = 0.0
        for pos, neg, pos_l, neg_l, fterms, _ in entries:
            for hi, lo, acc in ((pos, neg, "full"), (pos_l, neg_l, "step")):
                rp, rn = reward(hi), reward(lo)
                loss = pair_loss_full(rp, rn, cfg.margin)
                if acc == "full":
                    full += loss
                else:
                    step += loss
                if "pair_" + acc not in terms:
                    continue
                d = pair_loss_grad(rp, rn, cfg.margin) * scale
                push(hi, d)
                push(lo, -d)
            for it, target in fterms:
                li = local[it]
                fut += (w[li] - target) ** 2
                if cfg.lam and "future" in terms:
                    ds[li] += scale * cfg.lam * 2 * (w[li] - target) * w[li] * (1 - w[li]) * live_s[li]
        full, step, fut = full * scale, step * scale, fut * scale
        total = _combine_terms(full, step, fut, cfg.lam, terms)
        grads = {
            "risk": m.risk_head.backward(cache_r, da),
            "schema": m.schema_head.backward(cache_s, ds),
        }
        return total, {"pair_full": full, "pair_step": step, "future": fut}, grads


def grad(m: ScprmModel, batch: Sequence[PathPair], queries: Mapping[str, QueryRecord],
         g: KnowledgeGraph, cfg: TrainConfig,
         terms: Sequence[str] = LOSS_TERMS) -> dict[str, dict[str, np.ndarray]]:
    """Analytic gradient of the total loss w.r.t. risk- and schema-head parameters.

    Only head parameters appear; the encoders have nothing to differentiate.
    """
    cp = CompiledPairs(m, batch, queries, g, cfg.future_supervision)
    return cp.loss_and_grad(m, cfg, terms=terms)[2]


def numerical_grad(loss_fn: Callable[[], float], m: ScprmModel,
                   h: float = 1e-5) -> dict[str, dict[str, np.ndarray]]:
    """Central finite differences over every head parameter (mutates then restores)."""
    out = {}
    for name, head in (("risk", m.risk_head), ("schema", m.schema_head)):
        out[name] = {}
        for key, arr in head.params.items():
            gr = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), gr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn()
                flat[i] = orig - h
                down = loss_fn()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            out[name][key] = gr
    return out


# -- optimiser --------------------------------------------------------------

def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Adam with decoupled weight decay over a dict of numpy arrays (updated in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p)


def _flat_params(m: ScprmModel) -> dict[str, np.ndarray]:
    out = {}
    for name, head in (("risk", m.risk_head), ("schema", m.schema_head)):
        for k, v in head.params.items():
            out[f"{name}.{k}"] = v
    return out


def train(m: ScprmModel, pairs: Sequence[PathPair], queries: Mapping[str, QueryRecord],
          g: KnowledgeGraph, cfg: TrainConfig, *, compiled: CompiledPairs | None = None):
    """Train a copy of ``m``; returns ``(model, history)`` with one row per epoch."""
    if not pairs:
        raise ValueError("no training pairs")
    model = m.copy()
    cp = compiled or CompiledPairs(model, pairs, queries, g, cfg.future_supervision)
    params = _flat_params(model)
    opt = AdamW(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(cp)
    per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * per_epoch
    history = []
    step_no = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"pair_full": 0.0, "pair_step": 0.0, "future": 0.0, "total": 0.0}
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total, parts, grads = cp.loss_and_grad(model, cfg, batch)
            if not math.isfinite(total):
                raise TrainingError(
                    f"non-finite loss {total!r} at epoch {epoch}, step {step_no}: {parts}")
            unscale = len(batch) if cfg.reduction == "mean" else 1
            for k, v in parts.items():
                sums[k] += v * unscale
            sums["total"] += total * unscale
            opt.lr = cosine_lr(cfg.lr, step_no, total_steps)
            opt.step({f"{name}.{k}": v for name, gd in grads.items() for k, v in gd.items()})
            step_no += 1
        row = {"epoch": epoch, "mean_pair_full": sums["pair_full"] / n,
               "mean_pair_step": sums["pair_step"] / n, "mean_future": sums["future"] / n,
               "total": sums["total"] / n}
        history.append(row)
        log.debug("epoch %d: %s", epoch, row)
    return model, history


def save_history(history: Sequence[dict], path) -> None:
    cols = ["epoch", "mean_pair_full", "mean_pair_step", "mean_future", "total"]
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(str(row[c]) for c in cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- pair construction ------------------------------------------------------

def _corruptible_steps(g: KnowledgeGraph, gold: Trajectory) -> list[int]:
    out = []
    for j in range(1, len(gold) + 1):
        prev = gold.prefix(j - 1).last
        if len(g.neighbors(prev)) > 1:
            out.append(j)
    return out


def corrupt_path(g: KnowledgeGraph, gold: Trajectory, j: int, rng: random.Random) -> Trajectory:
    """Replace hop ``j`` of ``gold`` with another outgoing edge of the same entity.

    When only the relation changed (same tail) the remaining gold hops are
    still edges and are kept.  When the entity changed, the later gold hops
    no longer start at the path's last entity and are dropped.
    """
    base = gold.prefix(j - 1)
    gold_step = gold.steps[j - 1]
    alternatives = [a for a in g.neighbors(base.last) if a != gold_step]
    rel, ent = rng.choice(alternatives)
    neg = extend(base, rel, ent, g)
    if ent == gold_step[1]:
        for r, e in gold.steps[j:]:
            neg = extend(neg, r, e, g)
    return neg


def build_pairs(g: KnowledgeGraph, queries: Sequence[QueryRecord], per_query: int,
                rng: random.Random, max_tries: int = 100) -> list[PathPair]:
    """Positive = a gold path; negative = that path with one hop swapped out."""
    out = []
    for query in queries:
        golds = query.gold_trajectories(g)
        if not golds:
            raise ScprmError(f"query {query.id!r} has no gold path")
        gold_keys = {t.key() for t in golds}
        candidates = [(t, j) for t in golds for j in _corruptible_steps(g, t)]
        if not candidates:
            raise ScprmError(f"query {query.id!r} has no corruptible step")
        for _ in range(per_query):
            for _ in range(max_tries):
                gold, j = rng.choice(candidates)
                neg = corrupt_path(g, gold, j, rng)
                if neg.key() not in gold_keys:
                    break
            else:
                raise ScprmError(f"could not build a non-gold negative for query {query.id!r}")
            out.append(PathPair(query.id, gold, neg, j))
    return out
