"""Step risk, cumulative past reward, schema-aware future reward and F = G + H."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, encode
from .errors import InvalidTrajectoryError
from .graph import RISK_PROMPT, KnowledgeGraph, Trajectory, render_path, render_text
from .iohelp import atomic_write_text

VARIANTS = ("full", "wo_cr", "wo_fr", "additive_prm")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


class Head:
    """Scalar-output head over a d-dimensional input.

    ``depth=0`` is affine (``w.x + b``); ``depth=1`` inserts one tanh hidden
    layer of width ``hidden``.  Parameters live in ``self.params`` as float64
    arrays keyed by name.
    """

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {k: np.array(v, dtype=float) for k, v in params.items()}
        if "A" in self.params:
            self.depth = 1
            if self.params["A"].shape[0] != self.params["v"].shape[0]:
                raise ValueError("hidden sizes of A and v disagree")
        else:
            self.depth = 0
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"head parameter {k!r} is not finite")

    @classmethod
    def init(cls, dim: int, depth: int = 0, hidden: int = 32,
             rng: np.random.Generator | None = None, init_scale: float = 0.03,
             bias: float = 0.0) -> "Head":
        """Fresh head that outputs the constant ``bias`` everywhere.

        The output weights start at zero.  For ``depth=1`` the hidden weights
        are small Gaussians: with unit-norm inputs and Adam moving each weight
        by roughly ``lr`` per step, a small start lets training shape the
        hidden features instead of leaving them as fixed random projections.
        """
        if depth == 0:
            return cls({"w": np.zeros(dim), "b": np.asarray(float(bias))})
        if depth != 1:
            raise ValueError(f"head depth must be 0 or 1, got {depth}")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls({
            "A": rng.normal(0.0, init_scale, size=(hidden, dim)),
            "c": np.zeros(hidden),
            "v": np.zeros(hidden),
            "b": np.asarray(float(bias)),
        })

    @property
    def dim(self) -> int:
        return self.params["w"].shape[0] if self.depth == 0 else self.params["A"].shape[1]

    def forward(self, X: np.ndarray):
        """Return outputs for the rows of ``X`` and a cache for ``backward``."""
        X = np.atleast_2d(X)
        p = self.params
        if self.depth == 0:
            return X @ p["w"] + p["b"], (X,)
        Hd = np.tanh(X @ p["A"].T + p["c"])
        return Hd @ p["v"] + p["b"], (X, Hd)

    def __call__(self, x: np.ndarray) -> float:
        return float(self.forward(x)[0][0])

    def backward(self, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        if self.depth == 0:
            (X,) = cache
            return {"w": X.T @ dy, "b": np.asarray(dy.sum())}
        X, Hd = cache
        dpre = np.outer(dy, p["v"]) * (1.0 - Hd * Hd)
        return {"A": dpre.T @ X, "c": dpre.sum(axis=0), "v": Hd.T @ dy,
                "b": np.asarray(dy.sum())}

    def copy(self) -> "Head":
        return Head({k: v.copy() for k, v in self.params.items()})

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in self.params.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "Head":
        return cls({k: np.array(v, dtype=float) for k, v in obj.items()})


@dataclass
class ScprmModel:
    encoder_cfg: EncoderConfig
    risk_head: Head
    schema_head: Head
    prompt: str = RISK_PROMPT
    epsilon: float = 1e-6
    variant: str = "full"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        d = self.encoder_cfg.dimension
        if self.risk_head.dim != d or self.schema_head.dim != d:
            raise ValueError("head input sizes must equal the encoder dimension")

    @classmethod
    def initial(cls, encoder_cfg: EncoderConfig | None = None, *, depth: int = 0,
                hidden: int = 32, seed: int = 0, variant: str = "full",
                epsilon: float = 1e-6, prompt: str = RISK_PROMPT,
                init_scale: float = 0.03, risk_bias: float = 0.0,
                schema_bias: float = 0.0) -> "ScprmModel":
        encoder_cfg = encoder_cfg or EncoderConfig()
        rng = np.random.default_rng(seed)
        d = encoder_cfg.dimension
        risk = Head.init(d, depth, hidden, rng, init_scale, bias=risk_bias)
        schema = Head.init(d, depth, hidden, rng, init_scale, bias=schema_bias)
        return cls(encoder_cfg, risk, schema, prompt=prompt, epsilon=epsilon, variant=variant)

    def with_variant(self, variant: str) -> "ScprmModel":
        return replace(self, variant=variant)

    def copy(self) -> "ScprmModel":
        return replace(self, risk_head=self.risk_head.copy(), schema_head=self.schema_head.copy())

    def clamp(self, p):
        return np.clip(p, self.epsilon, 1.0 - self.epsilon)

    # -- features ---------------------------------------------------------
    def risk_features(self, q: str, t: Trajectory, g: KnowledgeGraph) -> np.ndarray:
        return encode(self.encoder_cfg, render_text(self.prompt, q, t, g))

    def schema_features(self, q: str, t: Trajectory, g: KnowledgeGraph) -> np.ndarray:
        return encode(self.encoder_cfg, q) - encode(self.encoder_cfg, render_path(t, g))

    def to_json(self) -> dict:
        return {
            "encoder": self.encoder_cfg.to_json(),
            "risk_head": self.risk_head.to_json(),
            "schema_head": self.schema_head.to_json(),
            "prompt": self.prompt,
            "variant": self.variant,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScprmModel":
        return cls(
            encoder_cfg=EncoderConfig.from_json(obj["encoder"]),
            risk_head=Head.from_json(obj["risk_head"]),
            schema_head=Head.from_json(obj["schema_head"]),
            prompt=obj["prompt"],
            epsilon=float(obj["epsilon"]),
            variant=obj["variant"],
        )


def save_model(m: ScprmModel, path) -> None:
    # json emits repr() floats, which round-trip bit-exactly
    atomic_write_text(path, json.dumps(m.to_json(), sort_keys=True) + "\n")


def load_model(path) -> ScprmModel:
    return ScprmModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- scoring ---------------------------------------------------------------

def step_risk(m: ScprmModel, q: str, t: Trajectory, g: KnowledgeGraph) -> float:
    """Risk p_k of the last step of ``t``, clamped to [eps, 1 - eps]."""
    return float(m.clamp(sigmoid(m.risk_head(m.risk_features(q, t, g)))))


def cumulative_reward(p: Sequence[float]) -> float:
    """G = sum_t log(1 - p_t), accumulated left to right."""
    g = 0.0
    for pt in p:
        if not 0.0 <= pt < 1.0:
            raise ValueError(f"step risk must lie in [0, 1), got {pt}")
        g = g + math.log1p(-pt)
    return g


def future_success(m: ScprmModel, q: str, t: Trajectory, g: KnowledgeGraph) -> float:
    return float(m.clamp(sigmoid(m.schema_head(m.schema_features(q, t, g)))))


@dataclass(frozen=True)
class PathReward:
    p: tuple[float, ...]
    G: float
    w: float
    H: float
    F: float
    variant: str = "full"


def combine(variant: str, G: float, H: float, safety_sum: float, k: int) -> float:
    if variant == "full":
        return G + H
    if variant == "wo_cr":
        return H
    if variant == "wo_fr":
        return G
    if k == 0:
        raise InvalidTrajectoryError("additive PRM reward is undefined for an empty trajectory")
    return safety_sum / k


def path_reward(m: ScprmModel, q: str, t: Trajectory, g: KnowledgeGraph) -> PathReward:
    t.validate(g)
    risks = tuple(step_risk(m, q, t.prefix(j), g) for j in range(1, len(t) + 1))
    G = cumulative_reward(risks)
    w = future_success(m, q, t, g)
    H = math.log(w)
    safety = 0.0
    for pt in risks:
        safety += 1.0 - pt
    return PathReward(risks, G, w, H, combine(m.variant, G, H, safety, len(t)), m.variant)


def additive_prm_reward(m: ScprmModel, q: str, t: Trajectory, g: KnowledgeGraph) -> float:
    """Mean step safety: the additive baseline that lets safe steps offset a risky one."""
    if len(t) == 0:
        raise InvalidTrajectoryError("additive PRM reward needs at least one step")
    t.validate(g)
    risks = [step_risk(m, q, t.prefix(j), g) for j in range(1, len(t) + 1)]
    return sum(1.0 - p for p in risks) / len(risks)
