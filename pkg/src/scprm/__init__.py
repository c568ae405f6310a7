"""Step-risk and schema-aware path rewards for knowledge-graph reasoning with MCTS."""
from .encoder import EncoderConfig, encode, frozen_schema_encode
from .graph import KnowledgeGraph, QueryRecord, QuerySchema, Trajectory, load_graph
from .reward import ScprmModel, path_reward
from .search import SearchConfig, search
from .training import PathPair, TrainConfig, build_pairs, train

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig", "encode", "frozen_schema_encode", "KnowledgeGraph", "QueryRecord",
    "QuerySchema", "Trajectory", "load_graph", "ScprmModel", "path_reward", "SearchConfig",
    "search", "PathPair", "TrainConfig", "build_pairs", "train", "__version__",
]
