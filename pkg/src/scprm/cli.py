"""Command-line entry point: ``scprm <command> [--config run.json] [--key value ...]``.

Configuration is a flat JSON object.  Values are resolved as built-in
defaults, then the config file, then ``SCPRM_OUT_DIR`` for the output
directory, then explicit flags.  Every command writes
``manifest-<command>.json`` next to its outputs so the run can be repeated
exactly.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import random
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .encoder import EncoderConfig
from .errors import ConfigError, ScprmError
from .evaluation import (DEFAULT_RHOS, PipelineConfig, ablation_run, format_table, hits_at_k,
                         kfold_split, noise_sweep, noisy_queries, pairwise_accuracy, stage_seeds,
                         write_report)
from .graph import load_graph, load_queries, save_graph, save_queries
from .iohelp import atomic_write_text, read_json, read_jsonl, write_json, write_jsonl
from .reward import VARIANTS, ScprmModel, load_model, save_model
from .search import SearchConfig, search_many
from .synth import synth_graph
from .training import TrainConfig, build_pairs, load_pairs, save_history, save_pairs, train

log = logging.getLogger("scprm")

OUT_DIR_ENV = "SCPRM_OUT_DIR"


def _floats(s):
    return [float(x) for x in s.split(",")] if isinstance(s, str) else [float(x) for x in s]


def _ints(s):
    return [int(x) for x in s.split(",")] if isinstance(s, str) else [int(x) for x in s]


def _strs(s):
    return [x.strip() for x in s.split(",")] if isinstance(s, str) else [str(x) for x in s]


# key -> (parser, default, help)
KEYS = {
    "seed": (int, 0, "seed for every stochastic step"),
    "out_dir": (str, "runs", "output directory"),
    "data_dir": (str, None, "directory holding triples.tsv, types.tsv, queries.jsonl"),
    "triples": (str, None, "triples file (default: <data_dir>/triples.tsv)"),
    "types": (str, None, "entity types file (default: <data_dir>/types.tsv)"),
    "queries": (str, None, "queries file (default: <data_dir>/queries.jsonl)"),
    "pairs": (str, None, "pairs file (default: <out_dir>/pairs.jsonl)"),
    "model": (str, None, "model file (default: <out_dir>/model.json)"),
    "results": (str, None, "search results file (default: <out_dir>/results.jsonl)"),
    "folds_file": (str, None, "fold assignment written by 'split'"),
    "holdout_fold": (int, -1, "fold left out of training and used by 'eval pairwise' (-1: none)"),
    # synthetic data
    "n_entities": (int, 200, None),
    "branching": (int, 4, None),
    "depth": (int, 4, "gold path length cycles through 1..depth"),
    "n_queries": (int, 50, None),
    "n_distractors": (int, 3, None),
    "parallel_prob": (float, 0.3, None),
    # pairs
    "per_query": (int, 4, "pairs built per query"),
    # encoder
    "dimension": (int, 256, "encoder dimension d"),
    "hash_seed": (int, 0, None),
    "max_tokens": (int, 512, None),
    # model
    "head_depth": (int, 1, "0: affine heads, 1: one tanh hidden layer"),
    "hidden": (int, 32, None),
    "init_scale": (float, PipelineConfig.init_scale, "std of the hidden-layer start weights"),
    "risk_bias": (float, PipelineConfig.risk_bias, "initial risk-head output bias"),
    "schema_bias": (float, PipelineConfig.schema_bias, "initial future-head output bias"),
    "epsilon": (float, 1e-6, None),
    "variant": (str, "full", "/".join(VARIANTS)),
    # training
    "margin": (float, 0.3, None),
    "lam": (float, 1.0, None),
    "lr": (float, 2e-4, None),
    "epochs": (int, 30, None),
    "batch_size": (int, 1, None),
    "weight_decay": (float, 0.01, None),
    "beta1": (float, 0.9, None),
    "beta2": (float, 0.999, None),
    "adam_eps": (float, 1e-8, None),
    "future_supervision": (str, "per_step", "per_step or final"),
    "reduction": (str, "sum", "sum or mean"),
    "rho": (float, 0.0, "schema-noise ratio for training queries"),
    # search
    "c": (float, math.sqrt(2.0), "UCB exploration constant"),
    "budget": (int, 500, None),
    "max_depth": (int, 4, None),
    "top_k": (int, 3, None),
    "workers": (int, None, "worker processes (default: available cores)"),
    # evaluation
    "k": (int, 1, "k for Hits@k"),
    "folds": (int, 5, None),
    "rhos": (_floats, list(DEFAULT_RHOS), "comma-separated noise ratios"),
    "seeds": (_ints, [0, 1, 2], "comma-separated seeds"),
    "variants": (_strs, list(VARIANTS), "comma-separated reward variants"),
}


def resolve_config(file_path: str | None, flags: dict) -> dict:
    cfg = {k: v[1] for k, v in KEYS.items()}
    if file_path:
        try:
            loaded = read_json(file_path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {file_path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                cfg[key] = KEYS[key][0](value) if value is not None else None
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for config key {key!r}: {value!r}") from None
    if os.environ.get(OUT_DIR_ENV):
        cfg["out_dir"] = os.environ[OUT_DIR_ENV]
    cfg.update(flags)
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    return cfg


def _path(cfg: dict, key: str, base_key: str, name: str) -> Path:
    if cfg[key]:
        return Path(cfg[key])
    base = cfg[base_key]
    if base is None:
        raise ConfigError(f"set {key!r} or {base_key!r}")
    return Path(base) / name


def _graph(cfg):
    return load_graph(_path(cfg, "triples", "data_dir", "triples.tsv"),
                      _path(cfg, "types", "data_dir", "types.tsv"))


def _queries(cfg):
    return load_queries(_path(cfg, "queries", "data_dir", "queries.jsonl"))


def _out(cfg) -> Path:
    return Path(cfg["out_dir"])


def _encoder_cfg(cfg) -> EncoderConfig:
    return EncoderConfig(cfg["dimension"], cfg["hash_seed"], cfg["max_tokens"])


def _train_cfg(cfg) -> TrainConfig:
    return TrainConfig(margin=cfg["margin"], lam=cfg["lam"], lr=cfg["lr"], epochs=cfg["epochs"],
                       batch_size=cfg["batch_size"], seed=cfg["seed"],
                       weight_decay=cfg["weight_decay"], beta1=cfg["beta1"], beta2=cfg["beta2"],
                       adam_eps=cfg["adam_eps"], future_supervision=cfg["future_supervision"],
                       reduction=cfg["reduction"])


def _search_cfg(cfg, top_k=None) -> SearchConfig:
    return SearchConfig(c=cfg["c"], budget=cfg["budget"], max_depth=cfg["max_depth"],
                        top_k=top_k or cfg["top_k"])


def _pipeline_cfg(cfg) -> PipelineConfig:
    return PipelineConfig(pairs_per_query=cfg["per_query"], folds=cfg["folds"],
                          holdout_fold=max(cfg["holdout_fold"], 0), head_depth=cfg["head_depth"],
                          hidden=cfg["hidden"], init_scale=cfg["init_scale"],
                          risk_bias=cfg["risk_bias"], schema_bias=cfg["schema_bias"],
                          hits_k=cfg["k"], workers=cfg["workers"], encoder=_encoder_cfg(cfg),
                          train=_train_cfg(cfg), search=_search_cfg(cfg, max(cfg["k"], 1)))


def _held_out(cfg) -> set[str]:
    if cfg["holdout_fold"] < 0:
        return set()
    if not cfg["folds_file"]:
        raise ConfigError("'holdout_fold' needs 'folds_file' (see the split command)")
    folds = read_json(cfg["folds_file"])["folds"]
    if cfg["holdout_fold"] >= len(folds):
        raise ConfigError(f"holdout_fold {cfg['holdout_fold']} but only {len(folds)} folds")
    return set(folds[cfg["holdout_fold"]])


def _manifest(cfg: dict, command: str) -> None:
    # no timestamps or host data: reruns must be byte-identical
    cfg = {k: v for k, v in cfg.items() if k != "workers"}
    name = "manifest-" + command.replace(" ", "-") + ".json"
    write_json(_out(cfg) / name,
               {"command": command, "config": cfg, "seed": cfg["seed"],
                "version": f"scprm {__version__}"})


# -- commands -----------------------------------------------------------------

def cmd_synth(cfg):
    g, queries = synth_graph(cfg["seed"], cfg["n_entities"], cfg["branching"], cfg["depth"],
                             cfg["n_queries"], cfg["n_distractors"], cfg["parallel_prob"])
    out = _out(cfg)
    save_graph(g, out / "triples.tsv", out / "types.tsv")
    save_queries(queries, out / "queries.jsonl")
    print(f"wrote {g.n_entities} entities, {len(g.triples)} triples, {len(queries)} queries to {out}")


def cmd_pairs(cfg):
    g, queries = _graph(cfg), _queries(cfg)
    pairs = build_pairs(g, queries, cfg["per_query"],
                        random.Random(stage_seeds(cfg["seed"])["pairs"]))
    path = _path(cfg, "pairs", "out_dir", "pairs.jsonl")
    save_pairs(pairs, g, path)
    print(f"wrote {len(pairs)} pairs to {path}")


def cmd_train(cfg):
    g, queries = _graph(cfg), _queries(cfg)
    pairs = load_pairs(_path(cfg, "pairs", "out_dir", "pairs.jsonl"), g)
    held = _held_out(cfg)
    pairs = [p for p in pairs if p.query_id not in held]
    if not pairs:
        raise ConfigError("no training pairs left after removing the held-out fold")
    sd = stage_seeds(cfg["seed"])
    train_q = noisy_queries(sorted((q for q in queries if q.id not in held), key=lambda q: q.id),
                            cfg["rho"], random.Random(sd["noise"]), g.entity_types())
    m0 = ScprmModel.initial(_encoder_cfg(cfg), depth=cfg["head_depth"], hidden=cfg["hidden"],
                            seed=sd["model"], variant=cfg["variant"], epsilon=cfg["epsilon"],
                            init_scale=cfg["init_scale"], risk_bias=cfg["risk_bias"],
                            schema_bias=cfg["schema_bias"])
    m, history = train(m0, pairs, {q.id: q for q in train_q}, g,
                       replace(_train_cfg(cfg), seed=sd["train"]))
    path = _path(cfg, "model", "out_dir", "model.json")
    save_model(m, path)
    save_history(history, _out(cfg) / "history.csv")
    last = history[-1] if history else {"total": float("nan")}
    print(f"trained on {len(pairs)} pairs; final mean loss {last['total']:.6f}; model at {path}")


def cmd_search(cfg):
    g, queries = _graph(cfg), _queries(cfg)
    m = load_model(_path(cfg, "model", "out_dir", "model.json"))
    if cfg["variant"] != m.variant:
        m = m.with_variant(cfg["variant"])
    scfg = _search_cfg(cfg)
    results = search_many(m, g, queries, scfg, cfg["workers"])
    path = _path(cfg, "results", "out_dir", "results.jsonl")
    write_jsonl(path, (r.to_json(g, scfg.top_k) for r in results))
    print(f"searched {len(results)} queries; results at {path}")


def cmd_eval(cfg, what: str):
    queries = _queries(cfg)
    if what == "pairwise":
        g = _graph(cfg)
        m = load_model(_path(cfg, "model", "out_dir", "model.json"))
        pairs = load_pairs(_path(cfg, "pairs", "out_dir", "pairs.jsonl"), g)
        held = _held_out(cfg)
        if held:
            pairs = [p for p in pairs if p.query_id in held]
        report = pairwise_accuracy(m, pairs, {q.id: q for q in queries}, g,
                                   {"holdout_fold": cfg["holdout_fold"]})
    else:
        rows = read_jsonl(_path(cfg, "results", "out_dir", "results.jsonl"))
        results = {r["query_id"]: [t["answer"] for t in r["topk"]] for r in rows}
        report = hits_at_k(results, {q.id: q.answers for q in queries}, cfg["k"])
    write_report(_out(cfg), [report])
    print(f"{report.metric} = {report.value:.4f} over {report.n} items")


def cmd_sweep(cfg):
    g, queries = _graph(cfg), _queries(cfg)
    rows = noise_sweep(g, queries, _pipeline_cfg(cfg), cfg["rhos"], cfg["seeds"])
    hk = f"hits@{cfg['k']}"
    table = format_table(rows, ["rho", "pairwise_accuracy", "pairwise_accuracy_std", hk, hk + "_std"])
    write_json(_out(cfg) / "report.json", {"rows": rows})
    atomic_write_text(_out(cfg) / "report.txt", table)
    print(table, end="")


def cmd_ablate(cfg):
    g, queries = _graph(cfg), _queries(cfg)
    runs = ablation_run(g, queries, _pipeline_cfg(cfg), cfg["seed"], cfg["variants"])
    rows = [{"variant": v, "pairwise_accuracy": r.pairwise.value, r.hits.metric: r.hits.value}
            for v, r in runs.items()]
    table = format_table(rows, ["variant", "pairwise_accuracy", f"hits@{cfg['k']}"])
    reports = [rep for r in runs.values() for rep in (r.pairwise, r.hits)]
    write_report(_out(cfg), reports, table, {"rows": rows})
    print(table, end="")


def cmd_split(cfg):
    queries = _queries(cfg)
    folds = kfold_split(sorted(q.id for q in queries), cfg["folds"],
                        stage_seeds(cfg["seed"])["split"])
    write_json(_out(cfg) / "folds.json", {"folds": folds, "seed": cfg["seed"]})
    print("fold sizes: " + " ".join(str(len(f)) for f in folds))


COMMANDS = {"synth": cmd_synth, "pairs": cmd_pairs, "train": cmd_train, "search": cmd_search,
            "sweep": cmd_sweep, "ablate": cmd_ablate, "split": cmd_split}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (typ, _, helptext) in KEYS.items():
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=typ,
                            default=argparse.SUPPRESS, help=helptext)
    p = argparse.ArgumentParser(
        prog="scprm", description="Step-risk and schema-aware path rewards with MCTS over a knowledge graph.")
    p.add_argument("--version", action="version", version=f"scprm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("synth", "pairs", "train", "search"):
        sub.add_parser(name, parents=[common])
    ev = sub.add_parser("eval", parents=[common])
    ev.add_argument("what", choices=("pairwise", "hits"))
    for name in ("sweep", "ablate", "split"):
        sub.add_parser(name, parents=[common])
    return p


def _error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    ns = vars(args)
    command, config_path, verbose = ns.pop("command"), ns.pop("config"), ns.pop("verbose")
    what = ns.pop("what", None)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(config_path, ns)
        if command == "eval":
            cmd_eval(cfg, what)
        else:
            COMMANDS[command](cfg)
        _manifest(cfg, command if what is None else f"eval {what}")
    except ConfigError as exc:
        _error("ConfigError", str(exc))
        return 2
    except (ScprmError, ValueError, KeyError, OSError) as exc:
        _error(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
