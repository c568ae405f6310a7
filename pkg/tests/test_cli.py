import json
from pathlib import Path

import pytest

from scprm.cli import KEYS, main, resolve_config
from scprm.errors import ConfigError

SMALL = {"n_entities": 60, "branching": 4, "depth": 3, "n_queries": 10, "seed": 3,
         "dimension": 32, "epochs": 2, "budget": 40, "workers": 1}


def run(tmp_path, *argv, cfg=None, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg if cfg is not None else {**SMALL, "out_dir": str(tmp_path)}))
    return main([argv[0], *argv[1:], "--config", str(path)])


@pytest.fixture()
def data(tmp_path):
    assert run(tmp_path, "synth") == 0
    return tmp_path


def test_synth_writes_small_identical_files(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        assert run(d, "synth") == 0
    names = ["triples.tsv", "types.tsv", "queries.jsonl", "manifest-synth.json"]
    for n in names:
        assert (a / n).read_bytes().replace(str(a).encode(), b"X") == \
            (b / n).read_bytes().replace(str(b).encode(), b"X")
    assert sum((a / n).stat().st_size for n in names) < 1_000_000
    assert "10 queries" in capsys.readouterr().out


def test_default_synth_fits_in_a_megabyte(tmp_path):
    assert main(["synth", "--out-dir", str(tmp_path), "--seed", "7"]) == 0
    size = sum(p.stat().st_size for p in tmp_path.iterdir())
    assert size <= 1_000_000


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    code = run(tmp_path, "synth", cfg={"out_dir": str(tmp_path), "bugdet": 3})
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert "bugdet" in err["message"]


def test_bad_value_is_a_config_error(tmp_path, capsys):
    assert run(tmp_path, "synth", cfg={"out_dir": str(tmp_path), "budget": "many"}) == 2
    assert "budget" in json.loads(capsys.readouterr().err)["message"]


def test_errors_are_one_json_line_with_nonzero_exit(tmp_path, capsys):
    code = main(["train", "--out-dir", str(tmp_path), "--data-dir", str(tmp_path / "nope")])
    assert code != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    obj = json.loads(err[0])
    assert set(obj) == {"error", "message"}


def test_precedence_defaults_file_env_flags(tmp_path, monkeypatch):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"budget": 7, "out_dir": "from_file", "top_k": 2}))
    cfg = resolve_config(str(f), {})
    assert cfg["budget"] == 7 and cfg["c"] == KEYS["c"][1] and cfg["out_dir"] == "from_file"
    monkeypatch.setenv("SCPRM_OUT_DIR", str(tmp_path / "env"))
    cfg = resolve_config(str(f), {"top_k": 5})
    assert cfg["out_dir"] == str(tmp_path / "env")
    assert cfg["top_k"] == 5
    assert resolve_config(str(f), {"out_dir": "flag"})["out_dir"] == "flag"
    with pytest.raises(ConfigError):
        f.write_text("[1, 2]")
        resolve_config(str(f), {})


def test_env_var_redirects_outputs(tmp_path, monkeypatch):
    target = tmp_path / "elsewhere"
    monkeypatch.setenv("SCPRM_OUT_DIR", str(target))
    cfg = {k: v for k, v in SMALL.items()}
    assert run(tmp_path, "synth", cfg=cfg) == 0
    assert (target / "triples.tsv").exists()
    assert not (tmp_path / "triples.tsv").exists()


def _pipeline(d: Path):
    base = {**SMALL, "out_dir": str(d), "data_dir": str(d)}
    for argv in (["synth"], ["split"], ["pairs"]):
        assert run(d, *argv, cfg=base) == 0
    base.update(folds_file=str(d / "folds.json"), holdout_fold=0)
    for argv in (["train"], ["eval", "pairwise"]):
        assert run(d, *argv, cfg=base) == 0
    pairwise = json.loads((d / "report.json").read_text())
    for argv in (["search"], ["eval", "hits"]):
        assert run(d, *argv, cfg=base) == 0
    return pairwise, json.loads((d / "report.json").read_text())


def test_train_eval_round_trip(tmp_path):
    pairwise, hits = _pipeline(tmp_path)
    rep = pairwise["reports"][0]
    folds = json.loads((tmp_path / "folds.json").read_text())["folds"]
    assert rep["metric"] == "pairwise_accuracy" and 0.0 <= rep["value"] <= 1.0
    held = set(folds[0])
    outcomes = [json.loads(x) for x in (tmp_path / "outcomes.jsonl").read_text().splitlines()]
    assert hits["reports"][0]["metric"] == "hits@1"
    assert hits["reports"][0]["n"] == 10
    model = json.loads((tmp_path / "model.json").read_text())
    assert model["encoder"]["dimension"] == 32
    history = (tmp_path / "history.csv").read_text().splitlines()
    assert len(history) == 1 + SMALL["epochs"]
    for name in ("synth", "split", "pairs", "train", "eval-pairwise", "search", "eval-hits"):
        man = json.loads((tmp_path / f"manifest-{name}.json").read_text())
        assert man["seed"] == SMALL["seed"]
        assert man["version"].startswith("scprm ")
    assert held and all(o["query_id"] for o in outcomes)


def test_pairwise_eval_uses_only_held_out_queries(tmp_path):
    _pipeline(tmp_path)
    base = {**SMALL, "out_dir": str(tmp_path), "data_dir": str(tmp_path),
            "folds_file": str(tmp_path / "folds.json"), "holdout_fold": 0}
    assert run(tmp_path, "eval", "pairwise", cfg=base) == 0
    held = set(json.loads((tmp_path / "folds.json").read_text())["folds"][0])
    outcomes = [json.loads(x) for x in (tmp_path / "outcomes.jsonl").read_text().splitlines()]
    assert outcomes and {o["query_id"] for o in outcomes} <= held


def test_budget_one_gives_at_most_one_path(data):
    base = {**SMALL, "out_dir": str(data), "data_dir": str(data), "budget": 1, "top_k": 3}
    assert run(data, "pairs", cfg=base) == 0
    assert run(data, "train", cfg={**base, "epochs": 1}) == 0
    assert run(data, "search", cfg=base) == 0
    rows = [json.loads(x) for x in (data / "results.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    assert all(len(r["topk"]) <= 1 for r in rows)


def test_pipeline_is_byte_identical_on_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        _pipeline(d)
    files = sorted(p.name for p in a.iterdir() if p.name != "run.json")
    assert files == sorted(p.name for p in b.iterdir() if p.name != "run.json")
    for name in files:
        assert (a / name).read_bytes().replace(str(a).encode(), b"X") == \
            (b / name).read_bytes().replace(str(b).encode(), b"X"), name


def test_sweep_and_ablate_write_tables(data):
    base = {**SMALL, "out_dir": str(data), "data_dir": str(data), "epochs": 1,
            "rhos": "0,0.5", "seeds": "0", "variants": "full,wo_cr"}
    assert run(data, "sweep", cfg=base) == 0
    rows = json.loads((data / "report.json").read_text())["rows"]
    assert [r["rho"] for r in rows] == [0.0, 0.5]
    assert "pairwise_accuracy" in (data / "report.txt").read_text()
    assert run(data, "ablate", cfg=base) == 0
    rows = json.loads((data / "report.json").read_text())["rows"]
    assert [r["variant"] for r in rows] == ["full", "wo_cr"]


def test_unknown_variant_fails_cleanly(data, capsys):
    base = {**SMALL, "out_dir": str(data), "data_dir": str(data), "variants": "full,bogus"}
    assert run(data, "ablate", cfg=base) == 1
    assert "bogus" in json.loads(capsys.readouterr().err)["message"]


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "scprm" in capsys.readouterr().out


def test_cli_stages_reproduce_library_pipeline(tmp_path):
    import numpy as np
    from scprm.encoder import EncoderConfig
    from scprm.evaluation import PipelineConfig, run_pipeline
    from scprm.graph import load_graph, load_queries
    from scprm.reward import load_model
    from scprm.search import SearchConfig
    from scprm.training import TrainConfig

    pairwise, hits = _pipeline(tmp_path)
    g = load_graph(tmp_path / "triples.tsv", tmp_path / "types.tsv")
    queries = load_queries(tmp_path / "queries.jsonl")
    cfg = PipelineConfig(encoder=EncoderConfig(dimension=32), train=TrainConfig(epochs=2),
                         search=SearchConfig(budget=40, top_k=1))
    out = run_pipeline(g, queries, cfg, seed=SMALL["seed"])
    m = load_model(tmp_path / "model.json")
    for name in ("risk_head", "schema_head"):
        ours, theirs = getattr(m, name).params, getattr(out.model, name).params
        for k in ours:
            np.testing.assert_array_equal(ours[k], theirs[k])
    assert pairwise["reports"][0]["value"] == out.pairwise.value
    assert hits["reports"][0]["value"] == out.hits.value
