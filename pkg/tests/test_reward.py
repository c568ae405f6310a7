import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scprm.encoder import EncoderConfig
from scprm.errors import InvalidTrajectoryError
from scprm.graph import Trajectory
from scprm.reward import (Head, ScprmModel, additive_prm_reward, combine, cumulative_reward,
                          future_success, load_model, path_reward, save_model, sigmoid, step_risk)

from conftest import randomize
from oracles import reward_by_product

ENC = EncoderConfig(dimension=32)
Q = "Which mirna is reached from disease_a through gene?"


@pytest.fixture(params=[0, 1], ids=["affine", "hidden"])
def model(request):
    m = ScprmModel.initial(ENC, depth=request.param, seed=3)
    return randomize(m, np.random.default_rng(request.param + 10))


def test_zero_heads_give_one_half(tiny, gold):
    m = ScprmModel.initial(ENC)
    assert step_risk(m, Q, gold, tiny) == 0.5
    assert future_success(m, Q, gold, tiny) == 0.5
    r = path_reward(m, Q, gold.prefix(1), tiny)
    assert r.F == pytest.approx(2 * math.log(0.5), abs=1e-12)
    assert r.F == pytest.approx(-1.386294, abs=1e-6)


def test_schema_bias_sets_constant_w(tiny, gold):
    m = ScprmModel.initial(ENC, schema_bias=2.0)
    assert future_success(m, Q, Trajectory(0), tiny) == pytest.approx(1 / (1 + math.exp(-2.0)))


def test_matches_product_oracle(model, tiny, gold):
    for t in (gold.prefix(1), gold, Trajectory(0, (("speculated", 3), ("retracted", 1)))):
        r = path_reward(model, Q, t, tiny)
        ps, prod, w = reward_by_product(model, Q, t, tiny)
        assert r.p == pytest.approx(ps, abs=1e-14)
        assert r.w == pytest.approx(w, abs=1e-14)
        assert math.exp(r.F) == pytest.approx(prod * w, abs=1e-12)


def test_variants_pick_terms(model, tiny, gold):
    full = path_reward(model, Q, gold, tiny)
    assert path_reward(model.with_variant("wo_cr"), Q, gold, tiny).F == full.H
    assert path_reward(model.with_variant("wo_fr"), Q, gold, tiny).F == full.G
    add = path_reward(model.with_variant("additive_prm"), Q, gold, tiny).F
    assert add == pytest.approx(additive_prm_reward(model, Q, gold, tiny), abs=1e-15)


def test_anchor_only_trajectory(model, tiny):
    r = path_reward(model, Q, Trajectory(0), tiny)
    assert r.p == () and r.G == 0.0 and r.F == r.H
    with pytest.raises(InvalidTrajectoryError):
        additive_prm_reward(model, Q, Trajectory(0), tiny)
    with pytest.raises(InvalidTrajectoryError):
        combine("additive_prm", 0.0, 0.0, 0.0, 0)


def test_invalid_path_rejected(model, tiny):
    with pytest.raises(InvalidTrajectoryError):
        path_reward(model, Q, Trajectory(0, (("targets", 2),)), tiny)


def test_unknown_variant():
    with pytest.raises(ValueError):
        ScprmModel.initial(ENC, variant="nope")


def test_cumulative_reward_examples():
    assert cumulative_reward([]) == 0.0
    assert cumulative_reward([0.5]) == math.log(0.5)
    with pytest.raises(ValueError):
        cumulative_reward([1.0])
    with pytest.raises(ValueError):
        cumulative_reward([-0.1])


def test_additive_examples():
    assert combine("additive_prm", 0.0, 0.0, 0.9 + 0.9, 2) == pytest.approx(0.9)
    assert combine("additive_prm", 0.0, 0.0, 0.1 + 0.95 + 0.95, 3) == pytest.approx(0.666667, abs=1e-6)


def test_clamp_keeps_log_finite(tiny, gold):
    m = ScprmModel.initial(ENC)
    m.risk_head.params["b"] = np.asarray(1e3)
    m.schema_head.params["b"] = np.asarray(-1e3)
    r = path_reward(m, Q, gold, tiny)
    assert r.p == (1 - 1e-6, 1 - 1e-6) and r.w == 1e-6
    assert math.isfinite(r.F)


def test_sigmoid_stable():
    assert sigmoid(800.0) == 1.0 and sigmoid(-800.0) == 0.0
    assert sigmoid(0.0) == 0.5


def test_model_round_trip_is_bit_exact(tmp_path, model, tiny, gold):
    save_model(model, tmp_path / "m.json")
    m2 = load_model(tmp_path / "m.json")
    for h1, h2 in ((model.risk_head, m2.risk_head), (model.schema_head, m2.schema_head)):
        for k in h1.params:
            assert np.array_equal(h1.params[k], h2.params[k])
    assert path_reward(m2, Q, gold, tiny) == path_reward(model, Q, gold, tiny)


def test_head_shapes_and_errors():
    h = Head.init(16, depth=1, hidden=8, bias=0.5)
    assert h.params["A"].shape == (8, 16) and float(h.params["b"]) == 0.5
    y, _ = h.forward(np.zeros((3, 16)))
    assert np.allclose(y, 0.5)
    with pytest.raises(ValueError):
        Head.init(16, depth=2)
    with pytest.raises(ValueError):
        Head({"w": np.array([np.nan]), "b": np.zeros(())})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 0.999999), max_size=20))
def test_g_is_additive_and_non_increasing(ps):
    prev = 0.0
    for k in range(1, len(ps) + 1):
        gk = cumulative_reward(ps[:k])
        assert gk == prev + math.log1p(-ps[k - 1])
        assert gk <= prev
        prev = gk


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.9, 0.999))
def test_risky_step_veto(seed, p_risky):
    rng = np.random.default_rng(seed)
    ps = list(rng.uniform(1e-6, 0.5, size=rng.integers(0, 5)))
    ps.insert(int(rng.integers(0, len(ps) + 1)), p_risky)
    w = float(rng.uniform(1e-6, 1 - 1e-6))
    F = combine("full", cumulative_reward(ps), math.log(w), 0.0, len(ps))
    assert F <= math.log(0.1) + math.log(w) + 1e-12
    assert F < math.log(0.1)
