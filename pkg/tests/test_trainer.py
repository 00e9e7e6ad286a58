import math

import numpy as np
import pytest

from biohicl.config import TrainConfig, WorkbenchConfig
from biohicl.encoder import EncoderParams, init_params, load_checkpoint, save_checkpoint
from biohicl.synthetic import random_hierarchy, synthetic_corpus
from biohicl.trainer import (OptimizerState, adamw_step, format_table, prepare, run_ablation_suite, train,
                             validation_batches, validation_loss)


def scalar_adamw(theta, grads, lr, b1, b2, eps, wd):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps) - lr * wd * theta
    return theta


def scalar_params(value):
    return EncoderParams(np.zeros((1, 1)), np.array([[value]]))


@pytest.fixture(scope="module")
def small():
    h = random_hierarchy(80, seed=5)
    docs = synthetic_corpus(h, 120, seed=6)
    cfg = WorkbenchConfig().replace(train={"lr": 1e-2, "epochs": 3})
    return docs, h, cfg


@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_adamw_matches_scalar_oracle(wd):
    cfg = TrainConfig(lr=0.05, weight_decay=wd)
    grads = [0.3, -1.2, 0.7, 0.0, 2.5]
    p = scalar_params(0.8)
    state = OptimizerState.for_params(p)
    for g in grads:
        adamw_step(p, {"W": np.array([[g]])}, state, cfg)
    expected = scalar_adamw(0.8, grads, 0.05, 0.9, 0.999, 1e-8, wd)
    assert p.W[0, 0] == pytest.approx(expected, abs=1e-14)
    assert state.step == len(grads)


def test_first_step_is_lr_sized():
    p = scalar_params(1.0)
    adamw_step(p, {"W": np.array([[4.0]])}, OptimizerState.for_params(p), TrainConfig(lr=0.01))
    assert p.W[0, 0] == pytest.approx(1.0 - 0.01 * 4.0 / (4.0 + 1e-8), abs=1e-15)


def test_zero_gradient_keeps_params_and_decays_moments():
    p = scalar_params(0.5)
    state = OptimizerState.for_params(p)
    cfg = TrainConfig(lr=0.1)
    adamw_step(p, {"W": np.array([[1.0]])}, state, cfg)
    after_one = p.W.copy()
    m, v = state.m["W"].copy(), state.v["W"].copy()
    p2 = scalar_params(0.5)
    s2 = OptimizerState({"W": np.zeros((1, 1))}, {"W": np.zeros((1, 1))})
    adamw_step(p2, {"W": np.zeros((1, 1))}, s2, cfg)
    assert p2.W[0, 0] == 0.5
    adamw_step(p, {"W": np.zeros((1, 1))}, state, cfg)
    assert state.m["W"][0, 0] == pytest.approx(0.9 * m[0, 0])
    assert state.v["W"][0, 0] == pytest.approx(0.999 * v[0, 0])
    assert after_one[0, 0] != 0.5


def test_weight_decay_is_decoupled():
    g = {"W": np.array([[0.7]])}
    a, b = scalar_params(2.0), scalar_params(2.0)
    adamw_step(a, g, OptimizerState.for_params(a), TrainConfig(lr=0.01, weight_decay=0.0))
    adamw_step(b, g, OptimizerState.for_params(b), TrainConfig(lr=0.01, weight_decay=0.01))
    assert a.W[0, 0] - b.W[0, 0] == pytest.approx(0.01 * 0.01 * 2.0, abs=1e-15)


def test_gradient_shape_mismatch():
    p = scalar_params(1.0)
    with pytest.raises(ValueError):
        adamw_step(p, {"A": np.zeros((1, 1))}, OptimizerState.for_params(p), TrainConfig())


def test_zero_epochs_returns_init(small):
    docs, h, cfg = small
    cfg = cfg.replace(train={"epochs": 0})
    res = train(docs, h, cfg)
    assert res.best_epoch == 0
    assert res.best_params.allclose(init_params(cfg.encoder))
    prep = prepare(docs, h, cfg)
    val = validation_loss(validation_batches(prep.val_pairs, cfg), prep.pooled, init_params(cfg.encoder), cfg)
    assert res.best_validation_loss == val
    assert res.validation_losses == [val]


def test_training_is_deterministic(small, tmp_path):
    docs, h, cfg = small
    a, b = train(docs, h, cfg), train(docs, h, cfg)
    assert a.best_epoch == b.best_epoch
    assert a.validation_losses == b.validation_losses
    save_checkpoint(tmp_path / "a", a.best_params, cfg.encoder)
    save_checkpoint(tmp_path / "b", b.best_params, cfg.encoder)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert a.metrics_jsonl(timing=False) == b.metrics_jsonl(timing=False)


def test_frozen_tensors_unchanged_after_100_steps(small):
    docs, h, cfg = small
    cfg = cfg.replace(train={"epochs": 100}, mining={"batch_size": 400})
    prep = prepare(docs, h, cfg)
    init = init_params(cfg.encoder)
    res = train(docs, h, cfg, prepared=prep)
    steps = res.records[-1].step
    assert steps >= 100
    for p in (res.final_params, res.best_params):
        assert np.array_equal(p.E, init.E) and np.array_equal(p.W, init.W)
    assert not np.array_equal(res.final_params.B, init.B)


def test_validation_loss_improves(small):
    docs, h, cfg = small
    res = train(docs, h, cfg)
    assert res.validation_losses[-1] < res.validation_losses[0]
    assert res.best_validation_loss == min(res.validation_losses)
    assert res.aborted is None


def test_checkpoint_roundtrip_reproduces_validation_loss(small, tmp_path):
    docs, h, cfg = small
    prep = prepare(docs, h, cfg)
    res = train(docs, h, cfg, prepared=prep)
    path = tmp_path / "best.bhcl"
    save_checkpoint(path, res.best_params, cfg.encoder)
    params, ecfg, _ = load_checkpoint(path)
    batches = validation_batches(prep.val_pairs, cfg)
    assert validation_loss(batches, prep.pooled, params, cfg) == pytest.approx(res.best_validation_loss, abs=1e-12)


def test_split_disjoint(small):
    docs, h, cfg = small
    prep = prepare(docs, h, cfg)
    key = lambda ps: set(zip(ps.pos_i.tolist(), ps.pos_j.tolist())) | set(zip(ps.neg_i.tolist(), ps.neg_j.tolist()))
    assert not key(prep.train_pairs) & key(prep.val_pairs)
    assert len(prep.train_pairs) + len(prep.val_pairs) == len(prep.pairs)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(small):
    docs, h, cfg = small
    res = train(docs, h, cfg.replace(train={"lr": 1e300, "epochs": 2}))
    assert res.aborted is not None
    assert res.best_epoch == 0


def test_ablation_suite_shape(small):
    docs, h, cfg = small
    rows = run_ablation_suite(docs, h, cfg.replace(train={"epochs": 1}))
    assert len(rows) == 6
    assert [r["model"] for r in rows] == ["full model", "w/o Ancestor Label", "w/o Depth-based Weight",
                                          "w/o L_MSE", "w/o L_Con", "w/o LoRA"]
    table = format_table(rows, ["model", "alignment"])
    assert len(table.splitlines()) == 8
