import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condmpnn import tensor as T
from condmpnn.checks import run_suites, single_batch_descends
from condmpnn.data import SyntheticSpec, gen_synthetic, split
from condmpnn.message_passing import EgnnModel, Graph, ModelConfig
from condmpnn.training import (AdamState, CosineSchedule, TrainConfig, TrainingDiverged, adam_step, evaluate,
                               lr_at, mae, train)


@pytest.fixture(scope="module")
def tiny():
    graphs = gen_synthetic(SyntheticSpec(n_graphs=60, n_min=3, n_max=5, d=4, seed=1))
    tr, va, _ = split(graphs, (0.8, 0.2, 0.0), 1)
    cfg = ModelConfig(d_in=4, d_h=8, n_layers=2, mode="strong", embedding="rbf", d_a=8, rbf_range=(0.0, 20.0))
    return tr, va, cfg


def test_adam_zero_grads_no_decay_leaves_params():
    p = T.parameter(np.array([1.0, -2.0]))
    state = AdamState.for_params([p], weight_decay=0.0)
    adam_step([p], [np.zeros(2)], state, 1e-3)
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_hand_value():
    lr, eps = 5e-4, 1e-8
    p = T.parameter(np.array([0.0]))
    adam_step([p], [np.array([1.0])], AdamState.for_params([p], weight_decay=0.0), lr)
    # m_hat = v_hat = 1 after bias correction
    assert p.data[0] == -lr * 1.0 / (1.0 + eps)


def test_decoupled_decay_shrink_factor():
    p = T.parameter(np.array([1.0]))
    adam_step([p], [np.zeros(1)], AdamState.for_params([p], weight_decay=1e-16), 5e-4)
    assert p.data[0] == 1.0 - 5e-4 * 1e-16  # == 1.0 in float64
    q = T.parameter(np.array([3.0]))
    adam_step([q], [np.zeros(1)], AdamState.for_params([q], weight_decay=0.1), 0.5)
    assert q.data[0] == pytest.approx(3.0 * (1 - 0.05))


def test_adam_rejects_mismatched_gradient():
    p = T.parameter(np.zeros(2))
    with pytest.raises(T.DimensionError):
        adam_step([p], [np.zeros(3)], AdamState.for_params([p]), 1e-3)


def test_lr_schedule_examples():
    s = CosineSchedule(5e-4, 100, 0.0)
    assert lr_at(s, 0) == 5e-4
    assert lr_at(s, 100) == 0.0
    assert lr_at(s, 50) == pytest.approx(2.5e-4, abs=1e-19)
    with pytest.raises(ValueError):
        lr_at(s, 101)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5000), st.floats(1e-6, 1e-1), st.floats(0, 1))
def test_lr_schedule_monotone_and_continuous(total, base, floor_frac):
    s = CosineSchedule(base, total, base * floor_frac)
    lrs = np.array([lr_at(s, k) for k in range(total + 1)])
    assert np.all(np.diff(lrs) <= base * 1e-14)
    # Lipschitz bound of the cosine: |d lr / d step| <= pi (base - min) / (2 total)
    assert np.abs(np.diff(lrs)).max(initial=0) <= math.pi * (base - s.min_lr) / (2 * total) + base * 1e-14


@pytest.mark.parametrize("pred, target, expected", [
    ([1.0, 2.0], [1.0, 2.0], 0.0),
    ([0.0, 0.0], [1.0, -1.0], 1.0),
    ([1.0, 1.0, 5.0], [1.0, 2.0, 3.0], 1.0),
])
def test_mae(pred, target, expected):
    assert mae(pred, target) == expected


def test_zero_epoch_run_leaves_model(tiny):
    tr, va, cfg = tiny
    model = EgnnModel(cfg, seed=0)
    before = model.state_dict()
    res = train(model, tr, va, TrainConfig(epochs=0))
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())
    assert [r["epoch"] for r in res.history] == [0, 0]
    assert res.final("val") == evaluate(model, va)


def test_constant_target_bias_fit():
    rng = np.random.default_rng(0)
    graphs = [Graph(rng.uniform(-1, 1, (n, 4)), rng.normal(size=(n, 3)), target=1.7) for n in (2, 3, 4, 5) * 5]
    model = EgnnModel(ModelConfig(d_in=4, d_h=8, n_layers=1, mode="strong", embedding="rbf", d_a=4), seed=0)
    model.readout.layers[1].params["W"].data[...] = 0.0
    res = train(model, graphs, None, TrainConfig(epochs=200, batch_size=len(graphs), lr=0.05,
                                                 trainable=["readout.1.b"]))
    assert res.final("train") < 1e-3
    assert model.readout.layers[1].params["b"].data[0] == pytest.approx(1.7, abs=1e-3)


def test_training_is_bit_reproducible(tiny, tmp_path):
    tr, va, cfg = tiny
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        train(EgnnModel(cfg, seed=4), tr, va, TrainConfig(epochs=3, batch_size=16, seed=4, metrics_path=p))
    rows = [[{k: v for k, v in json.loads(line).items() if k != "wall_ms"} for line in p.read_text().splitlines()]
            for p in paths]
    assert rows[0] == rows[1]
    assert len(rows[0]) == 8 and set(rows[0][0]) == {"epoch", "split", "mae", "lr"}


def test_zero_lr_keeps_everything_constant(tiny):
    tr, va, cfg = tiny
    model = EgnnModel(cfg, seed=0)
    before = model.state_dict()
    res = train(model, tr, va, TrainConfig(epochs=2, batch_size=16, lr=0.0, weight_decay=0.0))
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())
    val = {r["mae"] for r in res.history if r["split"] == "val"}
    assert len(val) == 1


def test_training_reduces_error(tiny):
    tr, va, cfg = tiny
    res = train(EgnnModel(cfg, seed=0), tr, va, TrainConfig(epochs=15, batch_size=8, lr=3e-3))
    first = res.history[0]["mae"]
    assert res.final("train") < first
    assert res.best_state is not None and res.best_val_mae <= res.final("val")


def test_single_batch_descent_nine_of_ten():
    assert sum(single_batch_descends(seed) for seed in range(10)) >= 9


def test_divergence_names_graph(tiny):
    tr, va, cfg = tiny
    bad = list(tr)
    bad[3] = Graph(bad[3].node_features, bad[3].positions, bad[3].edges, math.nan)
    with pytest.raises(TrainingDiverged, match="graph 3"):
        train(EgnnModel(cfg, seed=0), bad, None, TrainConfig(epochs=1, batch_size=len(bad)))


def test_unknown_trainable_name(tiny):
    tr, _, cfg = tiny
    with pytest.raises(KeyError):
        train(EgnnModel(cfg), tr, None, TrainConfig(epochs=1, trainable=["nope"]))


def test_standardize_sets_output_affine(tiny):
    tr, _, cfg = tiny
    model = EgnnModel(cfg)
    train(model, tr, None, TrainConfig(epochs=0, standardize=True))
    ys = np.array([g.target for g in tr])
    assert model.output_shift == pytest.approx(ys.mean()) and model.output_scale == pytest.approx(ys.std())


def test_training_suites_pass():
    names = ["training.reproducibility", "training.zero_lr_constant", "training.schedule_monotone"]
    assert all(r.passed for r in run_suites(names))
