import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condmpnn import tensor as T
from condmpnn.checks import (MODES, compare_gradients, model_gradient_report, random_graph, random_orthogonal,
                             run_suites)
from condmpnn.conditioning import ConditionalLinear, pure_kernel, separable_kernel
from condmpnn.message_passing import (ConditionalMLP, EgnnLayer, EgnnModel, Graph, GraphBatch, ModelConfig,
                                      aggregate, conv_message, edge_attribute, full_edges, message,
                                      model_forward, update)


def _zero(params):
    for p in params:
        p.data[...] = 0.0


def small_model(mode, seed=0, **kw):
    cfg = dict(d_in=5, d_h=8, n_layers=2, mode=mode, d_a=8, embedding="rbf", rbf_range=(0.0, 16.0))
    cfg.update(kw)
    return EgnnModel(ModelConfig(**cfg), seed=seed)


@pytest.mark.parametrize("x_i, x_j, expected", [
    ((0, 0, 0), (1, 2, 2), 9.0),
    ((1.5, -2, 0.25), (1.5, -2, 0.25), 0.0),
])
def test_edge_attribute(x_i, x_j, expected):
    assert edge_attribute(x_i, x_j) == expected


def test_edge_attribute_isometry_invariant():
    rng = np.random.default_rng(0)
    x_i, x_j = rng.normal(size=(2, 3))
    R = random_orthogonal(rng)
    assert edge_attribute(R @ x_i, R @ x_j) == pytest.approx(edge_attribute(x_i, x_j), abs=1e-13)


def test_full_edges():
    assert full_edges(1).shape == (0, 2)
    e = full_edges(3)
    assert len(e) == 6
    assert e.tolist() == [[0, 1], [0, 2], [1, 0], [1, 2], [2, 0], [2, 1]]


def test_graph_validation():
    with pytest.raises(T.DimensionError):
        Graph(np.ones((3, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="self-loops"):
        Graph(np.ones((2, 2)), np.zeros((2, 3)), [[0, 0]])
    with pytest.raises(ValueError, match="outside"):
        Graph(np.ones((2, 2)), np.zeros((2, 3)), [[0, 2]])


def test_zero_phi_e_gives_zero_message():
    layer = EgnnLayer(4, "strong", None, 2, np.random.default_rng(0))
    _zero(layer.phi_e.parameters())
    m = message(layer, np.ones(4), -np.ones(4), np.ones(2))
    assert np.array_equal(m.data, np.zeros(4))


def test_no_mode_message_ignores_attribute():
    layer = EgnnLayer(4, "no", None, 0, np.random.default_rng(0))
    h_i, h_j = np.ones(4), np.arange(4.0)
    assert np.array_equal(message(layer, h_i, h_j, [1.0]).data, message(layer, h_i, h_j, [7.0]).data)


def test_strong_zero_attribute_message_hand_trace():
    # one hidden unit: phi_e = W2 silu(gate * (Wh h + bh)) + b2, gate = Wa a = 0
    mlp = ConditionalMLP([2, 1, 1], "strong", 1, 1, np.random.default_rng(0))
    first, second = mlp.layers
    first.params["Wh"].data[...] = [[0.7, -1.1]]
    first.params["bh"].data[...] = [0.4]
    first.params["Wa"].data[...] = [[2.0]]
    second.params["W"].data[...] = [[3.0]]
    second.params["b"].data[...] = [0.25]
    out = mlp(T.tensor([1.0, 2.0]), T.tensor([0.0])).data
    # silu(0) = 0, so the message reduces to the second bias
    assert out.tolist() == [0.25]


def test_aggregate_examples():
    m = np.array([1.0, -2.0])
    assert np.array_equal(aggregate([m]).data, m)
    assert np.array_equal(aggregate([], width=3).data, np.zeros(3))
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_aggregate_order_bound(k, seed):
    rng = np.random.default_rng(seed)
    msgs = list(rng.uniform(-1, 1, size=(k, 6)))
    a = aggregate(msgs).data
    b = aggregate([msgs[i] for i in rng.permutation(k)]).data
    assert np.abs(a - b).max() <= 1e-12


def test_update_examples():
    rng = np.random.default_rng(0)
    h = rng.normal(size=3)
    layer = EgnnLayer(3, "no", rng=rng)
    _zero(layer.phi_h.parameters())
    assert np.array_equal(update(layer, h, rng.normal(size=3)).data, h)
    layer.residual = False
    assert np.array_equal(update(layer, h, rng.normal(size=3)).data, np.zeros(3))


def test_update_hand_trace():
    layer = EgnnLayer(2, "no", rng=np.random.default_rng(0))
    first, second = layer.phi_h.layers
    first.params["W"].data[...] = [[1, 0, 1, 0], [0, 1, 0, -1]]
    first.params["b"].data[...] = [0.0, 0.5]
    second.params["W"].data[...] = [[1, 1], [0, 2]]
    second.params["b"].data[...] = [0.0, -1.0]
    h, m = np.array([1.0, 2.0]), np.array([0.5, 1.0])
    pre = np.array([1.0 + 0.5, 2.0 - 1.0 + 0.5])  # (1.5, 1.5)
    act = pre / (1 + np.exp(-pre))
    expect = h + np.array([act[0] + act[1], 2 * act[1] - 1.0])
    np.testing.assert_allclose(update(layer, h, m).data, expect, atol=1e-15)


def test_layer_matches_per_edge_reference():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 4, 5)
    model = small_model("strong")
    b = GraphBatch.from_graphs([g])
    with T.no_grad():
        h = model.input_embed(T.tensor(b.node_features)).data
        a = model.edge_embeddings(b)[0].data
        layer = model.layers[0]
        out = layer(T.tensor(h), b.src, b.dst, T.tensor(a)).data
        for i in range(g.n):
            msgs = [message(layer, h[s], h[d], a[k]) for k, (s, d) in enumerate(zip(b.src, b.dst)) if s == i]
            np.testing.assert_allclose(out[i], update(layer, h[i], aggregate(msgs)).data, atol=1e-13)


def test_zero_model_predicts_zero():
    model = small_model("weak")
    _zero(model.parameters())
    assert model_forward(model, random_graph(np.random.default_rng(0), 5, 5)) == 0.0


def test_single_node_graph_depends_only_on_its_features():
    model = small_model("strong")
    g1 = Graph(np.ones((1, 5)), [[0.0, 0.0, 0.0]])
    g2 = Graph(np.ones((1, 5)), [[4.0, -1.0, 2.0]])
    assert g1.edges.shape == (0, 2)
    assert model_forward(model, g1) == model_forward(model, g2)


def test_feature_width_mismatch():
    with pytest.raises(T.DimensionError):
        model_forward(small_model("no"), random_graph(np.random.default_rng(0), 3, 4))


@pytest.mark.parametrize("mode", MODES)
def test_e3_invariance(mode):
    rng = np.random.default_rng(MODES.index(mode))
    model = small_model(mode)
    g = random_graph(rng, 12, 5)
    base = model_forward(model, g)
    for k in range(100):
        gt = g.transformed(random_orthogonal(rng, reflect=bool(k % 2)), rng.normal(size=3) * 5)
        assert abs(model_forward(model, gt) - base) <= 1e-9


@pytest.mark.parametrize("mode", MODES)
def test_permutation_invariance(mode):
    rng = np.random.default_rng(10 + MODES.index(mode))
    model = small_model(mode)
    for _ in range(5):
        g = random_graph(rng, int(rng.integers(2, 13)), 5)
        assert abs(model_forward(model, g.permuted(rng.permutation(g.n))) - model_forward(model, g)) <= 1e-12


def test_batch_equals_individual_forward():
    rng = np.random.default_rng(2)
    graphs = [random_graph(rng, n, 5) for n in (1, 3, 5, 2)]
    model = small_model("pure")
    batched = model.predict(graphs)
    single = np.array([model_forward(model, g) for g in graphs])
    np.testing.assert_allclose(batched, single, atol=1e-12)
    assert np.array_equal(model.predict(graphs, chunk=1, threads=3), model.predict(graphs, chunk=1))


@pytest.mark.parametrize("mode", ["weak", "strong", "pure"])
def test_depth_zero_collapses_to_no(mode):
    graphs = [random_graph(np.random.default_rng(s), 4, 5) for s in range(3)]
    ref = small_model("no", seed=3).predict(graphs)
    got = small_model(mode, seed=3, cond_depth=0).predict(graphs)
    assert np.array_equal(ref, got)


def test_mode_no_is_attribute_blind():
    g = random_graph(np.random.default_rng(0), 6, 5)
    scaled = Graph(g.node_features, 2 * g.positions)
    model = small_model("no")
    assert model_forward(model, g) == model_forward(model, scaled)
    for mode in ("weak", "strong", "pure"):
        assert abs(model_forward(small_model(mode), g) - model_forward(small_model(mode), scaled)) > 1e-6


@pytest.mark.parametrize("mode", MODES)
def test_full_model_gradients(mode):
    rep = model_gradient_report(mode)
    assert rep.passed, rep.failures


def test_strong_layer_mae_gradient_on_three_node_graph():
    g = Graph(np.eye(3, 5), [[0, 0, 0], [1, 0, 0], [0, 1.5, 0]], target=0.3)
    # rbf tails give ~1e-8 gradients below finite-difference resolution; mlp2 avoids them
    model = small_model("strong", n_layers=1, embedding="mlp2")
    batch = GraphBatch.from_graphs([g])
    loss = lambda: T.mean(T.abs_(model.forward_batch(batch) - T.tensor(batch.targets)))  # noqa: E731
    rep = compare_gradients(loss, model.parameters())
    assert rep.passed, rep.failures


def test_state_dict_round_trip():
    a, b = small_model("strong", seed=1), small_model("strong", seed=2)
    g = random_graph(np.random.default_rng(0), 4, 5)
    b.load_state_dict(a.state_dict())
    assert model_forward(a, g) == model_forward(b, g)


def test_conv_message_kernels():
    rng = np.random.default_rng(0)
    f_j = rng.normal(size=3)
    pure = ConditionalLinear("pure", 3, 2, 4, rng)
    a = rng.normal(size=4)
    np.testing.assert_allclose(conv_message(pure_kernel(pure, a), f_j), pure(T.tensor(f_j), T.tensor(a)).data,
                               atol=1e-14)
    strong = ConditionalLinear("strong", 3, 2, 4, rng)
    np.testing.assert_allclose(conv_message(separable_kernel(strong, a), f_j),
                               strong(T.tensor(f_j), T.tensor(a)).data, atol=1e-14)


def test_conv_message_constant_kernel_hand_example():
    # 3-node path 0-1-2 with kernel K = [[1, 1]]: node 1 receives K f_0 + K f_2
    K = np.array([[1.0, 1.0]])
    f = np.array([[1.0, 2.0], [0.0, 5.0], [-1.0, 4.0]])
    m_1 = conv_message(K, f[0]) + conv_message(K, f[2])
    assert m_1.tolist() == [6.0]
    with pytest.raises(T.DimensionError):
        conv_message(K, np.ones(3))


def test_message_passing_suites_pass():
    names = ["message_passing.locality", "message_passing.permutation_equivariance",
             "message_passing.attribute_blindness", "message_passing.depth_zero_collapse"]
    assert all(r.passed for r in run_suites(names))
