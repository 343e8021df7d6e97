import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from condmpnn import tensor as T
from condmpnn.checks import compare_gradients, op_gradient_reports

unit = st.floats(-1, 1, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_hand_case():
    assert np.array_equal(T.matmul(T.tensor(np.eye(2)), T.tensor([3.0, 4.0])).data, [3, 4])
    out = T.matmul(T.tensor([[1.0, 2.0], [3.0, 4.0]]), T.tensor([1.0, 1.0]))
    assert np.array_equal(out.data, [3.0, 7.0])
    assert np.array_equal(T.matmul(T.tensor(np.ones((3, 2))), T.tensor(np.zeros(2))).data, np.zeros(3))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2,\)"):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones(2)))


@pytest.mark.parametrize("a, b, expected", [
    ([1, 1, 1], [5, 6, 7], [5, 6, 7]),
    ([0, 0], [1.5, -2.0], [0, 0]),
    ([2, 3], [4, 5], [8, 15]),
])
def test_hadamard(a, b, expected):
    assert np.array_equal(T.hadamard(T.tensor(a), T.tensor(b)).data, expected)


def test_hadamard_rejects_mismatched_shapes():
    with pytest.raises(T.DimensionError):
        T.hadamard(T.tensor([1.0, 2.0]), T.tensor([1.0, 2.0, 3.0]))


def test_concat():
    assert np.array_equal(T.concat(T.tensor([1.0, 2.0]), T.tensor([3.0])).data, [1, 2, 3])
    h = T.tensor([[1.0, 2.0]])
    assert np.array_equal(T.concat(h, T.tensor(np.zeros((1, 0)))).data, h.data)


def test_activations():
    assert T.activation(T.tensor([0.0]), "silu").data[0] == 0.0
    assert T.activation(T.tensor([-1.0]), "relu").data[0] == 0.0
    # independent scalar oracle: x * sigmoid(x) at x = 1
    assert T.activation(T.tensor([1.0]), "silu").data[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
    with pytest.raises(ValueError, match="unknown activation"):
        T.activation(T.tensor([1.0]), "gelu")


def test_backward_power_rule():
    w = T.parameter([3.0])
    rec = T.backward(T.tsum(T.hadamard(w, w)))
    assert w.grad[0] == 6.0
    assert rec.grad_of(w)[0] == 6.0


def test_backward_requires_scalar_root():
    with pytest.raises(T.DimensionError):
        T.backward(T.parameter([1.0, 2.0]) * 2.0)


def test_backward_accumulates_into_existing_grad():
    w = T.parameter([1.0, 2.0])
    T.backward(T.tsum(w))
    T.backward(T.tsum(w * 3.0))
    assert np.array_equal(w.grad, [4.0, 4.0])


def test_finite_difference_examples():
    w = T.parameter([3.0])
    (g,) = T.finite_difference_grad(lambda: float(w.data[0] ** 2), [w], eps=1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-8)
    assert w.data[0] == 3.0  # restored
    (z,) = T.finite_difference_grad(lambda: 2.5, [T.parameter(np.ones(4))])
    assert np.array_equal(z, np.zeros(4))


def test_finite_difference_rejects_nonfinite_objective():
    w = T.parameter([0.0])
    with pytest.raises(T.NonFiniteError):
        T.finite_difference_grad(lambda: math.inf if w.data[0] > 0 else 0.0, [w])


def test_finite_check_is_toggleable():
    x = T.tensor([800.0])
    with pytest.raises(T.NonFiniteError):
        T.exp(x)
    with T.finite_checks(False):
        assert np.isinf(T.exp(x).data[0])


def test_no_grad_records_nothing():
    w = T.parameter([1.0])
    with T.no_grad():
        y = w * 2.0
    assert not y.requires_grad and y._parents == ()


@pytest.mark.parametrize("name, report", sorted(op_gradient_reports(0).items()))
def test_op_gradients_match_finite_differences(name, report):
    assert report.passed, report.failures


def test_segment_sum_and_gather():
    x = T.tensor([[1.0], [2.0], [4.0]])
    assert np.array_equal(T.segment_sum(x, np.array([1, 1, 0]), 3).data, [[4.0], [3.0], [0.0]])
    assert np.array_equal(T.gather(x, np.array([2, 2, 0])).data, [[4.0], [4.0], [1.0]])
    with pytest.raises(T.DimensionError):
        T.segment_sum(x, np.array([0, 1, 3]), 3)


def test_bilinear_matches_einsum():
    rng = np.random.default_rng(3)
    a, W, h = rng.normal(size=(4, 3)), rng.normal(size=(3, 5, 2)), rng.normal(size=(4, 2))
    out = T.bilinear(T.tensor(a), T.tensor(W), T.tensor(h)).data
    np.testing.assert_allclose(out, np.einsum("eb,boi,ei->eo", a, W, h), atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_matmul_is_linear(m, n, data):
    A = data.draw(hnp.arrays(np.float64, (m, n), elements=unit))
    x = data.draw(hnp.arrays(np.float64, (n,), elements=unit))
    y = data.draw(hnp.arrays(np.float64, (n,), elements=unit))
    al, be = data.draw(unit), data.draw(unit)
    lhs = T.matmul(T.tensor(A), T.tensor(al * x + be * y)).data
    rhs = al * T.matmul(T.tensor(A), T.tensor(x)).data + be * T.matmul(T.tensor(A), T.tensor(y)).data
    assert np.abs(lhs - rhs).max() <= 1e-12


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=unit))
def test_silu_gradient_property(x):
    p = T.parameter(x)
    rep = compare_gradients(lambda: T.tsum(T.activation(p, "silu")), [p])
    assert rep.passed, rep.failures


def test_backward_is_deterministic():
    rng = np.random.default_rng(0)
    W = T.parameter(rng.normal(size=(4, 3)))
    x = T.tensor(rng.normal(size=(6, 3)))
    root = T.tsum(T.activation(T.segment_sum(T.linear(x, W), np.array([0, 1, 0, 1, 2, 0]), 3), "silu"))
    T.backward(root)
    g1 = W.grad.copy()
    W.grad = None
    T.backward(root)
    assert np.array_equal(g1, W.grad)
