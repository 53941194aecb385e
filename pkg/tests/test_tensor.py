import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaseq.tensor import DimensionError, add, add_bias, init_params, matmul, mul, scale, sigmoid, sub, tanh
from oracles import matmul_loop

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity():
    out = matmul([[1, 0], [0, 1]], [[3], [4]])
    assert out.tolist() == [[3], [4]]


def test_matmul_small_example():
    assert matmul([[1, 2], [3, 4]], [[5], [6]]).tolist() == [[17], [39]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    ref = np.array(matmul_loop(a.tolist(), b.tolist()))
    assert np.max(np.abs(matmul(a, b) - ref)) < 1e-12


def test_matmul_shape_error_carries_shapes():
    with pytest.raises(DimensionError) as info:
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert info.value.shapes == ((2, 3), (2, 3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_associative(p, q, r, s, seed):
    g = np.random.default_rng(seed)
    a, b, c = g.normal(size=(p, q)), g.normal(size=(q, r)), g.normal(size=(r, s))
    assert np.allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=0, atol=1e-9)


def test_activation_fixed_points():
    assert sigmoid(0.0) == 0.5
    assert tanh(0.0) == 0.0


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        hi, lo = sigmoid(40.0), sigmoid(-40.0)
        extreme = sigmoid(np.array([-1e4, 1e4]))
    assert abs(hi - 1.0) < 1e-15 and abs(lo) < 1e-15
    # closed form exp(-40) / (1 + exp(-40)) for the negative side
    assert abs(lo - np.exp(-40.0) / (1 + np.exp(-40.0))) < 1e-30
    assert extreme.tolist() == [0.0, 1.0]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)))
def test_sigmoid_symmetry(x):
    assert np.max(np.abs(sigmoid(x) + sigmoid(-x) - 1.0)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=finite))
def test_activations_monotone_and_bounded(x):
    x = np.sort(x)
    for f in (sigmoid, tanh):
        y = f(x)
        assert np.all(np.diff(y) >= 0)
        assert np.all(np.isfinite(y))
    s = sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.abs(tanh(x)) <= 1)


def test_elementwise_ops():
    a, b = np.array([[1.0, 2.0]]), np.array([[3.0, 5.0]])
    assert mul(a, b).tolist() == [[3.0, 10.0]]
    assert add(a, b).tolist() == [[4.0, 7.0]]
    assert sub(a, b).tolist() == [[-2.0, -3.0]]
    assert scale(a, 2).tolist() == [[2.0, 4.0]]
    assert add_bias(np.zeros((2, 2)), [1.0, 2.0]).tolist() == [[1, 2], [1, 2]]
    for op in (mul, add, sub):
        with pytest.raises(DimensionError):
            op(np.ones((1, 2)), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        add_bias(np.zeros((2, 2)), [1.0])


def test_init_deterministic_and_seed_sensitive():
    a, b = init_params(4, 4, 1), init_params(4, 4, 1)
    assert a.tobytes() == b.tobytes()
    assert np.any(init_params(4, 4, 1) != init_params(4, 4, 2))
    assert np.all(init_params(3, 5, 0, "zeros") == 0)


def test_init_range_and_mean():
    cols = 25
    x = init_params(4000, cols, 3)  # 10^5 draws
    s = 1 / np.sqrt(cols)
    assert x.size == 100_000
    assert np.all(np.abs(x) <= s)
    sigma = s / np.sqrt(3) / np.sqrt(x.size)
    assert abs(x.mean()) < 3 * sigma


def test_init_rejects_bad_input():
    with pytest.raises(ValueError):
        init_params(0, 3, 0)
    with pytest.raises(ValueError):
        init_params(2, 3, 0, "normal")
