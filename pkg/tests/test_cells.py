import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaseq.cells import (
    CellParams,
    CellState,
    ContractError,
    MaskConstants,
    da_step,
    lstm_step,
    portion_gate,
    soft_mask,
    thres,
)
from adaseq.tensor import DimensionError
from oracles import da_oracle, lstm_oracle, mask_oracle, portion_oracle


def random_cell(D, seed, gate=True, scale=1.0):
    g = np.random.default_rng(seed)
    p = CellParams.init(D, seed, portion_gate=gate)
    p.b[:] = g.normal(size=4 * D) * scale
    if gate:
        p.b_p[:] = g.normal()
    return p


def random_state(D, seed, batch=None):
    g = np.random.default_rng(seed + 1000)
    shape = (D,) if batch is None else (batch, D)
    return CellState(g.normal(size=shape), np.tanh(g.normal(size=shape)))


def _as_cell(p):
    return {k: v.tolist() for k, v in p.tensors().items()}


# -- lstm_step --------------------------------------------------------------


def test_lstm_zero_fixed_point():
    out = lstm_step(CellParams.zeros(3), CellState.zeros(3), np.zeros(3))
    assert out.C.tolist() == [0.0] * 3 and out.h.tolist() == [0.0] * 3


def test_lstm_forget_saturation_keeps_memory():
    p = CellParams.zeros(3)
    p.b[:3] = 40.0
    c = np.array([0.3, -1.2, 2.5])
    out = lstm_step(p, CellState(c, np.zeros(3)), np.zeros(3))
    assert out.C.tolist() == c.tolist()


def test_lstm_matches_scalar_oracle():
    D = 4
    p = random_cell(D, 3, gate=False)
    st_ = random_state(D, 3)
    x = np.random.default_rng(9).normal(size=D)
    C, h = lstm_oracle(p.W.tolist(), p.U.tolist(), p.b.tolist(), st_.C.tolist(), st_.h.tolist(), x.tolist())
    out = lstm_step(p, st_, x)
    assert np.max(np.abs(out.C - C)) < 1e-12 and np.max(np.abs(out.h - h)) < 1e-12


def test_lstm_batched_rows_match_single():
    D = 3
    p = random_cell(D, 4, gate=False)
    st_ = random_state(D, 4, batch=5)
    X = np.random.default_rng(2).normal(size=(5, D))
    out = lstm_step(p, st_, X)
    for k in range(5):
        one = lstm_step(p, CellState(st_.C[k], st_.h[k]), X[k])
        assert np.allclose(one.h, out.h[k], rtol=0, atol=1e-15)


def test_lstm_dimension_error():
    with pytest.raises(DimensionError):
        lstm_step(CellParams.zeros(3), CellState.zeros(3), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_hidden_bound_is_preserved(D, seed):
    p = random_cell(D, seed, gate=True, scale=5.0)
    prev = random_state(D, seed)
    x = np.random.default_rng(seed).normal(size=D) * 10
    assert np.all(np.abs(lstm_step(p, prev, x).h) <= 1)
    assert np.all(np.abs(da_step(p, prev, x, MaskConstants())[0].h) <= 1)


def test_cell_param_validation():
    with pytest.raises(DimensionError):
        CellParams(np.zeros((3, 12)), np.zeros((3, 11)), np.zeros(12))
    with pytest.raises(ValueError):
        CellParams(np.zeros((3, 12)), np.zeros((3, 12)), np.zeros(12), w_p=np.zeros((3, 1)))
    assert CellParams.zeros(5, True).count() == 8 * 25 + 4 * 5 + 2 * 5 + 1


# -- portion gate and mask --------------------------------------------------------


def test_portion_gate_zero_params():
    assert portion_gate(CellParams.zeros(4, True), np.ones(4), np.ones(4)) == 0.5


def test_portion_gate_saturates():
    p = CellParams.zeros(4, True)
    p.b_p[:] = 40.0
    assert abs(portion_gate(p, np.zeros(4), np.zeros(4)) - 1.0) < 1e-15


def test_portion_gate_matches_dot_product_oracle():
    D = 6
    p = random_cell(D, 11)
    g = np.random.default_rng(5)
    h, x = g.normal(size=D), g.normal(size=D)
    ref = portion_oracle(p.w_p[:, 0].tolist(), p.u_p[:, 0].tolist(), float(p.b_p[0]), h.tolist(), x.tolist())
    assert abs(portion_gate(p, h, x) - ref) < 1e-12


def test_portion_gate_needs_gate():
    with pytest.raises(ContractError):
        portion_gate(CellParams.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ContractError):
        da_step(CellParams.zeros(3), CellState.zeros(3), np.zeros(3), MaskConstants())


@pytest.mark.parametrize("x, want", [(0.5, 0.5), (0.001, 0.0), (0.995, 1.0), (0.01, 0.01), (0.99, 0.99)])
def test_thres_branches(x, want):
    assert thres(x, 0.01) == want


def test_mask_constants_validation():
    for bad in ({"epsilon": 0.0}, {"epsilon": 0.5}, {"sharpness": 0.0}):
        with pytest.raises(ValueError):
            MaskConstants(**bad)


def test_soft_mask_half_example():
    # pD = 2, so index 2 sits at sigmoid(0) = 0.5 and indices 3, 4 are clipped
    e = soft_mask(0.5, 4, MaskConstants(0.01, 100.0))
    assert e.tolist() == [1.0, 0.5, 0.0, 0.0]


def test_soft_mask_just_below_one():
    # pD sits a hair below D, so the last entry is sigmoid(~0) = 0.5 rather than 1
    p = np.nextafter(1.0, 0.0)
    e = soft_mask(p, 4, MaskConstants(0.01, 100.0))
    assert e[:3].tolist() == [1.0, 1.0, 1.0]
    assert abs(e[3] - 0.5) < 1e-12
    assert e.tolist() == mask_oracle(p, 4, 100.0, 0.01)


@settings(max_examples=500, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.integers(1, 64), st.floats(0.1, 1e4), st.floats(1e-4, 0.49))
def test_soft_mask_matches_oracle_and_is_monotone(p, D, lam, eps):
    e = soft_mask(p, D, MaskConstants(eps, lam))
    assert np.allclose(e, mask_oracle(p, D, lam, eps), rtol=0, atol=1e-12)
    assert np.all((e >= 0) & (e <= 1))
    assert np.all(np.diff(e) <= 0)


def test_soft_mask_batched():
    mc = MaskConstants()
    ps = np.array([0.2, 0.7])
    E = soft_mask(ps, 10, mc)
    assert E.shape == (2, 10)
    assert np.array_equal(E[1], soft_mask(0.7, 10, mc))


# -- da_step ------------------------------------------------------------------------


def _gated_case(D=5, seed=21):
    p = random_cell(D, seed)
    prev = random_state(D, seed)
    x = np.random.default_rng(seed + 7).normal(size=D)
    return p, prev, x


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_full_mask_reduces_to_lstm_bitwise(D, seed):
    p, prev, x = _gated_case(D, seed)
    out, _, e = da_step(p, prev, x, MaskConstants(), override=np.ones(D))
    ref = lstm_step(p, prev, x)
    assert e.tolist() == [1.0] * D
    assert out.C.tobytes() == ref.C.tobytes() and out.h.tobytes() == ref.h.tobytes()


def test_saturated_gate_copies_state_bitwise():
    p, prev, x = _gated_case()
    p.w_p[:] = 0
    p.u_p[:] = 0
    p.b_p[:] = -40.0
    out, pv, e = da_step(p, prev, x, MaskConstants())
    assert pv < 1e-15 and e.tolist() == [0.0] * 5
    assert out.C.tobytes() == prev.C.tobytes() and out.h.tobytes() == prev.h.tobytes()


def test_zero_override_copies_state_bitwise():
    p, prev, x = _gated_case()
    out, _, _ = da_step(p, prev, x, MaskConstants(), override=np.zeros(5))
    assert out.C.tobytes() == prev.C.tobytes() and out.h.tobytes() == prev.h.tobytes()


def test_half_portion_blend_weights():
    D = 4
    p = random_cell(D, 2)
    p.w_p[:] = 0
    p.u_p[:] = 0
    p.b_p[:] = 0
    prev = random_state(D, 2)
    x = np.random.default_rng(1).normal(size=D)
    mc = MaskConstants(0.01, 100.0)
    out, pv, e = da_step(p, prev, x, mc)
    assert pv == 0.5 and e.tolist() == [1.0, 0.5, 0.0, 0.0]
    # hand evaluation: masked inputs, plain LSTM update, then blend
    hs, xs = prev.h * e, x * e
    C_new, h_new = lstm_oracle(p.W.tolist(), p.U.tolist(), p.b.tolist(), prev.C.tolist(), hs.tolist(), xs.tolist())
    assert abs(out.h[0] - h_new[0]) < 1e-12
    assert abs(out.h[1] - (0.5 * h_new[1] + 0.5 * prev.h[1])) < 1e-12
    assert abs(out.C[1] - (0.5 * C_new[1] + 0.5 * prev.C[1])) < 1e-12
    for j in (2, 3):
        assert out.h[j] == prev.h[j] and out.C[j] == prev.C[j]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10**6), st.floats(1.0, 200.0))
def test_copy_through_where_mask_is_zero(D, seed, lam):
    p, prev, x = _gated_case(D, seed)
    out, _, e = da_step(p, prev, x, MaskConstants(0.01, lam))
    zero = e == 0.0
    assert np.array_equal(out.C[zero], prev.C[zero]) and np.array_equal(out.h[zero], prev.h[zero])


def test_da_step_matches_oracle():
    D = 5
    p, prev, x = _gated_case(D, 33)
    mc = MaskConstants(0.01, 3.0)
    out, pv, e = da_step(p, prev, x, mc)
    C, h, pr, er = da_oracle(_as_cell(p), prev.C.tolist(), prev.h.tolist(), x.tolist(), 3.0, 0.01)
    assert abs(pv - pr) < 1e-12
    assert np.max(np.abs(e - er)) < 1e-12
    assert np.max(np.abs(out.C - C)) < 1e-12 and np.max(np.abs(out.h - h)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_gates_strictly_inside_unit_interval(D, seed):
    p, prev, x = _gated_case(D, seed)
    pv = portion_gate(p, prev.h, x)
    assert 0.0 < pv < 1.0
