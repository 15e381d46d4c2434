import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from anthe import functional as F
from anthe.errors import ShapeError
from anthe.tensor import Tensor


def test_softmax_uniform():
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0, 0.0]), -1).data, [1 / 3] * 3, rtol=1e-6)


def test_softmax_large_input_no_overflow():
    out = F.softmax(Tensor([1000.0, 0.0]), -1).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-30)


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        F.softmax(Tensor(np.ones((2, 3))), axis=2)


def test_softmax_rows_random():
    x = np.random.default_rng(0).uniform(-2, 2, (4, 6))
    np.testing.assert_allclose(F.softmax(Tensor(x), -1).data.sum(-1), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)), st.data())
def test_softmax_is_on_simplex(x, data):
    axis = data.draw(st.integers(-x.ndim, x.ndim - 1))
    p = F.softmax(Tensor(x, dtype=np.float64), axis).data
    assert np.all(p > 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis), 1.0, atol=1e-6)


def test_log_softmax_matches_log_of_softmax():
    x = Tensor(np.random.default_rng(1).normal(size=(3, 5)), dtype=np.float64)
    np.testing.assert_allclose(F.log_softmax(x, -1).data, np.log(F.softmax(x, -1).data), atol=1e-12)


def test_layer_norm_constant_vector():
    x = Tensor(np.full((2, 8), 3.0))
    out = F.layer_norm(x, Tensor(np.full(8, 5.0)), Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_standardizes():
    x = Tensor(np.random.default_rng(2).normal(3, 4, (5, 32)), dtype=np.float64)
    out = F.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-10)
    np.testing.assert_allclose(out.var(-1), 1, atol=1e-3)


def test_dropout_p0_is_identity():
    x = Tensor(np.arange(6.0))
    assert F.dropout(x, 0.0, True, np.random.default_rng(0)) is x


def test_dropout_eval_is_identity():
    x = Tensor(np.arange(6.0))
    assert F.dropout(x, 0.5, False, np.random.default_rng(0)) is x


def test_dropout_scales_survivors():
    x = Tensor(np.ones(10000))
    out = F.dropout(x, 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, np.float32(1 / 0.75)}
    assert abs((out == 0).mean() - 0.25) < 0.02


@pytest.mark.parametrize("V", [2, 7, 50])
def test_cross_entropy_uniform_logits(V):
    loss = F.cross_entropy(Tensor(np.zeros((2, 3, V))), np.zeros((2, 3), int), np.ones((2, 3), bool))
    assert math.isclose(loss.item(), math.log(V), rel_tol=1e-6)


def test_cross_entropy_ignores_masked_positions():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(1, 4, 5))
    targets = np.array([[1, 2, 3, 4]])
    mask = np.array([[True, True, False, False]])
    a = F.cross_entropy(Tensor(logits, dtype=np.float64), targets, mask).item()
    logits[0, 2:] = 1e3
    b = F.cross_entropy(Tensor(logits, dtype=np.float64), targets, mask).item()
    assert a == b


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        F.cross_entropy(Tensor(np.zeros((1, 2, 3))), np.array([[0, 3]]), np.ones((1, 2), bool))


def test_cross_entropy_all_masked():
    with pytest.raises(ValueError):
        F.cross_entropy(Tensor(np.zeros((1, 2, 3))), np.array([[0, 1]]), np.zeros((1, 2), bool))


def test_conv_passthrough_kernel():
    x = np.random.default_rng(0).normal(size=(2, 6, 3))
    k = np.zeros((3, 3, 3))
    k[2] = np.eye(3)
    out = F.causal_conv1d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), dilation=4)
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 8, 3))
    k = rng.normal(size=(3, 3, 2))
    out = F.causal_conv1d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), dilation=2).data
    for t in range(8):
        expect = np.zeros(2)
        for tap, src in enumerate((t - 4, t - 2, t)):
            if src >= 0:
                expect += x[0, src] @ k[tap]
        np.testing.assert_allclose(out[0, t], expect, rtol=1e-12)
    np.testing.assert_allclose(out[0, 5], x[0, 1] @ k[0] + x[0, 3] @ k[1] + x[0, 5] @ k[2], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.data())
def test_conv_causality(t_len, dilation, data):
    t = data.draw(st.integers(0, t_len - 2))
    rng = np.random.default_rng(t_len * 31 + dilation)
    x = rng.normal(size=(1, t_len, 2)).astype(np.float32)
    k = Tensor(rng.normal(size=(3, 2, 3)))
    before = F.causal_conv1d(Tensor(x), k, dilation).data
    x[0, t + 1:] = rng.normal(size=x[0, t + 1:].shape)
    after = F.causal_conv1d(Tensor(x), k, dilation).data
    assert before[0, : t + 1].tobytes() == after[0, : t + 1].tobytes()


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        F.causal_conv1d(Tensor(np.ones((1, 4, 3))), Tensor(np.ones((3, 2, 2))), 1)
