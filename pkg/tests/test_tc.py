import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anthe.errors import ConfigError, DataError, ShapeError
from anthe.tc import (TCLinear, decompose, factorize, materialize, param_count, plan_factors, solve_bond,
                      tc_forward, tc_rows)
from anthe.tensor import Tensor, precision


def bond_oracle(e, s, budget):
    # exhaustive scan: largest b with e*b + s*b^2 <= budget, floor 1
    bs = np.arange(1, int(budget // e) + 2, dtype=np.int64)
    ok = bs[e * bs + s * bs * bs <= budget]
    return int(ok.max()) if ok.size else 1


def test_plan_512x2048_n2():
    p = plan_factors(512, 2048, 2, 0.1)
    assert (p.a, p.c, p.b) == ((16, 32), (32, 64), 40)
    assert param_count(p) == 102400
    assert abs(p.r_actual - 2560 * 40 / (512 * 2048)) < 1e-12


def test_plan_4x4_full_budget():
    p = plan_factors(4, 4, 2, 1.0)
    assert (p.a, p.c, p.b, param_count(p)) == ((2, 2), (2, 2), 2, 16)


def test_plan_512x2048_n3():
    p = plan_factors(512, 2048, 3, 0.1)
    assert (p.a, p.c, p.b) == ((8, 8, 8), (8, 16, 16), 27)
    assert param_count(p) == 27 * (64 + 128) + 27 ** 2 * 128 == 98496


def test_param_count_small():
    assert param_count(plan_factors(4, 4, 2, 1.0).with_bond(1)) == 8


def test_512_square_at_patt_ratio():
    # a = c = (16, 32): per-bond cost 16*16 + 32*32 = 1280, budget 0.07 * 512^2
    p = plan_factors(512, 512, 2, 0.07)
    assert (p.a, p.c, p.b) == ((16, 32), (16, 32), 14)
    assert param_count(p) == 17920


def test_degenerate_shapes_rejected():
    for args in [(1, 8, 2, 0.5), (8, 1, 2, 0.5), (8, 8, 1, 0.5), (8, 8, 2, 0.0), (8, 8, 2, 1.5)]:
        with pytest.raises(ConfigError):
            plan_factors(*args)


def test_budget_below_floor_reports_overshoot():
    p = plan_factors(512, 2048, 2, 0.0001)
    assert p.b == 1 and p.r_actual > p.r_target


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.integers(0, 3000), st.floats(1, 1e6))
def test_solve_bond_matches_brute_force(e, s, budget):
    assert solve_bond(e, s, budget) == bond_oracle(e, s, budget)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 3000), st.integers(2, 4))
def test_factorize_is_balanced_and_sorted(N, n):
    f = factorize(N, n)
    assert len(f) == n and int(np.prod(f)) == N and list(f) == sorted(f)
    # no other ordered factorization is more balanced
    def ratios(N, n, lo=1):
        if n == 1:
            yield (N,)
            return
        for d in range(lo, N + 1):
            if N % d == 0:
                for rest in ratios(N // d, n - 1, d):
                    yield (d, *rest)
    best = min(max(t) / min(t) for t in ratios(N, n))
    assert max(f) / min(f) == best


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 600), st.integers(2, 600), st.integers(2, 4), st.floats(0.001, 1.0))
def test_plan_budget_and_determinism(Na, Nc, n, r):
    p = plan_factors(Na, Nc, n, r)
    assert p == plan_factors(Na, Nc, n, r)
    assert int(np.prod(p.a)) == Na and int(np.prod(p.c)) == Nc and p.b >= 1
    if p.with_bond(1).params <= r * Na * Nc:
        assert p.params <= r * Na * Nc
        assert p.with_bond(p.b + 1).params > r * Na * Nc


def test_factor_shapes():
    p = plan_factors(24, 36, 4, 0.5)
    layer = TCLinear(p, np.random.default_rng(0))
    shapes = [f.shape for f in layer.factors]
    assert shapes[0] == (p.a[0], p.b, p.c[0])
    assert shapes[-1] == (p.a[-1], p.b, p.c[-1])
    assert all(s == (p.a[i], p.b, p.b, p.c[i]) for i, s in enumerate(shapes[1:-1], 1))
    assert param_count(layer) == sum(f.size for f in layer.factors)
    assert materialize(layer).shape == (24, 36)


def test_zero_factors_give_zero_output():
    p = plan_factors(12, 8, 3, 0.6)
    layer = TCLinear(p, factors=[np.zeros(s) for s in p.factor_shapes()])
    assert not np.any(tc_forward(layer, Tensor(np.ones((3, 12)))).data)


def test_bond_one_is_reshaped_outer_product():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    p = plan_factors(4, 4, 2, 1.0).with_bond(1)
    layer = TCLinear(p, factors=[u[:, None, :], v[:, None, :]], dtype=np.float64)
    W = materialize(layer).data
    # W[(a1 a2), (c1 c2)] = u[a1, c1] v[a2, c2]: the Kronecker product
    np.testing.assert_allclose(W, np.kron(u, v), rtol=1e-12)
    np.testing.assert_allclose(tc_forward(layer, Tensor(np.eye(4)[:1], dtype=np.float64)).data[0], W[0])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_forward_matches_materialize_float64(n):
    rng = np.random.default_rng(n)
    with precision("float64"):
        layer = TCLinear(plan_factors(48, 30, n, 0.4), rng)
        x = Tensor(rng.normal(size=(2, 5, 48)))
        y, ref = tc_forward(layer, x).data, x.data @ materialize(layer).data
    assert np.abs(y - ref).max() / np.abs(ref).max() < 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
def test_rows_match_materialize(n):
    rng = np.random.default_rng(n)
    with precision("float64"):
        layer = TCLinear(plan_factors(48, 30, n, 0.4), rng)
        ids = rng.integers(0, 48, size=(3, 4))
        np.testing.assert_allclose(tc_rows(layer, ids).data, materialize(layer).data[ids], rtol=1e-12)


def test_forward_axis_mismatch():
    layer = TCLinear(plan_factors(8, 8, 2, 0.5), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        tc_forward(layer, Tensor(np.ones((2, 9))))


def test_init_variance_matches_dense_glorot():
    layer = TCLinear(plan_factors(256, 512, 3, 0.3), np.random.default_rng(0))
    W = materialize(layer).data
    assert 0.7 < W.var() / (2 / (256 + 512)) < 1.3


# decomposition ------------------------------------------------------------


def test_decompose_bond_one_matrix():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    layer, err = decompose(np.kron(u, v), tol=1e-12)
    assert layer.plan.b == 1 and err < 1e-10


def test_decompose_rank_one_kronecker_vectors():
    rng = np.random.default_rng(1)
    u = np.kron(rng.normal(size=2), rng.normal(size=2))
    v = np.kron(rng.normal(size=2), rng.normal(size=2))
    layer, err = decompose(np.outer(u, v), plan_factors(4, 4, 2, 1.0).with_bond(1))
    assert err < 1e-10


def test_generic_rank_one_needs_larger_bond():
    # the bond of u v^T is rank(u as 2x2) * rank(v as 2x2), here 2 * 2
    u, v = np.array([1.0, 0.0, 0.0, 1.0]), np.array([1.0, 2.0, 3.0, 4.0])
    layer, err = decompose(np.outer(u, v), tol=1e-12)
    assert layer.plan.b == 4 and err < 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
def test_decompose_full_rank_is_exact(n):
    W = np.random.default_rng(n).normal(size=(16, 16))
    _, err = decompose(W, tol=0.0, n=n)
    assert err < 1e-8


def test_decompose_full_bond_plan_is_exact():
    W = np.random.default_rng(0).normal(size=(16, 16))
    layer, err = decompose(W, plan_factors(16, 16, 2, 1.0).with_bond(16))
    assert err < 1e-8
    np.testing.assert_allclose(materialize(layer).data, W, atol=1e-10)


def test_decompose_error_non_increasing_in_bond():
    W = np.random.default_rng(0).normal(size=(64, 64))
    plan = plan_factors(64, 64, 2, 1.0)
    errs = [decompose(W, plan.with_bond(b))[1] for b in range(1, 65)]
    assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.5), st.floats(0.5, 1.0))
def test_decompose_monotone_in_ratio(seed, r_lo, r_hi):
    W = np.random.default_rng(seed).normal(size=(32, 32))
    lo = decompose(W, plan_factors(32, 32, 2, r_lo))[1]
    hi = decompose(W, plan_factors(32, 32, 2, r_hi))[1]
    assert lo >= hi - 1e-12


def test_decompose_tolerance_respected():
    W = np.random.default_rng(0).normal(size=(32, 48))
    for tol in (0.5, 0.1, 0.01):
        assert decompose(W, tol=tol, n=3)[1] <= tol


def test_decompose_rejects_non_finite():
    W = np.ones((4, 4))
    W[0, 0] = np.nan
    with pytest.raises(DataError):
        decompose(W, tol=0.1)


def test_decompose_plan_shape_mismatch():
    with pytest.raises(ShapeError):
        decompose(np.ones((4, 4)), plan_factors(4, 8, 2, 0.5))
