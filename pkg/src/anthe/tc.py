"""Tensor Chain (matrix product operator) linear layers.

An ``N_a x N_c`` weight is stored as a chain of ``n`` small factors::

    w[0]   : [a_1, b, c_1]
    w[i]   : [a_i, b, b, c_i]      (0 < i < n-1)
    w[n-1] : [a_n, b, c_n]

with ``N_a = prod(a)`` and ``N_c = prod(c)``. Row ``(a_1, ..., a_n)`` and
column ``(c_1, ..., c_n)`` of the dense matrix are row-major multi-indices,
and the shared bond index ``b`` is summed between neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .modules import Module, is_shape_only, placeholder
from .tensor import Tensor, get_default_dtype, matmul, take_rows


@dataclass(frozen=True)
class TCShapePlan:
    n: int
    a: tuple[int, ...]
    c: tuple[int, ...]
    b: int
    r_target: float

    @property
    def N_a(self) -> int:
        return math.prod(self.a)

    @property
    def N_c(self) -> int:
        return math.prod(self.c)

    @property
    def bond_cost(self) -> tuple[int, int]:
        """Coefficients ``(e, s)`` so that the chain holds ``e*b + s*b**2`` scalars."""
        e = self.a[0] * self.c[0] + self.a[-1] * self.c[-1]
        s = sum(ai * ci for ai, ci in zip(self.a[1:-1], self.c[1:-1]))
        return e, s

    @property
    def params(self) -> int:
        e, s = self.bond_cost
        return e * self.b + s * self.b * self.b

    @property
    def r_actual(self) -> float:
        return self.params / (self.N_a * self.N_c)

    def factor_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for i, (ai, ci) in enumerate(zip(self.a, self.c)):
            if i == 0 or i == self.n - 1:
                shapes.append((ai, self.b, ci))
            else:
                shapes.append((ai, self.b, self.b, ci))
        return shapes

    def with_bond(self, b: int) -> TCShapePlan:
        return TCShapePlan(self.n, self.a, self.c, b, self.r_target)


@lru_cache(maxsize=None)
def _factorizations(N: int, n: int, smallest: int = 1) -> tuple[tuple[int, ...], ...]:
    """All non-decreasing n-tuples of integers >= ``smallest`` whose product is N."""
    if n == 1:
        return ((N,),) if N >= smallest else ()
    out = []
    d = smallest
    while d ** n <= N:
        if N % d == 0:
            out.extend((d,) + rest for rest in _factorizations(N // d, n - 1, d))
        d += 1
    return tuple(out)


def factorize(N: int, n: int) -> tuple[int, ...]:
    """Split N into n factors as close as possible to its n-th root.

    Minimizes max/min over all factorizations; ties go to the
    lexicographically smallest ascending tuple.
    """
    if N < 1 or n < 1:
        raise ValueError(f"cannot factor {N} into {n} parts")
    return min(_factorizations(N, n), key=lambda f: (Fraction(f[-1], f[0]), f))


def solve_bond(e: int, s: int, budget: float) -> int:
    """Largest integer b >= 1 with ``e*b + s*b**2 <= budget`` (clamped to 1)."""
    if s == 0:
        b = int(budget // e)
    else:
        b = int((-e + math.sqrt(e * e + 4.0 * s * budget)) / (2.0 * s))
    # guard the float estimate on both sides
    while b > 0 and e * b + s * b * b > budget:
        b -= 1
    while e * (b + 1) + s * (b + 1) ** 2 <= budget:
        b += 1
    return max(b, 1)


def plan_factors(N_a: int, N_c: int, n: int = 2, r: float = 1.0) -> TCShapePlan:
    """Choose factor shapes and the bond dimension for a reduction factor ``r``.

    >>> p = plan_factors(512, 2048, 2, 0.1)
    >>> p.a, p.c, p.b
    ((16, 32), (32, 64), 40)
    """
    if N_a < 2 or N_c < 2:
        raise ConfigError(f"degenerate TC shape {N_a}x{N_c}: both sides must be >= 2")
    if n < 2:
        raise ConfigError(f"chain length must be >= 2, got {n}")
    if not 0.0 < r <= 1.0:
        raise ConfigError(f"reduction factor must lie in (0, 1], got {r}")
    a, c = factorize(N_a, n), factorize(N_c, n)
    probe = TCShapePlan(n, a, c, 1, r)
    e, s = probe.bond_cost
    return probe.with_bond(solve_bond(e, s, r * N_a * N_c))


def param_count(obj) -> int:
    """Learnable scalars in a :class:`TCShapePlan` or :class:`TCLinear`."""
    plan = obj.plan if isinstance(obj, TCLinear) else obj
    return plan.params


class TCLinear(Module):
    """Linear map ``x @ W`` with ``W`` held implicitly as a tensor chain (no bias)."""

    def __init__(self, plan: TCShapePlan, rng: np.random.Generator | None = None,
                 factors=None, kind: str = "other", dtype=None):
        super().__init__()
        self.kind = kind
        self.plan = plan
        dtype = dtype or get_default_dtype()
        shapes = plan.factor_shapes()
        if factors is None and is_shape_only():
            self.factors = [placeholder(s, dtype) for s in shapes]
            for i, t in enumerate(self.factors):
                setattr(self, f"w{i}", t)
            return
        if factors is None:
            if rng is None:
                raise ValueError("TCLinear needs either factors or an rng")
            factors = _init_factors(plan, rng)
        if len(factors) != plan.n:
            raise ShapeError(f"expected {plan.n} factors, got {len(factors)}")
        self.factors: list[Tensor] = []
        for i, (f, shape) in enumerate(zip(factors, shapes)):
            data = f.data if isinstance(f, Tensor) else np.asarray(f)
            if data.shape != shape:
                raise ShapeError(f"factor {i} has shape {data.shape}, plan wants {shape}")
            t = Tensor(data, requires_grad=True, dtype=dtype)
            setattr(self, f"w{i}", t)
            self.factors.append(t)

    @property
    def d_in(self) -> int:
        return self.plan.N_a

    @property
    def d_out(self) -> int:
        return self.plan.N_c

    def __call__(self, x: Tensor) -> Tensor:
        return tc_forward(self, x)

    def matrix(self) -> Tensor:
        return materialize(self)

    def rows(self, ids: np.ndarray) -> Tensor:
        return tc_rows(self, ids)


def _init_factors(plan: TCShapePlan, rng: np.random.Generator) -> list[np.ndarray]:
    # each dense entry sums b**(n-1) products of n factor entries; pick the
    # factor variance so the dense entries get the Glorot variance
    target = 2.0 / (plan.N_a + plan.N_c)
    var = (target / plan.b ** (plan.n - 1)) ** (1.0 / plan.n)
    limit = math.sqrt(3.0 * var)
    return [rng.uniform(-limit, limit, size=s) for s in plan.factor_shapes()]


def _as_4d(layer: TCLinear, i: int) -> tuple[int, int, int, int]:
    p = layer.plan
    b_in = 1 if i == 0 else p.b
    b_out = 1 if i == p.n - 1 else p.b
    return p.a[i], b_in, b_out, p.c[i]


def tc_forward(layer: TCLinear, x: Tensor) -> Tensor:
    """Compute ``x @ W`` by sweeping the input through the factors left to right.

    The state after consuming factor ``i`` is ``[M, A_rest, b, C_done]`` where
    ``A_rest`` are the input modes not yet contracted and ``C_done`` the output
    modes produced so far; the dense matrix is never formed.
    """
    p = layer.plan
    if x.shape[-1] != p.N_a:
        raise ShapeError(f"tc_forward: input width {x.shape[-1]} != N_a={p.N_a}")
    lead = x.shape[:-1]
    M = math.prod(lead)
    state = x.reshape(M, p.N_a, 1, 1)  # [M, A, b_in, C]
    a_rest, c_done = p.N_a, 1
    for i, w in enumerate(layer.factors):
        ai, b_in, b_out, ci = _as_4d(layer, i)
        a_rest //= ai
        s = state.reshape(M, ai, a_rest, b_in, c_done).transpose(0, 2, 4, 1, 3)
        s = s.reshape(M * a_rest * c_done, ai * b_in) @ w.reshape(ai * b_in, b_out * ci)
        s = s.reshape(M, a_rest, c_done, b_out, ci).transpose(0, 1, 3, 2, 4)
        c_done *= ci
        state = s.reshape(M, a_rest, b_out, c_done)
    return state.reshape(*lead, p.N_c)


def materialize(layer: TCLinear) -> Tensor:
    """Contract all bond indices into the dense ``[N_a, N_c]`` matrix."""
    p = layer.plan
    ai, _, b_out, ci = _as_4d(layer, 0)
    T = layer.factors[0].reshape(ai, b_out, ci)  # [A, b, C]
    A, C = ai, ci
    for i in range(1, p.n):
        ai, b_in, b_out, ci = _as_4d(layer, i)
        w = layer.factors[i].reshape(ai, b_in, b_out, ci).transpose(1, 0, 2, 3)
        s = T.transpose(0, 2, 1).reshape(A * C, b_in) @ w.reshape(b_in, ai * b_out * ci)
        s = s.reshape(A, C, ai, b_out, ci).transpose(0, 2, 3, 1, 4)
        A, C = A * ai, C * ci
        T = s.reshape(A, b_out, C)
    return T.reshape(p.N_a, p.N_c)


def tc_rows(layer: TCLinear, ids: np.ndarray) -> Tensor:
    """Rows ``W[ids]`` of the implicit matrix, for TC embedding tables."""
    p = layer.plan
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= p.N_a):
        raise IndexError(f"row id out of range for {p.N_a} rows")
    flat = ids.reshape(-1)
    M = flat.size
    multi = np.unravel_index(flat, p.a)
    state = take_rows(layer.factors[0], multi[0]).transpose(0, 2, 1)  # [M, C, b]
    C = p.c[0]
    for i in range(1, p.n):
        ai, b_in, b_out, ci = _as_4d(layer, i)
        g = take_rows(layer.factors[i], multi[i]).reshape(M, b_in, b_out * ci)
        s = matmul(state, g).reshape(M, C, b_out, ci).transpose(0, 1, 3, 2)
        C *= ci
        state = s.reshape(M, C, b_out)
    return state.reshape(*ids.shape, p.N_c)


def decompose(W, plan: TCShapePlan | None = None, *, tol: float | None = None,
              n: int = 2) -> tuple[TCLinear, float]:
    """TT-SVD of a dense matrix into a :class:`TCLinear`.

    Either truncate every link to the bond of ``plan`` or, with ``tol``,
    keep the fewest singular values such that the relative Frobenius error
    stays below ``tol`` (split evenly across the ``n-1`` links). Links with
    lower rank are zero-padded to the common bond. Returns the layer and its
    relative reconstruction error.
    """
    W = np.asarray(W.data if isinstance(W, Tensor) else W)
    if W.ndim != 2:
        raise ShapeError(f"decompose: expected a matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise DataError("decompose: matrix contains non-finite entries")
    if (plan is None) == (tol is None):
        raise ValueError("decompose: pass exactly one of plan or tol")
    dtype = W.dtype if W.dtype in (np.float32, np.float64) else np.float64
    W = W.astype(np.float64)
    if plan is None:
        a, c = factorize(W.shape[0], n), factorize(W.shape[1], n)
        bond_cap = None
    else:
        if (plan.N_a, plan.N_c) != W.shape:
            raise ShapeError(f"decompose: plan is {plan.N_a}x{plan.N_c}, matrix is {W.shape}")
        a, c, n, bond_cap = plan.a, plan.c, plan.n, plan.b

    # interleave modes as (a1 c1)(a2 c2)... so each link splits one factor off
    order = [k for i in range(n) for k in (i, n + i)]
    T = W.reshape(*a, *c).transpose(order)
    norm = np.linalg.norm(W)
    delta = 0.0 if tol is None else tol * norm / math.sqrt(n - 1)

    cores, rank, rest = [], 1, T.reshape(-1)
    for i in range(n - 1):
        mat = rest.reshape(rank * a[i] * c[i], -1)
        U, S, Vt = np.linalg.svd(mat, full_matrices=False)
        if bond_cap is not None:
            keep = min(len(S), bond_cap)
        else:
            tail = np.sqrt(np.cumsum((S ** 2)[::-1]))[::-1]  # tail[k] = ||S[k:]||
            # singular values below the matrix_rank threshold are round-off
            cut = max(delta, S[0] * max(mat.shape) * np.finfo(np.float64).eps)
            keep = next((k for k in range(1, len(S)) if tail[k] <= cut), len(S))
        cores.append(U[:, :keep].reshape(rank, a[i], c[i], keep))
        rest = S[:keep, None] * Vt[:keep]
        rank = keep
    cores.append(rest.reshape(rank, a[-1], c[-1], 1))

    b = bond_cap if bond_cap is not None else max(core.shape[-1] for core in cores[:-1])
    if plan is None:
        plan = TCShapePlan(n, tuple(a), tuple(c), b, 1.0)
        plan = TCShapePlan(n, plan.a, plan.c, b, plan.r_actual)
    factors = []
    for i, core in enumerate(cores):
        r0, _, _, r1 = core.shape
        w = np.zeros((a[i], b if i > 0 else 1, b if i < n - 1 else 1, c[i]))
        w[:, :r0, :r1, :] = core.transpose(1, 0, 3, 2)
        if i == 0:
            w = w[:, 0]
        elif i == n - 1:
            w = w[:, :, 0]
        factors.append(w)
    layer = TCLinear(plan, factors=factors, dtype=dtype)
    approx = materialize(layer).data.astype(np.float64)
    err = float(np.linalg.norm(approx - W) / norm) if norm > 0 else float(np.linalg.norm(approx))
    return layer, err
