"""Central finite-difference checks of every differentiable operation.

All checks run in float64. A vector-valued function ``f`` is reduced to the
scalar ``sum(f(x) * R)`` for a fixed random ``R``, the analytic gradient comes
from :meth:`Tensor.backward`, and the numeric one from central differences
with step ``h``. The reported error of an input is
``||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, FLOOR)`` over
the probed entries, with ``FLOOR`` scaled by the magnitude of the summed terms
because the round-off of a central difference grows with them. The floor keeps
gradients that are zero by symmetry (a key bias under softmax, for one) from
turning round-off into a relative error of 1.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as F
from . import tensor as T
from .attention import Attention, GateKind, causal_mask, gate_streams, multi_head_attention
from .hsoftpos import HSoftPosConfig, HSoftPosEmbedding
from .tc import TCLinear, materialize, plan_factors, tc_forward, tc_rows
from .tensor import Tensor, precision

H = 1e-5
FLOOR = 1e-6


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = FLOOR) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def _probe(size: int, max_entries: int | None, rng) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, max_entries, replace=False))


def check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
          h: float = H, max_entries: int | None = None) -> float:
    """Worst relative gradient error of ``fn`` over the inputs that require grad."""
    out = fn(*inputs)
    R = rng.normal(size=out.shape)

    def objective():
        return float((fn(*inputs).data * R).sum())

    for t in inputs:
        t.grad = None
    total = (out * T.as_tensor(R, like=out)).sum()
    total.backward()
    floor = FLOOR * max(1.0, float(np.abs(out.data * R).sum()))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        idx = _probe(t.size, max_entries, rng)
        flat = t.data.reshape(-1)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            numeric[j] = (up - down) / (2 * h)
        worst = max(worst, rel_error(t.grad.reshape(-1)[idx], numeric, floor))
    return worst


def _u(rng, *shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, dtype=np.float64)


def op_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error per operation on random inputs in [-2, 2]."""
    rng = np.random.default_rng(seed)
    res: dict[str, float] = {}
    with precision("float64"):
        res["matmul"] = check(T.matmul, [_u(rng, 5, 7), _u(rng, 7, 3)], rng)
        res["matmul_batched"] = check(T.matmul, [_u(rng, 2, 3, 4, 5), _u(rng, 5, 2)], rng)
        res["add_broadcast"] = check(T.add, [_u(rng, 3, 4), _u(rng, 4)], rng)
        res["mul_broadcast"] = check(T.mul, [_u(rng, 2, 3, 4), _u(rng, 3, 1)], rng)
        res["div"] = check(T.div, [_u(rng, 3, 4), _u(rng, 3, 4, lo=0.5, hi=2.0)], rng)
        res["sigmoid"] = check(T.sigmoid, [_u(rng, 4, 5)], rng)
        gelu_pts = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]), requires_grad=True)
        res["gelu"] = max(check(T.gelu, [gelu_pts], rng), check(T.gelu, [_u(rng, 4, 5)], rng))
        x = rng.uniform(0.1, 2.0, size=(4, 5)) * rng.choice([-1, 1], size=(4, 5))
        res["relu"] = check(T.relu, [Tensor(x, requires_grad=True)], rng)
        res["exp"] = check(T.exp, [_u(rng, 6)], rng)
        res["sum_mean"] = check(lambda a: a.sum(axis=1) + a.mean(axis=1), [_u(rng, 3, 4)], rng)
        res["softmax"] = check(lambda a: F.softmax(a, axis=-1), [_u(rng, 4, 6)], rng)
        res["log_softmax"] = check(lambda a: F.log_softmax(a, axis=0), [_u(rng, 4, 6)], rng)
        res["layer_norm"] = check(F.layer_norm, [_u(rng, 3, 4, 6), _u(rng, 6), _u(rng, 6)], rng)
        targets = rng.integers(0, 7, size=(3, 4))
        mask = rng.random((3, 4)) > 0.3
        mask[0, 0] = True
        res["cross_entropy"] = check(lambda z: F.cross_entropy(z, targets, mask), [_u(rng, 3, 4, 7)], rng)
        res["causal_conv1d"] = check(lambda a, k, b: F.causal_conv1d(a, k, 2, b),
                                     [_u(rng, 2, 7, 3), _u(rng, 3, 3, 4), _u(rng, 4)], rng)
        res["reshape_transpose"] = check(lambda a: a.reshape(4, 6).transpose(1, 0), [_u(rng, 2, 3, 4)], rng)
        res["concat"] = check(lambda a, b: T.concat([a, b], axis=-1), [_u(rng, 2, 3, 3), _u(rng, 2, 3, 5)], rng)
        res["slice_channels"] = check(lambda a: T.slice_channels(a, 2, 6), [_u(rng, 2, 3, 10)], rng)
        ids = rng.integers(0, 6, size=(2, 5))
        res["take_rows"] = check(lambda w: T.take_rows(w, ids), [_u(rng, 6, 4)], rng)

        for n in (2, 3, 4):
            layer = TCLinear(plan_factors(24, 36, n, 0.5), rng, dtype=np.float64)
            x = _u(rng, 2, 3, 24)
            res[f"tc_forward_n{n}"] = check(lambda x, *w: tc_forward(layer, x), [x, *layer.factors], rng,
                                            max_entries=40)
            res[f"materialize_n{n}"] = check(lambda *w: materialize(layer), layer.factors, rng, max_entries=40)
            rows = rng.integers(0, 24, size=(2, 3))
            res[f"tc_rows_n{n}"] = check(lambda *w: tc_rows(layer, rows), layer.factors, rng, max_entries=40)

        for gate in GateKind:
            att = Attention(8, 2, gate, rng)
            q, k, v = _u(rng, 2, 4, 8), _u(rng, 2, 4, 8), _u(rng, 2, 4, 8)
            ws = [p for p in att.parameters()]

            def f(q, k, v, *w, att=att, gate=gate):
                return multi_head_attention(*gate_streams(gate, q, k, v, att), causal_mask(4, np.float64), att)

            res[f"attention_{gate.value}"] = check(f, [q, k, v, *ws], rng, max_entries=30)

        emb = HSoftPosEmbedding(HSoftPosConfig(d_model=16, n_vocab=9, l_sp=2, n_sp=3), rng, "encoder_embedding")
        tok = rng.integers(0, 9, size=(2, 7))
        res["hsoftpos_embed"] = check(lambda *w: emb(tok), emb.parameters(), rng, max_entries=30)
    return res


def model_suite(seed: int = 0, max_entries: int = 6) -> dict[str, float]:
    """Worst relative error per parameter tensor of the end-to-end small Anthe model.

    Dropout is disabled (eval mode) so the loss is a deterministic function.
    """
    from .model import build, preset

    rng = np.random.default_rng(seed)
    with precision("float64"):
        model = build(preset("anthe-small", n_vocab=12), seed).eval()
        src = rng.integers(4, 12, size=(2, 6))
        tgt = rng.integers(4, 12, size=(2, 6))
        src_real = np.ones(src.shape, bool)
        tgt_real = np.ones((2, 5), bool)
        src_real[1, -1] = tgt_real[1, -1] = False

        def loss_of():
            return F.cross_entropy(model(src, tgt[:, :-1], src_real, tgt_real), tgt[:, 1:], tgt_real)

        model.zero_grad()
        loss = loss_of()
        loss.backward()
        floor = FLOOR * max(1.0, abs(loss.item()))
        res = {}
        for name, p, _ in model.named_parameters():
            idx = _probe(p.size, max_entries, rng)
            flat = p.data.reshape(-1)
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + H
                up = loss_of().item()
                flat[i] = old - H
                down = loss_of().item()
                flat[i] = old
                numeric[j] = (up - down) / (2 * H)
            res[name] = rel_error(p.grad.reshape(-1)[idx], numeric, floor)
    return res
