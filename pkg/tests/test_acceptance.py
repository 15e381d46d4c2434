"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line. Run with
``pytest tests/test_acceptance.py -s`` to see them next to pytest's output.
"""

import math
import time

import numpy as np
import pytest

from anthe import gradcheck as G
from anthe.attention import GateKind
from anthe.checkpoint import load_checkpoint, save_checkpoint
from anthe.data import ingest_parallel_corpus, synth_task
from anthe.hsoftpos import HSoftPosConfig, HSoftPosEmbedding
from anthe.model import build, count_params, preset
from anthe.runtime import sequential
from anthe.tc import TCLinear, decompose, materialize, plan_factors, tc_forward
from anthe.tensor import Tensor
from anthe.train import TrainConfig, evaluate, exact_match_rate, perplexity, train_loop

CENSUS = {
    "transformer-shared": 60e6, "b": 93e6, "b-prime": 93e6, "b-prime-kgv": 93e6, "anthe-no-tc": 68e6,
    "tc-emb-0.2": 67e6, "tc-ff-0.1": 46e6, "anthe": 30e6,
    "tc-emb-0.8": 86e6, "tc-layer-0.2": 61e6, "tc-layer-0.8": 85e6, "tc-output-0.2": 80e6, "tc-output-0.8": 89e6,
    "anthe-no-patt": 29e6,
    "tc-layer-0.1-n2": 33e6,
}


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def copy_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("copy") / "copy.tsv"
    synth_task("copy", 512, (3, 8), "abcdefghij", 0, path)
    return ingest_parallel_corpus(path, "char", seed=0)


def small(corpus, **kw):
    return preset("anthe-small", n_vocab=len(corpus.vocab), **kw)


def test_1_parameter_census(report):
    t0 = time.perf_counter()
    devs = {name: count_params(preset(name)).total / size - 1 for name, size in CENSUS.items()}
    elapsed = time.perf_counter() - t0
    worst = max(devs, key=lambda k: abs(devs[k]))
    ok = all(abs(d) <= 0.03 for d in devs.values()) and elapsed < 1.0
    report(1, "parameter census within 3%", ok, f"worst {worst} {devs[worst]:+.2%}, {elapsed:.2f}s")


def test_2_gate_parity(report):
    ok = True
    for name in ("b-prime", "anthe", "anthe-small"):
        ref = count_params(preset(name, gate="none")).as_dict()
        ok &= all(count_params(preset(name, gate=g)).as_dict() == ref for g in GateKind)
    report(2, "census identical across the seven gates", ok, f"{len(GateKind)} gates x 3 presets")


def test_3_gradient_suite(report):
    t0 = time.perf_counter()
    ops = G.op_suite(seed=0)
    model = G.model_suite(seed=0)
    elapsed = time.perf_counter() - t0
    ok = max(ops.values()) < 1e-4 and max(model.values()) < 1e-3 and elapsed < 120
    report(3, "finite-difference gradients", ok,
           f"ops worst {max(ops.values()):.1e} over {len(ops)}, model worst {max(model.values()):.1e} "
           f"over {len(model)} params, {elapsed:.1f}s")


def test_4_tc_equivalence(report):
    rng = np.random.default_rng(0)
    sizes = [8, 12, 16, 18, 24, 27, 30, 32, 36, 48, 64, 72, 96, 128]
    t0 = time.perf_counter()
    worst, counts = 0.0, {2: 0, 3: 0, 4: 0}
    for i in range(100):
        n = 2 + i % 3
        plan = plan_factors(int(rng.choice(sizes)), int(rng.choice(sizes)), n, float(rng.uniform(0.05, 1.0)))
        layer = TCLinear(plan, rng)
        assert layer.factors[0].dtype == np.float32
        x = Tensor(rng.normal(size=(3, plan.N_a)))
        y = tc_forward(layer, x).data
        ref = x.data @ materialize(layer).data
        worst = max(worst, float(np.linalg.norm(y - ref) / np.linalg.norm(ref)))
        counts[n] += 1
    elapsed = time.perf_counter() - t0
    report(4, "tc_forward matches the materialized matrix", worst < 1e-5 and elapsed < 60,
           f"worst {worst:.1e} over {counts}, {elapsed:.1f}s")


def test_5_tt_svd(report):
    rng = np.random.default_rng(0)
    # rank-1 with Kronecker-structured factors has bond 1 for every split
    u = np.kron(rng.normal(size=8), rng.normal(size=8))
    v = np.kron(rng.normal(size=8), rng.normal(size=8))
    layer, err_r1 = decompose(np.outer(u, v), tol=0.0)
    W = rng.normal(size=(64, 64))
    err_full = max(decompose(W, tol=0.0, n=n)[1] for n in (2, 3, 4))
    plan = plan_factors(64, 64, 2, 1.0)
    errs = [decompose(W, plan.with_bond(b))[1] for b in range(1, 65)]
    monotone = all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    ok = layer.plan.b == 1 and err_r1 < 1e-10 and err_full < 1e-8 and monotone
    report(5, "TT-SVD recovery and monotone truncation", ok,
           f"rank-1 bond {layer.plan.b} err {err_r1:.1e}, full-rank err {err_full:.1e}")


def test_6_causality(report):
    rng = np.random.default_rng(0)
    ok = True
    for gate in GateKind:
        model = build(preset("anthe-small", gate=gate, n_vocab=16), 0).eval()
        src = rng.integers(4, 16, (2, 7))
        tgt = rng.integers(4, 16, (2, 9))
        for t in (0, 3, 7):
            tgt2 = tgt.copy()
            tgt2[:, t + 1:] = rng.integers(4, 16, tgt2[:, t + 1:].shape)
            a, b = model(src, tgt).data, model(src, tgt2).data
            ok &= a[:, : t + 1].tobytes() == b[:, : t + 1].tobytes()
    emb = HSoftPosEmbedding(HSoftPosConfig(64, 16, 2, 16), rng, "decoder_embedding")
    ids = rng.integers(4, 16, (2, 12))
    for t in range(11):
        ids2 = ids.copy()
        ids2[:, t + 1:] = rng.integers(4, 16, ids2[:, t + 1:].shape)
        ok &= emb(ids).data[:, : t + 1].tobytes() == emb(ids2).data[:, : t + 1].tobytes()
    report(6, "decoder logits and H-SoftPOS ignore future positions", ok, "bitwise, eval mode, seven gates")


def test_7_desk_scale_learning(report, copy_corpus):
    t0 = time.perf_counter()
    model = build(small(copy_corpus), 0)
    cfg = TrainConfig(lr=2e-3, batch_size=32, patience=10, max_epochs=200, seed=0)
    rep = train_loop(model, copy_corpus, cfg)
    ppl = perplexity(evaluate(model, copy_corpus.train))
    exact = exact_match_rate(model, copy_corpus.train)
    elapsed = time.perf_counter() - t0
    finite = {}
    for gate in GateKind:
        r = train_loop(build(small(copy_corpus, gate=gate), 0), copy_corpus,
                       TrainConfig(lr=2e-3, batch_size=32, max_steps=5, seed=0))
        finite[gate.value] = r.steps == 5 and all(math.isfinite(x) for x in r.step_losses)
    ok = ppl < 1.05 and exact >= 0.95 and elapsed < 600 and all(finite.values())
    report(7, "copy task learned at desk scale", ok,
           f"train PPL {ppl:.4f}, exact {exact:.1%} of {len(copy_corpus.train)}, {len(rep.epochs)} epochs, "
           f"{elapsed:.0f}s; 5-step finite loss for {sum(finite.values())}/7 gates")


def test_8_determinism(report, copy_corpus, tmp_path):
    cfg = TrainConfig(lr=2e-3, batch_size=32, max_steps=5, seed=1)
    with sequential():
        runs = [train_loop(build(small(copy_corpus), 1), copy_corpus, cfg).step_losses for _ in range(2)]
    same_losses = len(runs[0]) == 5 and np.array(runs[0]).tobytes() == np.array(runs[1]).tobytes()

    model = build(small(copy_corpus), 2)
    save_checkpoint(model, tmp_path / "m.anth")
    back = load_checkpoint(tmp_path / "m.anth")
    same_params = all(a.data.tobytes() == b.data.tobytes()
                      for a, b in zip(model.parameters(), back.parameters()))
    model.eval()
    back.eval()
    src, tgt = np.array([[1, 5, 6, 7, 2]]), np.array([[1, 5, 6]])
    same_out = model(src, tgt).data.tobytes() == back(src, tgt).data.tobytes()
    ok = same_losses and same_params and same_out and back.config == model.config
    report(8, "seeded runs and checkpoint round trip are bitwise", ok,
           f"losses {'equal' if same_losses else 'differ'}, params {'equal' if same_params else 'differ'}")
