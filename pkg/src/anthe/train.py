"""Adam, early-stopped training and perplexity evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .checkpoint import save_checkpoint
from .data import BOS, EOS, PAD, Corpus, Pair, iter_batches, make_batch
from .tensor import no_grad


@dataclass
class TrainConfig:
    lr: float = 3.16e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    batch_size: int = 32
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    eval_every: int = 1
    max_steps: int | None = None
    log_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "batch_size", "max_epochs", "eval_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.patience < 1:
            raise ValueError("TrainConfig.patience must be >= 1")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update at constant learning rate, in place.

    A missing gradient counts as zero. Every gradient is checked before any
    parameter moves, so a non-finite one leaves the model untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_ppl: float
    elapsed_s: float

    def line(self) -> str:
        return (f"{self.epoch} {self.train_loss:.6f} {self.val_loss:.6f} "
                f"{self.val_ppl:.6f} {self.elapsed_s:.2f}")


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False

    @property
    def steps(self) -> int:
        return len(self.step_losses)


def batch_loss(model, batch):
    logits = model(batch.source, batch.target_in, batch.source_real, batch.target_real)
    return F.cross_entropy(logits, batch.target_out, batch.target_real)


def evaluate(model, pairs: list[Pair], batch_size: int = 32) -> float:
    """Mean cross-entropy per target token over ``pairs`` (eval mode)."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        with no_grad():
            for batch in iter_batches(pairs, batch_size):
                n = batch.n_target_tokens
                total += batch_loss(model, batch).item() * n
                count += n
    finally:
        model.train(was_training)
    return total / count


def perplexity(loss: float) -> float:
    return math.exp(loss)


def exact_match_rate(model, pairs: list[Pair], batch_size: int = 64, extra_len: int = 2) -> float:
    """Fraction of ``pairs`` whose greedy decode equals the target followed by eos."""
    from .model import greedy_decode

    hits = 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i: i + batch_size]
        batch = make_batch(chunk)
        max_len = max(len(t) for _, t in chunk) + extra_len
        out = greedy_decode(model, batch.source, max_len, BOS, EOS, PAD, batch.source_real)
        for row, (_, tgt) in zip(out.tolist(), chunk):
            hits += row[: len(tgt) + 1] == [*tgt, EOS]
    return hits / len(pairs)


def _snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params, snap):
    for k, p in params.items():
        p.data[...] = snap[k]


def train_loop(model, data: Corpus, config: TrainConfig) -> TrainReport:
    """Train with Adam until validation loss stalls for ``patience`` epochs.

    The best-validation parameters are restored on return. A non-finite
    loss restores the last finite state, checkpoints it (when a path is
    configured) and raises :class:`TrainingDiverged`.
    """
    rng = np.random.default_rng(config.seed)
    params = {name: t for name, t, _ in model.named_parameters()}
    state = AdamState()
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best = _snapshot(params)
    val_pairs = data.val or data.train
    log = Path(config.log_path) if config.log_path else None
    start = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, count = 0.0, 0
        for batch in iter_batches(data.train, config.batch_size, rng):
            before = _snapshot(params)
            loss = batch_loss(model, batch)
            value = loss.item()
            if not math.isfinite(value):
                _restore(params, before)
                if config.checkpoint_path:
                    save_checkpoint(model, config.checkpoint_path)
                raise TrainingDiverged(f"loss became {value} at step {report.steps + 1}")
            model.zero_grad()
            loss.backward()
            adam_step(params, {k: p.grad for k, p in params.items()}, state, config)
            report.step_losses.append(value)
            n = batch.n_target_tokens
            total += value * n
            count += n
            if config.max_steps and report.steps >= config.max_steps:
                break
        train_loss = total / max(count, 1)
        done = bool(config.max_steps and report.steps >= config.max_steps)
        if epoch % config.eval_every and not done and epoch != config.max_epochs:
            continue
        val_loss = evaluate(model, val_pairs, config.batch_size)
        rec = EpochRecord(epoch, train_loss, val_loss, perplexity(val_loss), time.perf_counter() - start)
        report.epochs.append(rec)
        if log is not None:
            with log.open("a") as fh:
                fh.write(rec.line() + "\n")
        stop = stopper.update(epoch, val_loss)
        if stopper.improved:
            best = _snapshot(params)
            if config.checkpoint_path:
                save_checkpoint(model, config.checkpoint_path)
        if stop:
            report.stopped_early = True
            break
        if done:
            break

    _restore(params, best)
    report.best_epoch, report.best_val_loss = stopper.best_epoch, stopper.best
    return report
