"""Parallel-corpus ingestion, tokenization, batching and synthetic tasks."""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


def tokenize(text: str, kind: str) -> list[str]:
    if kind == "char":
        return list(text)
    if kind == "word":
        return text.split()
    raise ValueError(f"unknown tokenizer {kind!r}; use char or word")


def detokenize(tokens: Sequence[str], kind: str) -> str:
    return "".join(tokens) if kind == "char" else " ".join(tokens)


class Vocabulary:
    """Token <-> id map with ids 0-3 reserved for pad, bos, eos and unk."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_text(self) -> str:
        """One token per line, reserved entries excluded; inverse of ``from_text``."""
        return "\n".join(repr(t) for t in self.itos[len(RESERVED):])

    @classmethod
    def from_text(cls, text: str) -> Vocabulary:
        return cls([ast.literal_eval(line) for line in text.splitlines() if line])

    @classmethod
    def build(cls, sentences: Sequence[Sequence[str]]) -> Vocabulary:
        # sorted for a vocabulary that does not depend on line order
        return cls(sorted({t for s in sentences for t in s}))


@dataclass
class TokenBatch:
    """Padded id arrays for one batch; ``*_real`` masks mark non-pad tokens."""

    source: np.ndarray
    target_in: np.ndarray
    target_out: np.ndarray
    source_real: np.ndarray
    target_real: np.ndarray
    pad: int = PAD
    bos: int = BOS
    eos: int = EOS

    def __len__(self) -> int:
        return self.source.shape[0]

    @property
    def n_target_tokens(self) -> int:
        return int(self.target_real.sum())


Pair = tuple[list[int], list[int]]


def make_batch(pairs: Sequence[Pair], pad_to: tuple[int, int] | None = None) -> TokenBatch:
    """Pad encoded ``(source, target)`` pairs; both sides get ``bos ... eos``."""
    if not pairs:
        raise ValueError("make_batch needs at least one pair")
    srcs = [[BOS] + list(s) + [EOS] for s, _ in pairs]
    tgts = [[BOS] + list(t) + [EOS] for _, t in pairs]
    ts = max(len(s) for s in srcs)
    tt = max(len(t) for t in tgts)
    if pad_to is not None:
        ts, tt = max(ts, pad_to[0]), max(tt, pad_to[1])
    src = np.full((len(pairs), ts), PAD, dtype=np.int64)
    tgt = np.full((len(pairs), tt), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(zip(srcs, tgts)):
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
    return TokenBatch(
        source=src,
        target_in=tgt[:, :-1],
        target_out=tgt[:, 1:],
        source_real=src != PAD,
        target_real=tgt[:, 1:] != PAD,
    )


def iter_batches(pairs: Sequence[Pair], batch_size: int,
                 rng: np.random.Generator | None = None) -> Iterator[TokenBatch]:
    """Yield batches in order, or shuffled when an rng is given."""
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for lo in range(0, len(order), batch_size):
        yield make_batch([pairs[i] for i in order[lo: lo + batch_size]])


@dataclass
class Corpus:
    vocab: Vocabulary
    train: list[Pair]
    val: list[Pair]
    test: list[Pair]
    tokenizer: str = "char"


def read_tsv(path) -> list[tuple[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pairs = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected 'source<TAB>target'")
        src, tgt = line.split("\t", 1)
        pairs.append((src, tgt))
    if not pairs:
        raise DataError(f"{path}: corpus is empty")
    return pairs


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return n_train, n_val, n - n_train - n_val


def ingest_parallel_corpus(path, tokenizer_kind: str = "char", seed: int = 0,
                           vocab: Vocabulary | None = None) -> Corpus:
    """Read a TSV corpus, split it 80/10/10 and build the vocabulary from train.

    The split permutes line indices with ``seed``; val/test tokens missing
    from the train vocabulary map to ``<unk>``. Passing ``vocab`` reuses an
    existing vocabulary (e.g. one stored with a checkpoint) instead.
    """
    raw = read_tsv(path)
    tok = [(tokenize(s, tokenizer_kind), tokenize(t, tokenizer_kind)) for s, t in raw]
    order = np.random.default_rng(seed).permutation(len(tok))
    n_train, n_val, _ = split_sizes(len(tok))
    parts = np.split(order, [n_train, n_train + n_val])
    train_tok = [tok[i] for i in parts[0]]
    if vocab is None:
        vocab = Vocabulary.build([s for pair in train_tok for s in pair])

    def enc(idx):
        return [(vocab.encode(tok[i][0]), vocab.encode(tok[i][1])) for i in idx]

    return Corpus(vocab, enc(parts[0]), enc(parts[1]), enc(parts[2]), tokenizer_kind)


def synth_task(kind: str, n_pairs: int, len_range: tuple[int, int], alphabet: str,
               seed: int, path=None) -> list[str]:
    """Sample copy/reverse string pairs; optionally write them as a TSV file.

    Lengths are uniform over ``len_range`` (inclusive), characters uniform
    over ``alphabet``.
    """
    if not alphabet:
        raise ValueError("alphabet must be non-empty")
    if kind not in ("copy", "reverse"):
        raise ValueError(f"unknown task {kind!r}; use copy or reverse")
    lo, hi = len_range
    rng = np.random.default_rng(seed)
    symbols = list(alphabet)
    lines = []
    for _ in range(n_pairs):
        length = int(rng.integers(lo, hi + 1))
        src = "".join(rng.choice(symbols, size=length))
        tgt = src if kind == "copy" else src[::-1]
        lines.append(f"{src}\t{tgt}")
    if path is not None:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return lines
