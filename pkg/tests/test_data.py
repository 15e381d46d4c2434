import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anthe.data import (BOS, EOS, PAD, UNK, Vocabulary, ingest_parallel_corpus, iter_batches, make_batch,
                        split_sizes, synth_task, tokenize)
from anthe.errors import DataError


def write(tmp_path, text, name="corpus.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_ten_lines_split_8_1_1(tmp_path):
    p = write(tmp_path, "".join(f"s{i}\tt{i}\n" for i in range(10)))
    c = ingest_parallel_corpus(p, "char", seed=0)
    assert (len(c.train), len(c.val), len(c.test)) == (8, 1, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5000))
def test_split_sizes_cover_everything(n):
    a, b, c = split_sizes(n)
    assert a + b + c == n and a == int(0.8 * n) and b == int(0.1 * n)


def test_char_tokens_with_markers(tmp_path):
    c = ingest_parallel_corpus(write(tmp_path, "ab\tba\n" * 10), "char", seed=0)
    batch = make_batch(c.train)
    a, b = c.vocab.stoi["a"], c.vocab.stoi["b"]
    assert batch.source[0].tolist() == [BOS, a, b, EOS]


def test_same_seed_same_split(tmp_path):
    p = write(tmp_path, "".join(f"{i} x\t{i} y\n" for i in range(40)))
    a = ingest_parallel_corpus(p, "word", seed=3)
    b = ingest_parallel_corpus(p, "word", seed=3)
    assert a.train == b.train and a.val == b.val and a.vocab.itos == b.vocab.itos
    c = ingest_parallel_corpus(p, "word", seed=4)
    assert c.train != a.train


def test_vocab_from_train_only(tmp_path):
    lines = [f"{ch}{ch}\t{ch}{ch}" for ch in "abcdefghij"]
    c = ingest_parallel_corpus(write(tmp_path, "\n".join(lines)), "char", seed=0)
    assert len(c.vocab) == 4 + 8
    assert all(s == [UNK, UNK] for s, _ in c.val + c.test)


def test_unknown_tokens_map_to_unk():
    v = Vocabulary(["a"])
    assert v.encode(["a", "q"]) == [4, UNK]


def test_missing_tab_reports_line(tmp_path):
    with pytest.raises(DataError, match=":2:"):
        ingest_parallel_corpus(write(tmp_path, "a\tb\nno tab here\n"), "char")


def test_empty_corpus(tmp_path):
    with pytest.raises(DataError):
        ingest_parallel_corpus(write(tmp_path, "\n\n"), "char")


def test_unknown_tokenizer():
    with pytest.raises(ValueError):
        tokenize("x", "bpe")


def test_vocab_text_round_trip():
    v = Vocabulary(["a", " ", "\t", "'", "é", "\\n"])
    assert Vocabulary.from_text(v.to_text()).itos == v.itos


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(4, 20), min_size=0, max_size=6),
                          st.lists(st.integers(4, 20), min_size=0, max_size=6)), min_size=1, max_size=5))
def test_batch_shift_and_masks(pairs):
    b = make_batch(pairs)
    full = np.concatenate([b.target_in[:, :1], b.target_out], axis=1)
    np.testing.assert_array_equal(b.target_in[:, 1:], full[:, 1:-1])
    assert np.all(b.target_in[:, 0] == BOS)
    assert np.array_equal(b.source_real, b.source != PAD)
    assert b.n_target_tokens == sum(len(t) + 1 for _, t in pairs)


def test_iter_batches_covers_all(tmp_path):
    pairs = [([4 + i], [4 + i]) for i in range(10)]
    seen = [int(s) for b in iter_batches(pairs, 3, np.random.default_rng(0)) for s in b.source[:, 1]]
    assert sorted(seen) == list(range(4, 14))


def test_synth_copy_and_reverse():
    src, tgt = synth_task("copy", 1, (3, 3), "abc", 0)[0].split("\t")
    assert len(src) == 3 and set(src) <= set("abc") and tgt == src
    line = synth_task("reverse", 1, (3, 3), "abc", 0)[0]
    s, t = line.split("\t")
    assert len(s) == 3 and t == s[::-1]


def test_synth_single_symbol_alphabet():
    assert synth_task("copy", 1, (3, 3), "a", 0) == ["aaa\taaa"]
    assert synth_task("reverse", 2, (3, 3), "a", 0) == ["aaa\taaa"] * 2


def test_synth_file_hash_reproducible(tmp_path):
    digests = set()
    for name in ("a.tsv", "b.tsv"):
        synth_task("copy", 512, (3, 8), "abcdefghij", 11, tmp_path / name)
        digests.add(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert len(digests) == 1


def test_synth_rejects_bad_input():
    with pytest.raises(ValueError):
        synth_task("copy", 1, (1, 2), "", 0)
    with pytest.raises(ValueError):
        synth_task("sort", 1, (1, 2), "ab", 0)
