"""Train the small model on a synthetic copy (or reverse) task and report exact-match accuracy."""

import argparse
import tempfile
import time
from pathlib import Path

from anthe.checkpoint import save_checkpoint
from anthe.data import ingest_parallel_corpus, synth_task
from anthe.model import apply_overrides, build, count_params, preset
from anthe.runtime import sequential
from anthe.train import TrainConfig, evaluate, exact_match_rate, perplexity, train_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", choices=("copy", "reverse"), default="copy")
    ap.add_argument("--n-pairs", type=int, default=512)
    ap.add_argument("--gate", default="KgV")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--max-epochs", type=int, default=200)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--log", help="per-epoch log file")
    ap.add_argument("--checkpoint", help="save the trained model here")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "task.tsv"
        synth_task(args.kind, args.n_pairs, (3, 8), "abcdefghij", args.seed, path)
        data = ingest_parallel_corpus(path, "char", seed=args.seed)
    cfg = apply_overrides(preset("anthe-small", gate=args.gate, n_vocab=len(data.vocab)), args.set)
    model = build(cfg, args.seed)
    print(f"{len(data.train)} train / {len(data.val)} val pairs, vocab {len(data.vocab)}, "
          f"{count_params(cfg).total:,d} params")

    t0 = time.perf_counter()
    with sequential():
        rep = train_loop(model, data, TrainConfig(lr=args.lr, max_epochs=args.max_epochs,
                                                  patience=args.patience, seed=args.seed, log_path=args.log))
    for rec in rep.epochs[-3:]:
        print(rec.line())
    print(f"stopped after {len(rep.epochs)} epochs (best {rep.best_epoch}) in {time.perf_counter() - t0:.0f}s")
    print(f"train ppl {perplexity(evaluate(model, data.train)):.5f}  "
          f"test ppl {perplexity(evaluate(model, data.test)):.5f}")
    print(f"exact copies: train {exact_match_rate(model, data.train):.1%}  "
          f"test {exact_match_rate(model, data.test):.1%}")
    if args.checkpoint:
        model.metadata = {"vocab": data.vocab.to_text(), "tokenizer": "char"}
        save_checkpoint(model, args.checkpoint)


if __name__ == "__main__":
    main()
