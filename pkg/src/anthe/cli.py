"""Command-line entry point: ``anthe <subcommand> [options]``."""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CONFIG_KEY, PLAN_SUFFIX, load_checkpoint, plan_record, read_records, write_records
from .data import BOS, EOS, PAD, Vocabulary, detokenize, ingest_parallel_corpus, make_batch, synth_task, tokenize
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .model import PRESETS, ArchConfig, apply_overrides, build, count_params, greedy_decode, parse_config, preset
from .runtime import sequential
from .tc import decompose, param_count, plan_factors
from .train import TrainConfig, TrainingDiverged, evaluate, perplexity, train_loop


class UsageError(Exception):
    pass


def _emit(args, lines: list[str], kv: dict) -> None:
    print("\n".join(lines))
    if getattr(args, "out", None):
        Path(args.out).write_text("".join(f"{k}={v}\n" for k, v in kv.items()), encoding="utf-8")


def _config(args) -> ArchConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = preset(args.preset or "anthe")
    return apply_overrides(cfg, args.set)


# subcommands -----------------------------------------------------------


def cmd_count_params(args) -> int:
    if args.all:
        lines, kv = [f"{'preset':<22} {'params':>12} {'reported':>9} {'dev':>7}"], {}
        for name, (_, reported) in PRESETS.items():
            total = count_params(apply_overrides(preset(name), args.set)).total
            dev = f"{total / reported - 1:+.2%}" if reported else ""
            rep = f"{reported / 1e6:.0f}M" if reported else ""
            lines.append(f"{name:<22} {total:>12,d} {rep:>9} {dev:>7}")
            kv[f"{name}.total"] = total
        _emit(args, lines, kv)
        return 0
    c = count_params(_config(args))
    kv = dict(c.as_dict())
    kv["output_fraction"] = f"{c.output_projection / c.total:.6f}"
    for t in c.tc:
        kv[f"tc.{t['name']}.r_actual"] = f"{t['r_actual']:.6g}"
    _emit(args, [c.format_table()], kv)
    return 0


def cmd_synth(args) -> int:
    lines = synth_task(args.kind, args.n_pairs, (args.min_len, args.max_len), args.alphabet,
                       args.seed, args.output)
    print(f"wrote {len(lines)} {args.kind} pairs to {args.output}")
    return 0


def cmd_train(args) -> int:
    data = ingest_parallel_corpus(args.data, args.tokenizer, args.seed)
    cfg = _config(args)
    if not any(s.split("=", 1)[0].strip() == "n_vocab" for s in args.set):
        cfg = cfg.replace(n_vocab=len(data.vocab))
    elif cfg.n_vocab < len(data.vocab):
        raise ConfigError(f"n_vocab={cfg.n_vocab} is smaller than the corpus vocabulary ({len(data.vocab)})")
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, patience=args.patience,
                       max_epochs=args.max_epochs, max_steps=args.max_steps, seed=args.seed,
                       log_path=args.log, checkpoint_path=args.checkpoint)
    model = build(cfg, args.seed)
    model.metadata = {"vocab": data.vocab.to_text(), "tokenizer": data.tokenizer}
    report = train_loop(model, data, tcfg)
    for rec in report.epochs:
        print(rec.line())
    train_loss = evaluate(model, data.train, args.batch_size)
    kv = {"epochs": len(report.epochs), "steps": report.steps, "best_epoch": report.best_epoch,
          "best_val_loss": f"{report.best_val_loss:.6f}", "train_loss": f"{train_loss:.6f}",
          "train_ppl": f"{perplexity(train_loss):.6f}", "stopped_early": str(report.stopped_early).lower()}
    _emit(args, [f"{k}: {v}" for k, v in kv.items()], kv)
    return 0


def _restore(args):
    model = load_checkpoint(args.checkpoint)
    if "vocab" not in model.metadata:
        raise CheckpointError(f"{args.checkpoint}: no vocabulary stored; was it written by `anthe train`?")
    return model, Vocabulary.from_text(model.metadata["vocab"]), model.metadata.get("tokenizer", "char")


def cmd_eval(args) -> int:
    model, vocab, kind = _restore(args)
    data = ingest_parallel_corpus(args.data, kind, args.seed, vocab=vocab)
    pairs = getattr(data, args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} is empty")
    loss = evaluate(model, pairs, args.batch_size)
    kv = {"split": args.split, "pairs": len(pairs), "loss": f"{loss:.6f}", "ppl": f"{perplexity(loss):.6f}"}
    _emit(args, [f"{k}: {v}" for k, v in kv.items()], kv)
    return 0


def cmd_generate(args) -> int:
    model, vocab, kind = _restore(args)
    texts = list(args.text)
    if args.input:
        texts += [ln.split("\t", 1)[0] for ln in Path(args.input).read_text(encoding="utf-8").splitlines() if ln]
    if not texts:
        raise UsageError("nothing to generate from; pass --text or --input")
    batch = make_batch([(vocab.encode(tokenize(t, kind)), []) for t in texts])
    ids = greedy_decode(model, batch.source, args.max_len, BOS, EOS, PAD, batch.source_real)
    outs = [detokenize(vocab.decode(row), kind) for row in ids]
    _emit(args, [f"{t}\t{o}" for t, o in zip(texts, outs)], {f"output.{i}": o for i, o in enumerate(outs)})
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import model_suite, op_suite

    tol = args.tolerance if args.tolerance is not None else (1e-4 if args.scope == "ops" else 1e-3)
    res = op_suite(args.seed) if args.scope == "ops" else model_suite(args.seed)
    width = max(map(len, res))
    lines = [f"{k:<{width}}  {v:.3e}  {'ok' if v < tol else 'FAIL'}" for k, v in res.items()]
    bad = [k for k, v in res.items() if not v < tol]
    worst = max(res.values())
    lines.append(f"worst {worst:.3e} (tolerance {tol:g}): {'pass' if not bad else 'FAIL'}")
    _emit(args, lines, {**{f"rel_err.{k}": f"{v:.6e}" for k, v in res.items()}, "worst": f"{worst:.6e}",
                        "pass": str(not bad).lower()})
    if bad:
        print(f"anthe: gradcheck failed for {len(bad)} op(s): {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def _load_matrix(path: str, name: str | None) -> tuple[np.ndarray, str]:
    if path.endswith(".npy"):
        return np.load(path), Path(path).stem
    records = read_records(path)
    mats = {k: v for k, v in records.items()
            if v.ndim == 2 and k != CONFIG_KEY and not k.endswith(PLAN_SUFFIX)}
    if name is None:
        if len(mats) != 1:
            raise UsageError(f"{path} holds {len(mats)} matrices; choose one with --tensor")
        name = next(iter(mats))
    if name not in mats:
        raise UsageError(f"{path} has no matrix named {name!r}")
    return mats[name].astype(np.float64), name


def cmd_decompose(args) -> int:
    if (args.r is None) == (args.tolerance is None):
        raise UsageError("give exactly one of --r or --tolerance")
    if args.r is not None and not 0.0 < args.r <= 1.0:
        raise UsageError(f"--r must lie in (0, 1], got {args.r}")
    if args.tolerance is not None and args.tolerance < 0:
        raise UsageError(f"--tolerance must be >= 0, got {args.tolerance}")
    W, name = _load_matrix(args.input, args.tensor)
    if W.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {W.shape}")
    if args.r is not None and args.r < 1.0:
        layer, err = decompose(W, plan_factors(*W.shape, args.n, args.r))
    else:
        # r = 1 asks for no compression: keep every nonzero singular value
        layer, err = decompose(W, tol=args.tolerance or 0.0, n=args.n)
    if args.save:
        records = {f"{name}.w{i}": f.data for i, f in enumerate(layer.factors)}
        records[name + PLAN_SUFFIX] = plan_record(layer)
        write_records(args.save, records)
    p = layer.plan
    kv = {"tensor": name, "shape": f"{W.shape[0]}x{W.shape[1]}", "n": p.n, "bond": p.b,
          "params_before": W.size, "params_after": param_count(layer),
          "r_actual": f"{p.r_actual:.6g}", "rel_error": f"{err:.6e}"}
    _emit(args, [f"{k}: {v}" for k, v in kv.items()], kv)
    return 0


# parser ----------------------------------------------------------------


def _model_opts(p) -> None:
    p.add_argument("--preset", help=f"named configuration ({', '.join(PRESETS)})")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anthe", description="Anthe architecture toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="also write results as key=value lines to this file")
    common.add_argument("--sequential", action="store_true",
                        help="single-threaded BLAS for bitwise-reproducible runs")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("count-params", parents=[common], help="parameter census of a configuration")
    _model_opts(p)
    p.add_argument("--all", action="store_true", help="tabulate every preset against its reported size")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("train", parents=[common], help="train on a TSV parallel corpus")
    _model_opts(p)
    p.add_argument("--data", required=True, help="UTF-8 TSV file of source<TAB>target lines")
    p.add_argument("--tokenizer", choices=("char", "word"), default="char")
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--patience", type=int, default=TrainConfig.patience)
    p.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--log", help="append one line per epoch to this file")
    p.add_argument("--checkpoint", help="write the best-validation model here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="loss and perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", parents=[common], help="greedy decoding from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", action="append", default=[], help="source string (repeatable)")
    p.add_argument("--input", help="file of sources, one per line (a TSV target column is ignored)")
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks (float64)")
    p.add_argument("--scope", choices=("ops", "model"), default="ops")
    p.add_argument("--tolerance", type=float, default=None,
                   help="max relative error (default 1e-4 for ops, 1e-3 for model)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("decompose", parents=[common], help="tensor-chain factorization of a matrix")
    p.add_argument("--input", required=True, help=".npy matrix or checkpoint file")
    p.add_argument("--tensor", help="record name when the checkpoint holds several matrices")
    p.add_argument("--r", type=float, help="target parameter ratio in (0, 1]; 1 keeps the full rank")
    p.add_argument("--tolerance", type=float, help="relative Frobenius truncation tolerance")
    p.add_argument("--n", type=int, default=2, help="number of chain factors")
    p.add_argument("--save", help="write the factors and plan in checkpoint format")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic copy/reverse corpus")
    p.add_argument("--kind", choices=("copy", "reverse"), default="copy")
    p.add_argument("--n-pairs", type=int, default=512)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--alphabet", default="abcdefghij")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with sequential() if args.sequential else contextlib.nullcontext():
            return args.func(args)
    except UsageError as exc:
        parser.exit(2, f"anthe {args.command}: usage error: {exc}\n")
    except (ConfigError, DataError, CheckpointError, ShapeError, TrainingDiverged,
            ValueError, IndexError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"anthe {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
