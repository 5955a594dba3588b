"""Command-line entry point: train | translate | score | paths | synth.

Exit codes: 0 success, 1 validation problem (bad flags, bad config, bad
input files), 2 runtime failure (non-finite loss, unexpected errors).
Errors print as a single "error: ..." line on stderr. Every command
echoes its resolved configuration before doing work.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import data as datap
from . import discourse, metrics, training
from .checkpoint import CheckpointError
from .data import CorpusError, Vocab, build_vocab, load_corpus, save_corpus
from .discourse import LabelVocab
from .model import ModelConfig, ModelParams, translate_document
from .training import OptimizerState, TrainConfig, TrainingError

__all__ = ["main"]

_MODEL_KEYS = {
    "model_dim": int, "head_count": int, "ffn_dim": int, "enc_layers": int,
    "dec_layers": int, "path_layers": int, "context_window": int,
    "max_depth": int, "use_ds": bool, "use_han": bool,
}
_TRAIN_KEYS = {
    "stage": str, "lr_scale": float, "warmup": int, "batch_tokens": int,
    "label_smoothing": float, "dropout": float, "max_steps": int, "seed": int,
    "checkpoint_every": int, "log_every": int, "freeze_sentence": bool,
    "context_grad": bool, "init_from": str,
}
_DATA_KEYS = {"vocab_size": int}
_ALL_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_DATA_KEYS}


def _convert(key: str, raw: str):
    kind = _ALL_KEYS[key]
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered not in ("true", "false"):
            raise ValueError(f"key {key!r} expects true/false, got {raw!r}")
        return lowered == "true"
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ValueError(f"key {key!r}: {exc}") from exc


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' comments; unknown keys rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {stripped!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _ALL_KEYS:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = _convert(key, raw)
    return values


def _apply_overrides(values: dict, pairs) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ValueError(f"--set: unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def _echo(command: str, payload: dict) -> None:
    print(f"config: {json.dumps({'command': command, **payload}, sort_keys=True)}")


def _load_trained(ckpt_path):
    """Model params plus vocabularies stored next to a checkpoint."""
    arrays, opt_arrays, meta = training.load_model_arrays(ckpt_path)
    if "model_config" not in meta:
        raise CheckpointError(f"{ckpt_path}: no model_config in checkpoint metadata")
    cfg = ModelConfig.from_dict(meta["model_config"])
    params = ModelParams.init(cfg)
    missing, unexpected = params.load_arrays(arrays)
    if missing or unexpected:
        raise CheckpointError(
            f"{ckpt_path}: parameter names do not match the model "
            f"(missing {missing[:3]}, unexpected {unexpected[:3]})")
    ckpt_dir = os.path.dirname(os.path.abspath(ckpt_path))
    src_vocab = Vocab.load(os.path.join(ckpt_dir, "src_vocab.txt"))
    tgt_vocab = Vocab.load(os.path.join(ckpt_dir, "tgt_vocab.txt"))
    label_vocab = LabelVocab.load(os.path.join(ckpt_dir, "labels.txt"))
    if len(src_vocab) != cfg.src_vocab_size or len(tgt_vocab) != cfg.tgt_vocab_size:
        raise CheckpointError(f"{ckpt_path}: vocabulary files do not match the model dims")
    return params, src_vocab, tgt_vocab, label_vocab, opt_arrays, meta


def run_train(args) -> int:
    values = parse_config_file(args.config)
    values = _apply_overrides(values, args.set)
    train_kwargs = {k: v for k, v in values.items() if k in _TRAIN_KEYS}
    model_kwargs = {k: v for k, v in values.items() if k in _MODEL_KEYS}
    vocab_size = values.get("vocab_size", 30000)
    train_cfg = TrainConfig(**train_kwargs).validate()

    corpus = load_corpus(args.corpus)
    if not corpus:
        raise ValueError(f"{args.corpus}: corpus is empty")
    src_vocab = build_vocab(corpus, "src", vocab_size)
    tgt_vocab = build_vocab(corpus, "tgt", vocab_size)
    label_vocab = LabelVocab.from_trees([doc.tree for doc in corpus])
    model_cfg = ModelConfig(
        src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
        label_count=len(label_vocab), dropout=train_cfg.dropout,
        seed=train_cfg.seed, **model_kwargs).validate()
    params = ModelParams.init(model_cfg)

    start_step = 0
    opt_state: OptimizerState | None = None
    if args.resume:
        arrays, opt_arrays, meta = training.load_model_arrays(args.resume)
        if meta.get("model_config") != model_cfg.to_dict():
            raise CheckpointError(
                f"{args.resume}: checkpoint model config differs from the resolved config")
        missing, unexpected = params.load_arrays(arrays)
        if missing or unexpected:
            raise CheckpointError(f"{args.resume}: parameter names do not match")
        start_step = int(meta.get("step", 0))
        opt_state = OptimizerState.from_arrays(opt_arrays, step=start_step)
    elif train_cfg.init_from:
        arrays, _, _ = training.load_model_arrays(train_cfg.init_from)
        missing, unexpected = params.load_arrays(arrays)
        if unexpected:
            raise CheckpointError(
                f"{train_cfg.init_from}: unexpected parameters {unexpected[:3]}")
        bad = [n for n in missing if not n.startswith("han.")]
        if bad:
            raise CheckpointError(
                f"{train_cfg.init_from}: missing non-context parameters {bad[:3]}")

    examples = datap.corpus_examples(corpus, model_cfg.context_window,
                                     model_cfg.max_depth, src_vocab, tgt_vocab,
                                     label_vocab)
    os.makedirs(args.out, exist_ok=True)
    src_vocab.save(os.path.join(args.out, "src_vocab.txt"))
    tgt_vocab.save(os.path.join(args.out, "tgt_vocab.txt"))
    label_vocab.save(os.path.join(args.out, "labels.txt"))
    model_cfg.save(os.path.join(args.out, "config.json"))
    _echo("train", {"model": model_cfg.to_dict(),
                    "train": asdict(train_cfg),
                    "corpus": args.corpus, "out": args.out,
                    "examples": len(examples)})
    records = training.train(
        examples, params, train_cfg, out_dir=args.out, start_step=start_step,
        opt_state=opt_state, report_path=os.path.join(args.out, "report.jsonl"))
    if records:
        print(f"final: {json.dumps(records[-1])}")
    return 0


def run_translate(args) -> int:
    params, src_vocab, tgt_vocab, label_vocab, _, _ = _load_trained(args.ckpt)
    corpus = load_corpus(args.corpus)
    _echo("translate", {"ckpt": args.ckpt, "corpus": args.corpus,
                        "out": args.out, "beam": args.beam,
                        "alpha": args.alpha, "max_len": args.max_len})
    blocks = []
    for doc in corpus:
        results = translate_document(doc, params, src_vocab, tgt_vocab, label_vocab,
                                     beam_size=args.beam, max_len=args.max_len,
                                     alpha=args.alpha)
        blocks.append("\n".join(" ".join(tgt_vocab.decode(r.ids)) for r in results))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(blocks))
        if blocks:
            fh.write("\n")
    return 0


def _read_token_lines(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def run_score(args) -> int:
    hyp_lines = _read_token_lines(args.hyp)
    ref_lines = _read_token_lines(args.ref)
    _echo("score", {"hyp": args.hyp, "ref": args.ref})
    if len(hyp_lines) != len(ref_lines):
        raise ValueError(
            f"line count mismatch: {len(hyp_lines)} hypotheses vs "
            f"{len(ref_lines)} references")
    pairs = list(zip(hyp_lines, ref_lines))
    result = {"bleu": round(metrics.corpus_bleu(pairs), 2),
              "ter": round(metrics.corpus_ter(pairs), 2),
              "pairs": len(pairs)}
    print(json.dumps(result))
    return 0


def run_paths(args) -> int:
    corpus = load_corpus(args.corpus)
    _echo("paths", {"corpus": args.corpus, "doc": args.doc})
    if args.doc is not None:
        corpus = [doc for doc in corpus if doc.doc_id == args.doc]
        if not corpus:
            raise ValueError(f"unknown doc id {args.doc!r}")
    for doc in corpus:
        print(f"doc {doc.doc_id}")
        paths = discourse.token_paths(doc.tree, doc.source_token_count(),
                                      args.max_depth)
        pos = 0
        for sentence in doc.src_sentences:
            for token in sentence:
                print(f"{token}\t{' '.join(paths[pos])}")
                pos += 1
            print()
    return 0


def run_synth(args) -> int:
    relations = tuple(r for r in args.relations.split(",") if r)
    _echo("synth", {"seed": args.seed, "docs": args.docs,
                    "sentences": args.sentences, "vocab": args.vocab,
                    "relations": list(relations), "out": args.out})
    docs = datap.generate_synthetic_corpus(
        args.seed, args.docs, args.sentences, args.vocab, relation_set=relations)
    save_corpus(docs, args.out)
    print(f"wrote {len(docs)} documents to {args.out}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnmt",
        description="Document-level NMT with discourse paths and hierarchical context")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one stage of the model")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--corpus", required=True, help="JSON-lines training corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default="", help="checkpoint to resume from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable; flags win)")
    p.set_defaults(func=run_train)

    p = sub.add_parser("translate", help="translate a corpus with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--max-len", type=int, default=None, dest="max_len")
    p.set_defaults(func=run_translate)

    p = sub.add_parser("score", help="BLEU and TER of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=run_score)

    p = sub.add_parser("paths", help="print per-token discourse path labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--doc", default=None, help="restrict to one doc id")
    p.add_argument("--max-depth", type=int, default=16, dest="max_depth")
    p.set_defaults(func=run_paths)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--sentences", type=int, default=4)
    p.add_argument("--vocab", type=int, default=24)
    p.add_argument("--relations", default=",".join(datap.DEFAULT_RELATIONS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_synth)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("DNMT_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            print(f"error: DNMT_THREADS must be a positive integer, got {threads!r}",
                  file=sys.stderr)
            return 1
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that is a validation problem here
        code = exc.code if exc.code is not None else 0
        return 1 if code == 2 else code
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
