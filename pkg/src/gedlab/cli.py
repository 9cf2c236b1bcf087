"""Command-line pipeline: corpus generation and labeling, training,
evaluation, attention export, gradient checking, and the head sweep.

Exit codes: 0 success, 1 usage error, 2 data or model error.  All
diagnostics go to stderr; data goes to files or stdout.  Every run that
produces files also writes a <out>.manifest.json run record; file-free
commands print their record to stdout instead.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    LabeledSentence, build_corpus, dp_align_label, generate_synthetic_pairs,
    merge_annotator_labels, read_corpus_sentences, read_pair_file,
    read_vocab_file, write_corpus, write_pair_file, write_vocab_file,
)
from .encoder import ModelConfig
from .evaluation import attention_summary, evaluate, summary_to_csv
from .model import init_model, named_parameters
from .tensor import finite_diff_check, reset_graph
from .training import (
    TrainConfig, batch_loss, load_checkpoint, save_checkpoint, train,
)

log = logging.getLogger(__name__)

# from-scratch desk-scale defaults; the library defaults target
# fine-tuning a pretrained encoder and are both too slow and too
# regularized for a synthetic corpus the generator can extend at will
DESK_MODEL = dict(n_layers=4, hidden=64, self_attn_heads=4, ffn_dim=128,
                  layer_attn_heads=4, key_dim=16, max_len=32, n_classes=2,
                  dropout=0.0, attn_dropout=0.0, head_type="mhmla")
DESK_TRAIN = dict(learning_rate=1e-3, batch_size=16, epochs=10,
                  beta1=0.9, beta2=0.999, adam_eps=1e-8,
                  dropout=0.0, attn_dropout=0.0)

_MODEL_FLAGS = {"layers": "n_layers", "hidden": "hidden",
                "self_attn_heads": "self_attn_heads",
                "heads": "layer_attn_heads", "key_dim": "key_dim",
                "ffn_dim": "ffn_dim", "max_len": "max_len",
                "head": "head_type", "dropout": "dropout",
                "attn_dropout": "attn_dropout"}
_TRAIN_FLAGS = {"learning_rate": "learning_rate", "batch_size": "batch_size",
                "epochs": "epochs", "seed": "seed", "dropout": "dropout",
                "attn_dropout": "attn_dropout"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here wants 1."""

    def __init__(self, *args, **kwargs):
        # no prefix matching: --out must not silently mean --out-dir
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict
    outputs: dict
    duration_seconds: float
    checksums: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2,
                          sort_keys=True) + "\n"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(manifest: RunManifest, out_path: str) -> str:
    for name, p in manifest.outputs.items():
        manifest.checksums[name] = _sha256(p)
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    log.info("manifest written to %s", path)
    return path


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return loaded


def resolve_configs(args, vocab_size: int) -> tuple[ModelConfig, TrainConfig]:
    """defaults < config file < explicit flags, shared field names."""
    model_d = dict(DESK_MODEL)
    train_d = dict(DESK_TRAIN)
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    if getattr(args, "config", None):
        for key, value in _load_config_file(args.config).items():
            known = False
            if key in model_fields:
                model_d[key] = value
                known = True
            if key in train_fields:
                train_d[key] = value
                known = True
            if not known:
                raise ValueError(f"config file field {key!r} matches no "
                                 f"ModelConfig or TrainConfig field")
    for dest, fname in _MODEL_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            model_d[fname] = value
    for dest, fname in _TRAIN_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            train_d[fname] = value
    model_d["vocab_size"] = vocab_size
    return ModelConfig(**model_d), TrainConfig(**train_d)


# ------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    started = time.monotonic()
    pairs = generate_synthetic_pairs(args.n, seed=args.seed,
                                     error_rate=args.error_rate)
    write_pair_file(pairs, args.out)
    log.info("wrote %d pairs to %s", len(pairs), args.out)
    manifest = RunManifest(
        command="gen",
        config={"n": args.n, "error_rate": args.error_rate},
        seed=args.seed, inputs={}, outputs={"pairs": args.out},
        duration_seconds=time.monotonic() - started,
        metrics={"n_pairs": len(pairs)})
    _write_manifest(manifest, args.out)
    return 0


def cmd_label(args) -> int:
    started = time.monotonic()
    annotations = [read_pair_file(p) for p in args.pairs]
    first = annotations[0]
    for k, pairs in enumerate(annotations[1:], start=2):
        if len(pairs) != len(first):
            raise ValueError(
                f"{args.pairs[k - 1]}: {len(pairs)} pairs, expected "
                f"{len(first)} (all annotator files must align)")
        for i, (a, b) in enumerate(zip(first, pairs)):
            if a.source != b.source:
                raise ValueError(
                    f"{args.pairs[k - 1]}: pair {i + 1} source differs "
                    f"from the first annotator's")
    sentences = []
    for i, pair in enumerate(first):
        labels = [dp_align_label(ann[i].source, ann[i].corrected)
                  for ann in annotations]
        sentences.append(LabeledSentence(
            words=list(pair.source),
            labels=merge_annotator_labels(labels)))
    write_corpus(sentences, args.out)
    n_err = sum(s.labels.count("i") for s in sentences)
    log.info("labeled %d sentences (%d error tokens) to %s",
             len(sentences), n_err, args.out)
    manifest = RunManifest(
        command="label", config={"n_annotators": len(annotations)},
        seed=None,
        inputs={f"pairs_{k}": p for k, p in enumerate(args.pairs)},
        outputs={"corpus": args.out},
        duration_seconds=time.monotonic() - started,
        metrics={"n_sentences": len(sentences), "n_error_tokens": n_err})
    _write_manifest(manifest, args.out)
    return 0


def _read_training_corpus(path, max_len):
    sentences = read_corpus_sentences(path)
    if not sentences:
        raise ValueError(f"{path}: corpus is empty")
    return build_corpus(sentences, max_len=max_len)


def cmd_train(args) -> int:
    started = time.monotonic()
    # vocabulary comes from the training corpus, so configs resolve in
    # two steps: max_len first, then the full config
    probe_model, _ = resolve_configs(args, vocab_size=4)
    corpus = _read_training_corpus(args.corpus, probe_model.max_len)
    model_config, train_config = resolve_configs(
        args, vocab_size=corpus.vocab.n_pieces)
    result = train(corpus, model_config, train_config)
    save_checkpoint(result.model, args.out)
    vocab_path = f"{args.out}.vocab"
    write_vocab_file(corpus.vocab, vocab_path)
    log.info("checkpoint %s, vocabulary %s", args.out, vocab_path)
    metrics = {"epoch_losses": result.epoch_losses,
               "final_loss": result.epoch_losses[-1], "steps": result.n_steps}
    inputs = {"corpus": args.corpus}
    if args.dev:
        # evaluate the RELOADED model so `eval` on this checkpoint
        # reproduces the recorded numbers exactly
        reloaded = load_checkpoint(args.out)
        dev = build_corpus(read_corpus_sentences(args.dev),
                           vocab=corpus.vocab,
                           max_len=model_config.max_len)
        report = evaluate(reloaded, dev, seed=train_config.seed)
        metrics["dev"] = report.to_dict()
        inputs["dev"] = args.dev
        log.info("dev F0.5 %.4f (precision %.4f, recall %.4f)",
                 report.f_half, report.precision, report.recall)
    manifest = RunManifest(
        command="train",
        config={"model": result.model.config.to_dict(),
                "train": train_config.to_dict()},
        seed=train_config.seed, inputs=inputs,
        outputs={"checkpoint": args.out, "vocab": vocab_path},
        duration_seconds=time.monotonic() - started, metrics=metrics)
    _write_manifest(manifest, args.out)
    return 0


def _load_model_corpus(args):
    model = load_checkpoint(args.checkpoint)
    vocab = read_vocab_file(args.vocab)
    if vocab.n_pieces != model.config.vocab_size:
        raise ValueError(
            f"{args.vocab}: {vocab.n_pieces} pieces, checkpoint expects "
            f"{model.config.vocab_size}")
    corpus = build_corpus(read_corpus_sentences(args.corpus), vocab=vocab,
                          max_len=model.config.max_len)
    return model, corpus


def cmd_eval(args) -> int:
    started = time.monotonic()
    model, corpus = _load_model_corpus(args)
    report = evaluate(model, corpus, seed=args.seed)
    log.info("F0.5 %.4f on %d sentences / %d tokens",
             report.f_half, report.n_sentences, report.n_tokens)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        manifest = RunManifest(
            command="eval", config={"model": model.config.to_dict()},
            seed=args.seed,
            inputs={"checkpoint": args.checkpoint, "vocab": args.vocab,
                    "corpus": args.corpus},
            outputs={"report": args.out},
            duration_seconds=time.monotonic() - started,
            metrics=report.to_dict())
        _write_manifest(manifest, args.out)
    else:
        sys.stdout.write(report.to_json())
    return 0


def cmd_attn(args) -> int:
    started = time.monotonic()
    model, corpus = _load_model_corpus(args)
    summary = attention_summary(model, corpus)
    csv_text = summary_to_csv(summary)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        manifest = RunManifest(
            command="attn", config={"model": model.config.to_dict()},
            seed=None,
            inputs={"checkpoint": args.checkpoint, "vocab": args.vocab,
                    "corpus": args.corpus},
            outputs={"summary": args.out},
            duration_seconds=time.monotonic() - started,
            metrics={"n_tokens": summary.n_tokens})
        _write_manifest(manifest, args.out)
    else:
        sys.stdout.write(csv_text)
    return 0


class _ProbeSentence:
    """Duck-typed stand-in for TokenizedSentence built from raw ids."""

    def __init__(self, sub_ids, first_sub_index, targets):
        self.sub_ids = sub_ids
        self.first_sub_index = first_sub_index
        self.words = ["w"] * len(first_sub_index)
        self.labels = ["i" if t else "c" for t in targets]


def random_probe_batch(config: ModelConfig, n_sentences: int,
                       rng: np.random.Generator) -> list[_ProbeSentence]:
    batch = []
    for _ in range(n_sentences):
        length = int(rng.integers(config.max_len // 2, config.max_len + 1))
        ids = rng.integers(4, config.vocab_size, size=length)
        words = sorted(rng.choice(length, size=max(1, length // 2),
                                  replace=False).tolist())
        labels = rng.integers(0, config.n_classes, size=len(words)).tolist()
        batch.append(_ProbeSentence(ids.tolist(), words, labels))
    return batch


def cmd_gradcheck(args) -> int:
    started = time.monotonic()
    config = ModelConfig(
        n_layers=args.layers, hidden=args.hidden,
        self_attn_heads=args.heads, layer_attn_heads=args.heads,
        ffn_dim=2 * args.hidden, vocab_size=args.vocab_size,
        max_len=args.max_len, dropout=0.0, attn_dropout=0.0)
    rng = np.random.default_rng(args.seed)
    # wide init keeps live-path gradients above finite-difference noise
    model = init_model(config, rng, init_std=0.5)
    batch = random_probe_batch(config, args.sentences, rng)

    def forward():
        return batch_loss(model, batch)

    reset_graph()
    report = finite_diff_check(forward, list(named_parameters(model)),
                               eps=args.eps, tol=args.tol)
    result = {
        "passed": report.passed,
        "max_rel_err": report.max_rel_err,
        "worst_param": report.worst_param,
        "n_checked": report.n_checked,
        "eps": args.eps, "tol": args.tol,
        "config": config.to_dict(), "seed": args.seed,
        "duration_seconds": time.monotonic() - started,
    }
    sys.stdout.write(json.dumps(result, indent=2) + "\n")
    if not report.passed:
        log.error("gradient check failed: max rel err %.3e at %s",
                  report.max_rel_err, report.worst_param)
        return 2
    log.info("gradient check passed: max rel err %.3e over %d components",
             report.max_rel_err, report.n_checked)
    return 0


def cmd_sweep(args) -> int:
    started = time.monotonic()
    head_counts = _parse_head_list(args.heads)
    args.heads = None  # the list is consumed; J is set per run below
    model_base, train_config = resolve_configs(args, vocab_size=4)
    corpus = _read_training_corpus(args.corpus, model_base.max_len)
    dev = build_corpus(read_corpus_sentences(args.dev), vocab=corpus.vocab,
                       max_len=model_base.max_len)
    os.makedirs(args.out_dir, exist_ok=True)
    vocab_path = os.path.join(args.out_dir, "vocab.txt")
    write_vocab_file(corpus.vocab, vocab_path)
    outputs = {"vocab": vocab_path}
    metrics = {}
    for j in head_counts:
        model_config = dataclasses.replace(
            model_base, vocab_size=corpus.vocab.n_pieces,
            layer_attn_heads=j)
        result = train(corpus, model_config, train_config)
        ckpt = os.path.join(args.out_dir, f"model_j{j}.ckpt")
        save_checkpoint(result.model, ckpt)
        report = evaluate(load_checkpoint(ckpt), dev, seed=train_config.seed)
        report_path = os.path.join(args.out_dir, f"report_j{j}.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        outputs[f"checkpoint_j{j}"] = ckpt
        outputs[f"report_j{j}"] = report_path
        metrics[f"j{j}"] = {"f_half": report.f_half,
                            "final_loss": result.epoch_losses[-1]}
        log.info("J=%d  dev F0.5 %.4f", j, report.f_half)
    manifest = RunManifest(
        command="sweep",
        config={"head_counts": head_counts,
                "train": train_config.to_dict()},
        seed=args.seed,
        inputs={"corpus": args.corpus, "dev": args.dev},
        outputs=outputs,
        duration_seconds=time.monotonic() - started, metrics=metrics)
    _write_manifest(manifest, os.path.join(args.out_dir, "sweep"))
    return 0


def _parse_head_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--heads wants comma-separated integers: {exc}")
    if not values:
        raise UsageError("--heads list is empty")
    return values


# ------------------------------------------------------------------ wiring

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, help="encoder layer count")
    p.add_argument("--hidden", type=int, help="hidden width")
    p.add_argument("--self-attn-heads", type=int,
                   help="self-attention heads per block")
    p.add_argument("--ffn-dim", type=int, help="feed-forward width")
    p.add_argument("--key-dim", type=int, help="layer-attention key width")
    p.add_argument("--max-len", type=int, help="sub-token budget per sentence")
    p.add_argument("--head", choices=["final", "avgl", "mhmla"],
                   help="classification head")
    p.add_argument("--dropout", type=float, help="dropout rate")
    p.add_argument("--attn-dropout", type=float,
                   help="attention-weight dropout rate")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--config", help="JSON file of config fields")


def build_parser() -> _Parser:
    parser = _Parser(prog="gedlab",
                     description="Sequence-labeling error-detection lab.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    def sub_parser(name, **kwargs):
        p = subparsers.add_parser(name, **kwargs)
        parser.commands[name] = p
        return p

    p = sub_parser("gen", help="generate synthetic sentence pairs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--error-rate", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub_parser("label", help="align pairs into a labeled corpus")
    p.add_argument("--pairs", action="append", required=True,
                   help="annotator pair file; repeat to union-merge")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub_parser("train", help="train a detector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", help="held-out corpus scored after training")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--heads", type=int, help="layer-attention heads")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path; stdout when omitted")
    p.set_defaults(func=cmd_eval)

    p = sub_parser("attn", help="export mean depth-attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="CSV path; stdout when omitted")
    p.set_defaults(func=cmd_attn)

    p = sub_parser("gradcheck",
                       help="finite-difference check on a fresh model")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--heads", type=int, default=2,
                   help="sets self- and layer-attention head counts")
    p.add_argument("--eps", type=float, default=1e-5,
                   help="finite-difference step; if the check fails with a "
                        "max gradient near 1e-7, retry with 1e-4: that is "
                        "rounding noise in the difference quotient, not a "
                        "wrong derivative")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--sentences", type=int, default=2)
    p.add_argument("--max-len", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub_parser("sweep", help="train and score one model per J")
    p.add_argument("--heads", required=True,
                   help="comma-separated layer-attention head counts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(message)s")
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        # the subcommand's usage line enumerates its valid flags
        chosen = next((parser.commands[a] for a in argv
                       if a in parser.commands), parser)
        sys.stderr.write(chosen.format_usage())
        return 1
    except (ValueError, OSError, FloatingPointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
