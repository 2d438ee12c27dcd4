"""Command-line entry point: train, eval, generate, classify, profile.

Exit codes: 0 success, 2 bad configuration or arguments, 3 data, corpus or
checkpoint problems, 4 numeric failure (non-finite activations/gradients).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import CharTokenizer, DataError, bundled_corpus_path, read_corpus, read_tsv, split_ids
from .model import generate
from .neurons import SPIKING_MODES, VocabularyError
from .synops import dump_raster, profile_run, trace_run
from .train import (ClassifyConfig, TrainRunConfig, attach_classifier, evaluate_classifier, evaluate_lm,
                    split_examples, train_classifier, train_lm)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("spikegpt")


class ConfigError(Exception):
    pass


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode())
        return json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _tokenizer(meta: dict) -> CharTokenizer:
    return CharTokenizer.from_meta(meta)


# -- subcommands ---------------------------------------------------------------

def cmd_train(args) -> int:
    conf = load_config(args.config)
    conf = conf.get("train", conf)
    overrides = {"seed": args.seed, "mode": args.mode, "max_steps": args.steps, "corpus": args.corpus,
                 "ckpt_dir": args.ckpt, "log_path": args.log}
    conf.update({k: v for k, v in overrides.items() if v is not None})
    conf.setdefault("corpus", str(bundled_corpus_path()))
    try:
        cfg = TrainRunConfig.from_dict(conf)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if cfg.mode not in SPIKING_MODES:
        raise ConfigError(f"mode must be one of {SPIKING_MODES}")

    def report(rec):
        if "val_bpc" in rec and not args.json:
            print(f"step {rec['step']:>6}  loss {rec['train_loss']:.4f}  val_bpc {rec['val_bpc']:.4f}", flush=True)

    res = train_lm(cfg, on_metrics=report)
    last = res.metrics[-1]
    payload = {"steps": last["step"], "train_loss": last["train_loss"], "best_val_bpc": res.best_val_bpc,
               "vocab_size": res.tokenizer.vocab_size, "ckpt_dir": cfg.ckpt_dir, "config": asdict(cfg)}
    _emit(args, payload, f"done: {last['step']} steps, best val BPC {res.best_val_bpc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    tok = _tokenizer(meta)
    text = read_corpus(args.corpus or bundled_corpus_path())
    ids = tok.encode(text)
    split = tuple(meta.get("train_config", {}).get("split", (0.9, 0.05, 0.05)))
    parts = dict(zip(("train", "val", "test"), split_ids(ids, split)))
    parts["all"] = ids
    target = parts[args.split]
    loss = evaluate_lm(model, target, how=args.how, max_tokens=args.max_tokens)
    bpc = loss / math.log(2)
    payload = {"split": args.split, "tokens": int(min(len(target) - 1, args.max_tokens or len(target))),
               "loss": loss, "bpc": bpc, "ppl": math.exp(loss)}
    _emit(args, payload, f"{args.split}: loss {loss:.4f} nats  BPC {bpc:.4f}  PPL {math.exp(loss):.3f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    tok = _tokenizer(meta)
    prompt = tok.encode(args.prompt)
    if len(prompt) == 0:
        raise ConfigError("prompt must not be empty")
    rng = np.random.default_rng(args.seed)
    out = generate(model, prompt, args.tokens, temperature=args.temperature, top_k=args.top_k, rng=rng)
    text = tok.decode(out)
    _emit(args, {"prompt": args.prompt, "completion": text, "tokens": out}, text)
    return EXIT_OK


def _encode_examples(tok: CharTokenizer, texts: list[str]) -> list[np.ndarray]:
    seqs = [tok.encode(t) for t in texts]
    if any(len(s) == 0 for s in seqs):
        raise DataError("classification rows must have non-empty text")
    return seqs


def cmd_classify(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    tok = _tokenizer(meta)
    labels, texts = read_tsv(args.data)
    if args.action == "eval":
        if model.cfg.n_classes == 0:
            raise ConfigError("checkpoint has no classification head; run 'classify train' first")
        result = evaluate_classifier(model, _encode_examples(tok, texts), labels)
        _emit(args, result, f"accuracy {result['accuracy']:.4f} on {result['n']} examples")
        return EXIT_OK

    conf = load_config(args.config)
    conf = conf.get("classify", conf)
    if args.seed is not None:
        conf["seed"] = args.seed
    if args.epochs is not None:
        conf["epochs"] = args.epochs
    try:
        ccfg = ClassifyConfig(**conf)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if not labels:
        raise DataError(f"{args.data} has no examples")
    if min(labels) < 0:
        raise DataError("labels must be non-negative integers")
    seqs = _encode_examples(tok, texts)
    if args.test:
        test_labels, test_texts = read_tsv(args.test)
        train_idx, test_idx = np.arange(len(seqs)), None
        test_seqs = _encode_examples(tok, test_texts)
    else:
        train_idx, test_idx = split_examples(len(seqs), ccfg.test_frac, ccfg.seed)
        test_seqs = [seqs[i] for i in test_idx]
        test_labels = [labels[i] for i in test_idx]
    n_classes = max(labels + list(test_labels)) + 1
    clf = attach_classifier(model, n_classes, ccfg.seed)
    history = train_classifier(clf, [seqs[i] for i in train_idx], [labels[i] for i in train_idx], ccfg)
    result = evaluate_classifier(clf, test_seqs, test_labels)
    result["loss_history"] = history
    if args.out:
        checkpoint.save(clf, args.out, meta)
        result["checkpoint"] = str(args.out)
    _emit(args, result, f"held-out accuracy {result['accuracy']:.4f} on {result['n']} examples")
    return EXIT_OK


def cmd_profile(args) -> int:
    model, meta = checkpoint.load(args.ckpt)
    tok = _tokenizer(meta)
    text = args.text if args.text is not None else read_corpus(args.text_file)
    tokens = tok.encode(text)
    if len(tokens) == 0:
        raise DataError("nothing to profile: empty text")
    trace = trace_run(model, tokens)
    ledger = profile_run(model, tokens, trace)
    payload = ledger.to_dict()
    if args.raster:
        payload["raster_files"] = [str(p) for p in dump_raster(model, tokens, args.raster, trace)]
    _emit(args, payload, ledger.table())
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikegpt", description="Spiking RWKV character language model")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, ckpt_required=True):
        sp.add_argument("--json", action="store_true", help="print one JSON object instead of text")
        sp.add_argument("--seed", type=int, default=None)
        if ckpt_required:
            sp.add_argument("--ckpt", required=True, help="checkpoint file")

    t = sub.add_parser("train", help="train a language model from scratch")
    common(t, ckpt_required=False)
    t.add_argument("--config", help="JSON or TOML file with training fields")
    t.add_argument("--corpus", help="UTF-8 text file (default: bundled corpus)")
    t.add_argument("--ckpt", help="checkpoint directory (best.sgpt, last.sgpt)")
    t.add_argument("--log", help="metrics log, one JSON object per line")
    t.add_argument("--steps", type=int, help="override max_steps")
    t.add_argument("--mode", choices=SPIKING_MODES)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="bits per character and perplexity")
    common(e)
    e.add_argument("--corpus")
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--how", choices=("window", "stream"), default="window")
    e.add_argument("--max-tokens", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("generate", help="sample a continuation of a prompt")
    common(g)
    g.add_argument("--prompt", required=True)
    g.add_argument("--tokens", type=int, default=200)
    g.add_argument("--temperature", type=float, default=0.0, help="0 means greedy")
    g.add_argument("--top-k", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("classify", help="fine-tune or evaluate a sequence classifier")
    common(c)
    c.add_argument("action", choices=("train", "eval"))
    c.add_argument("--data", required=True, help="TSV of label<TAB>text")
    c.add_argument("--test", help="held-out TSV (default: seeded 10%% split of --data)")
    c.add_argument("--config")
    c.add_argument("--epochs", type=int)
    c.add_argument("--out", help="where to save the fine-tuned checkpoint")
    c.set_defaults(func=cmd_classify)

    pr = sub.add_parser("profile", help="SynOps report and spike rasters")
    common(pr)
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--text-file")
    pr.add_argument("--raster", help="directory for per-site spike/membrane CSVs")
    pr.set_defaults(func=cmd_profile)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        code, msg = EXIT_CONFIG, str(e)
    except (DataError, checkpoint.CheckpointError, VocabularyError, FileNotFoundError, OSError) as e:
        code, msg = EXIT_DATA, str(e)
    except FloatingPointError as e:
        code, msg = EXIT_NUMERIC, str(e)
    except ValueError as e:
        code, msg = EXIT_CONFIG, str(e)
    if args.json:
        print(json.dumps({"error": msg, "exit_code": code}))
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
