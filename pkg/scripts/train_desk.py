"""Desk-scale character LM run (L=4, E=128, T=256, 2000 steps) on the bundled corpus.

    python3 scripts/train_desk.py --out runs/desk [--steps 2000] [--batch 4] [--seed 0]
"""
import argparse
import json
import math
import time
from pathlib import Path

from spikegpt.data import bundled_corpus_path, read_corpus
from spikegpt.train import TrainRunConfig, evaluate_lm, train_lm


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="lif")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainRunConfig(corpus=str(bundled_corpus_path()), n_layer=4, n_embd=128, ctx_len=256,
                         batch_size=args.batch, max_steps=args.steps, warmup_steps=min(500, args.steps),
                         eval_interval=250, eval_tokens=20000, seed=args.seed, mode=args.mode,
                         ckpt_dir=str(out), log_path=str(out / "metrics.jsonl"))
    t0 = time.time()
    res = train_lm(cfg, read_corpus(cfg.corpus),
                   on_metrics=lambda r: "val_bpc" in r and print(f"step {r['step']:>5}  loss {r['train_loss']:.4f}  "
                                                                 f"val_bpc {r['val_bpc']:.4f}", flush=True))
    test_bpc = evaluate_lm(res.model, res.test_ids, cfg.ctx_len) / math.log(2)
    summary = {"minutes": (time.time() - t0) / 60, "best_val_bpc": res.best_val_bpc, "test_bpc": test_bpc,
               "log2_vocab": math.log2(res.tokenizer.vocab_size), "params": res.model.num_parameters()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
