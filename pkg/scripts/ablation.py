"""Spiking-mode ablation: identical seeds and data, one run per mode, train-loss curves.

    python3 scripts/ablation.py --steps 500 --out runs/ablation.json
"""
import argparse
import json

import numpy as np

from spikegpt.data import bundled_corpus_path, read_corpus
from spikegpt.synops import profile_run
from spikegpt.train import TrainRunConfig, train_lm


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--modes", nargs="+", default=["lif", "heaviside", "none"])
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--embd", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation.json")
    args = ap.parse_args()
    text = read_corpus(bundled_corpus_path())
    results = {}
    for mode in args.modes:
        cfg = TrainRunConfig(n_layer=args.layers, n_embd=args.embd, ctx_len=256, batch_size=4, mode=mode,
                             max_steps=args.steps, warmup_steps=min(500, args.steps), eval_interval=0,
                             eval_tokens=20000, seed=args.seed)
        res = train_lm(cfg, text)
        losses = [r["train_loss"] for r in res.metrics]
        rate = profile_run(res.model, res.val_ids[:1024]).mean_firing_rate if mode != "none" else None
        results[mode] = {"final50": float(np.mean(losses[-50:])), "val_bpc": res.metrics[-1].get("val_bpc"),
                         "firing_rate": rate, "curve": losses}
        print(f"{mode:<10} train loss (last 50) {results[mode]['final50']:.4f}  "
              f"val BPC {results[mode]['val_bpc']:.4f}  firing rate {rate}", flush=True)
    with open(args.out, "w") as f:
        json.dump(results, f)


if __name__ == "__main__":
    main()
