"""SynOps report and spike/membrane rasters for a trained checkpoint.

    python3 scripts/profile_demo.py runs/desk/best.sgpt --tokens 1024 --raster runs/raster
"""
import argparse

from spikegpt import checkpoint
from spikegpt.data import CharTokenizer, bundled_corpus_path, read_corpus
from spikegpt.synops import dump_raster, profile_run, trace_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("ckpt")
    ap.add_argument("--tokens", type=int, default=1024)
    ap.add_argument("--raster", default=None)
    args = ap.parse_args()
    model, meta = checkpoint.load(args.ckpt)
    tok = CharTokenizer.from_meta(meta)
    text = read_corpus(bundled_corpus_path())
    ids = tok.encode(text[-args.tokens:])      # tail of the corpus = test split
    trace = trace_run(model, ids)
    ledger = profile_run(model, ids, trace)
    print(ledger.table())
    if ledger.synops:
        print(f"dense MACs / SynOps at binary sites: {ledger.binary_dense_macs / ledger.synops:.1f}x")
    if args.raster:
        for p in dump_raster(model, ids, args.raster, trace):
            print("wrote", p)


if __name__ == "__main__":
    main()
