import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikegpt import checkpoint
from spikegpt.data import (UNK, CharTokenizer, ChunkBatcher, DataError, LaneBatcher, bundled_corpus_path, read_corpus,
                           read_tsv, split_ids)
from spikegpt.model import ModelConfig, SpikeGPT
from spikegpt.train import (ClassifyConfig, TrainRunConfig, attach_classifier, evaluate_classifier,
                            evaluate_lm, lr_at, train_classifier, train_lm)

TEXT = ("the quick brown fox jumps over the lazy dog. " * 40).strip()


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=1, max_size=60))
def test_tokenizer_round_trip(text):
    tok = CharTokenizer.from_text(text)
    ids = tok.encode(text)
    assert tok.decode(ids) == text
    assert ids.min() >= 1 and ids.max() < tok.vocab_size


def test_tokenizer_unknown_maps_to_zero():
    tok = CharTokenizer("abc")
    np.testing.assert_array_equal(tok.encode("axc"), [1, UNK, 3])
    assert CharTokenizer.from_meta(tok.to_meta()).chars == tok.chars


def test_bundled_corpus():
    text = read_corpus(bundled_corpus_path())
    assert 900_000 <= len(text) <= 1_100_000
    assert CharTokenizer.from_text(text).vocab_size < 128


def test_empty_corpus_errors(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(DataError):
        read_corpus(p)
    with pytest.raises(DataError):
        read_corpus(tmp_path / "missing.txt")


def test_split_fractions():
    a, b, c = split_ids(np.arange(1000))
    assert (len(a), len(b), len(c)) == (900, 50, 50)
    with pytest.raises(DataError):
        split_ids(np.arange(10), (0.5, 0.2, 0.2))


def test_lane_batcher_targets_and_contiguity():
    ids = np.arange(200)
    b = LaneBatcher(ids, 3, 10, np.random.default_rng(0))
    x1, y1, fresh1 = b.next()
    x2, _, fresh2 = b.next()
    assert fresh1 and not fresh2
    np.testing.assert_array_equal(y1, x1 + 1)
    np.testing.assert_array_equal(x2[:, 0], x1[:, -1] + 1)
    with pytest.raises(DataError):
        LaneBatcher(np.arange(20), 3, 10, np.random.default_rng(0))


def test_chunk_batcher_covers_each_chunk_once_per_epoch():
    ids = np.arange(101)
    b = ChunkBatcher(ids, 2, 10, np.random.default_rng(0))
    starts = []
    for _ in range(5):
        x, y, fresh = b.next()
        assert fresh
        np.testing.assert_array_equal(y, x + 1)
        np.testing.assert_array_equal(x - x[:, :1], np.tile(np.arange(10), (2, 1)))
        starts += list(x[:, 0])
    assert sorted(starts) == list(range(0, 100, 10)) and b.epoch == 0
    b.next()
    assert b.epoch == 1
    with pytest.raises(DataError):
        ChunkBatcher(np.arange(15), 2, 10, np.random.default_rng(0))


def test_read_tsv(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("1\thello\n0\tworld\twith tab\n\n")
    assert read_tsv(p) == ([1, 0], ["hello", "world\twith tab"])
    p.write_text("x\thello\n")
    with pytest.raises(DataError, match="integer"):
        read_tsv(p)


def test_warmup_schedule():
    cfg = TrainRunConfig(lr=6e-4, warmup_steps=500, max_steps=2000)
    assert lr_at(250, cfg) == pytest.approx(3e-4)
    assert lr_at(500, cfg) == pytest.approx(6e-4)
    assert lr_at(1800, cfg) == pytest.approx(6e-4)
    cos = TrainRunConfig(lr=6e-4, warmup_steps=500, max_steps=2000, schedule="cosine", min_lr_frac=0.1)
    assert lr_at(2000, cos) == pytest.approx(6e-5)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainRunConfig(split=(0.8, 0.1, 0.2))
    with pytest.raises(ValueError):
        TrainRunConfig(warmup_steps=10, max_steps=5)
    with pytest.raises(ValueError):
        TrainRunConfig.from_dict({"nope": 1})


def _tiny_run(tmp_path, name, seed=0):
    cfg = TrainRunConfig(batch_size=2, ctx_len=16, n_layer=1, n_embd=16, max_steps=6, warmup_steps=2,
                         eval_interval=3, seed=seed, ckpt_dir=str(tmp_path / name),
                         log_path=str(tmp_path / f"{name}.jsonl"))
    return train_lm(cfg, TEXT)


def test_seeded_runs_identical_logs_and_checkpoints(tmp_path):
    r1 = _tiny_run(tmp_path, "a")
    r2 = _tiny_run(tmp_path, "b")
    assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()
    assert (tmp_path / "a" / "last.sgpt").read_bytes() == (tmp_path / "b" / "last.sgpt").read_bytes()
    recs = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == list(range(1, 7))
    assert "val_bpc" in recs[2] and recs[2]["val_bpc"] == pytest.approx(recs[2]["val_loss"] / math.log(2))
    r3 = _tiny_run(tmp_path, "c", seed=1)
    assert r3.metrics[0]["train_loss"] != r1.metrics[0]["train_loss"]


def test_eval_after_reload_is_bit_identical(tmp_path):
    res = _tiny_run(tmp_path, "a")
    before = evaluate_lm(res.model, res.val_ids, 16)
    model, meta = checkpoint.load(tmp_path / "a" / "last.sgpt")
    assert evaluate_lm(model, res.val_ids, 16) == before
    assert CharTokenizer.from_meta(meta).chars == res.tokenizer.chars


def test_window_eval_equals_stream_eval():
    m = SpikeGPT(ModelConfig(n_layer=2, n_embd=16, vocab_size=20, seed=4))
    ids = np.random.default_rng(0).integers(0, 20, 300)
    w = evaluate_lm(m, ids, 32, how="window") / math.log(2)
    s = evaluate_lm(m, ids, how="stream") / math.log(2)
    assert abs(w - s) <= 1e-4


# -- classification --------------------------------------------------------------

def keyword_dataset(n, seed=0, length=24):
    """Random letters with exactly one of two planted keywords; label = which keyword."""
    rng = np.random.default_rng(seed)
    letters = np.array(list("abcdefghijklmnopqrstuvwxy "))
    texts, labels = [], []
    for _ in range(n):
        lab = int(rng.integers(0, 2))
        s = "".join(rng.choice(letters, length))
        p = int(rng.integers(0, length - 4))
        texts.append(s[:p] + ("zebra" if lab else "crane") + s[p:])
        labels.append(lab)
    return texts, labels


def test_keyword_classification_reaches_95_percent():
    texts, labels = keyword_dataset(400)
    tok = CharTokenizer("".join(texts))
    seqs = [tok.encode(t) for t in texts]
    base = SpikeGPT(ModelConfig(n_layer=2, n_embd=32, vocab_size=tok.vocab_size, seed=0))
    clf = attach_classifier(base, 2)
    train_classifier(clf, seqs[:360], labels[:360], ClassifyConfig())
    assert evaluate_classifier(clf, seqs[360:], labels[360:])["accuracy"] >= 0.95


def test_attach_classifier_copies_backbone():
    base = SpikeGPT(ModelConfig(n_layer=1, n_embd=8, vocab_size=10, seed=0))
    clf = attach_classifier(base, 3)
    for k, p in base.backbone_parameters().items():
        np.testing.assert_array_equal(p.data, clf.parameters()[k].data)
    assert clf.W_m.shape == (3, 8)


def test_empty_test_set_is_an_error():
    clf = attach_classifier(SpikeGPT(ModelConfig(n_layer=1, n_embd=8, vocab_size=10)), 2)
    with pytest.raises(DataError):
        evaluate_classifier(clf, [], [])


def test_label_permutation_permutes_confusion():
    texts, labels = keyword_dataset(60, seed=5)
    tok = CharTokenizer("".join(texts))
    seqs = [tok.encode(t) for t in texts]
    base = SpikeGPT(ModelConfig(n_layer=1, n_embd=16, vocab_size=tok.vocab_size, seed=0))
    cfg = ClassifyConfig(epochs=2)
    a = attach_classifier(base, 2)
    b = attach_classifier(base, 2)
    b.W_m.data[...] = a.W_m.data[::-1]
    train_classifier(a, seqs, labels, cfg)
    flipped = [1 - y for y in labels]
    train_classifier(b, seqs, flipped, cfg)
    # with the head rows swapped, flipped labels give the mirrored training run
    ca = np.array(evaluate_classifier(a, seqs, labels)["confusion"])
    cb = np.array(evaluate_classifier(b, seqs, flipped)["confusion"])
    assert ca.sum() == cb.sum() == 60
    # the confusion of b over flipped labels is a's confusion with both axes permuted
    np.testing.assert_array_equal(cb, ca[::-1, ::-1])
