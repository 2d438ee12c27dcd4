"""Language-model training with warmup, BPC evaluation, classification fine-tuning."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from . import tensor as tn
from .data import CharTokenizer, ChunkBatcher, DataError, LaneBatcher, holdout_split, read_corpus, split_ids
from .model import ModelConfig, SpikeGPT, lm_loss, nlu_loss

log = logging.getLogger(__name__)


@dataclass
class TrainRunConfig:
    corpus: str = ""
    split: tuple = (0.9, 0.05, 0.05)
    batch_size: int = 8
    ctx_len: int = 256
    n_layer: int = 4
    n_embd: int = 128
    mode: str = "lif"
    tie_head: bool = True
    lr: float = 6e-4
    warmup_steps: int = 500
    schedule: str = "constant"
    batching: str = "lanes"
    min_lr_frac: float = 0.1
    grad_clip: float = 0.0
    dropout: float = 0.03
    max_steps: int = 2000
    eval_interval: int = 250
    eval_tokens: int = 0
    seed: int = 0
    dtype: str = "float32"
    ckpt_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        self.split = tuple(self.split)
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if self.warmup_steps > self.max_steps:
            raise ValueError("warmup_steps must not exceed max_steps")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")
        if self.batching not in ("shuffle", "lanes"):
            raise ValueError("batching must be 'shuffle' or 'lanes'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(n_layer=self.n_layer, n_embd=self.n_embd, ctx_len=self.ctx_len,
                           vocab_size=vocab_size, mode=self.mode, dropout=self.dropout,
                           tie_head=self.tie_head, dtype=self.dtype, seed=self.seed)


def lr_at(step: int, cfg: TrainRunConfig) -> float:
    """Linear warmup to ``cfg.lr`` over ``warmup_steps`` (1-based), then constant or cosine."""
    if cfg.warmup_steps and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.schedule == "cosine":
        span = max(cfg.max_steps - cfg.warmup_steps, 1)
        frac = min((step - cfg.warmup_steps) / span, 1.0)
        lo = cfg.lr * cfg.min_lr_frac
        return lo + 0.5 * (cfg.lr - lo) * (1.0 + math.cos(math.pi * frac))
    return cfg.lr


def clip_grad_norm(params: dict[str, tn.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                          for p in params.values() if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def evaluate_lm(model: SpikeGPT, ids: np.ndarray, ctx: int | None = None, how: str = "window",
                max_tokens: int = 0) -> float:
    """Mean next-token loss (nats) over ``ids`` from a fresh state.

    ``window`` feeds consecutive ``ctx``-long chunks with the state carried
    between them; ``stream`` feeds one token at a time. Both see the same
    causal context, so they agree up to rounding.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if max_tokens:
        ids = ids[:max_tokens + 1]
    if len(ids) < 2:
        raise DataError("need at least two tokens to evaluate")
    x, y = ids[:-1], ids[1:]
    ctx = ctx or model.cfg.ctx_len
    step = ctx if how == "window" else 1
    if how not in ("window", "stream"):
        raise ValueError(f"unknown evaluation mode {how!r}")
    total = 0.0
    state = None
    with tn.no_grad():
        for s in range(0, len(x), step):
            logits, state = model.forward_lm(x[s:s + step], state)
            lp = tn.log_softmax(logits.data.astype(np.float64))
            tgt = y[s:s + step]
            total -= lp[np.arange(len(tgt)), tgt].sum()
    return total / len(x)


@dataclass
class TrainResult:
    model: SpikeGPT
    tokenizer: CharTokenizer
    metrics: list[dict] = field(default_factory=list)
    best_val_bpc: float = float("inf")
    val_ids: np.ndarray | None = None
    test_ids: np.ndarray | None = None


def train_lm(cfg: TrainRunConfig, text: str | None = None,
             on_metrics: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch on a character corpus; deterministic given ``cfg.seed``."""
    if text is None:
        text = read_corpus(cfg.corpus)
    if not text:
        raise DataError("corpus is empty")
    tok = CharTokenizer.from_text(text)
    ids = tok.encode(text)
    train_ids, val_ids, test_ids = split_ids(ids, cfg.split)
    model = SpikeGPT(cfg.model_config(tok.vocab_size))
    params = model.parameters()
    adam = tn.AdamState(lr=cfg.lr)
    make_batcher = ChunkBatcher if cfg.batching == "shuffle" else LaneBatcher
    batcher = make_batcher(train_ids, cfg.batch_size, cfg.ctx_len, np.random.default_rng(cfg.seed + 1))
    ckpt_dir = Path(cfg.ckpt_dir) if cfg.ckpt_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_f = open(cfg.log_path, "w") if cfg.log_path else None
    result = TrainResult(model, tok, val_ids=val_ids, test_ids=test_ids)
    # output locations stay out of the checkpoint so identical runs give identical bytes
    meta = dict(tok.to_meta(), train_config={k: v for k, v in asdict(cfg).items()
                                             if k not in ("ckpt_dir", "log_path")})
    state = None
    t0 = time.time()
    try:
        for step in range(1, cfg.max_steps + 1):
            x, y, fresh = batcher.next()
            if fresh:
                state = None
            logits, state = model.forward_lm(x, state, training=True)
            loss = lm_loss(logits, y)
            model.zero_grad()
            loss.backward()
            gnorm = clip_grad_norm(params, cfg.grad_clip)
            lr = lr_at(step, cfg)
            tn.adam_step(params, adam, lr=lr)
            rec = {"step": step, "lr": lr, "train_loss": float(loss.data), "grad_norm": gnorm}
            last = step == cfg.max_steps
            if len(val_ids) > 1 and (last or (cfg.eval_interval and step % cfg.eval_interval == 0)):
                vloss = evaluate_lm(model, val_ids, cfg.ctx_len, max_tokens=cfg.eval_tokens)
                rec["val_loss"] = vloss
                rec["val_bpc"] = vloss / math.log(2)
                if rec["val_bpc"] < result.best_val_bpc:
                    result.best_val_bpc = rec["val_bpc"]
                    if ckpt_dir:
                        checkpoint.save(model, ckpt_dir / "best.sgpt", meta)
                log.info("step %d loss %.4f val_bpc %.4f (%.0fs)", step, rec["train_loss"],
                         rec["val_bpc"], time.time() - t0)
            result.metrics.append(rec)
            if log_f:
                log_f.write(json.dumps(rec) + "\n")
                log_f.flush()
            if on_metrics:
                on_metrics(rec)
    finally:
        if log_f:
            log_f.close()
    if ckpt_dir:
        checkpoint.save(model, ckpt_dir / "last.sgpt", meta)
    return result


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class ClassifyConfig:
    epochs: int = 8
    batch_size: int = 16
    lr: float = 3e-3
    finetune_backbone: bool = True
    test_frac: float = 0.1
    seed: int = 0


def attach_classifier(model: SpikeGPT, n_classes: int, seed: int = 0) -> SpikeGPT:
    """Return a copy of ``model`` sharing its backbone weights plus a fresh head."""
    cfg = ModelConfig.from_dict(dict(model.cfg.to_dict(), n_classes=n_classes))
    clf = SpikeGPT(cfg)
    checkpoint.load_into(clf, {k: v.data for k, v in model.backbone_parameters().items()}, strict=False)
    rng = np.random.default_rng(seed)
    E = cfg.n_embd
    clf.W_m.data[...] = rng.uniform(-1 / math.sqrt(E), 1 / math.sqrt(E), clf.W_m.shape).astype(clf.dtype)
    return clf


def train_classifier(model: SpikeGPT, seqs: list[np.ndarray], labels: list[int],
                     cfg: ClassifyConfig) -> list[float]:
    """Fine-tune with the mean-pooled softmax objective; returns per-epoch mean loss."""
    if not seqs:
        raise DataError("no training examples")
    params = model.parameters() if cfg.finetune_backbone else {model.W_m.name: model.W_m}
    adam = tn.AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            model.zero_grad()
            # equal-length examples share one batched forward
            groups: dict[int, list[int]] = {}
            for i in batch:
                groups.setdefault(len(seqs[i]), []).append(i)
            for members in groups.values():
                toks = np.stack([seqs[i] for i in members])
                logits = model.forward_nlu(toks, training=True)
                loss = nlu_loss(logits, [labels[i] for i in members]) * (len(members) / len(batch))
                loss.backward()
                losses.append(float(loss.data) * len(batch))
            tn.adam_step(params, adam)
        history.append(float(np.sum(losses) / len(order)))
    return history


def predict_classes(model: SpikeGPT, seqs: list[np.ndarray]) -> np.ndarray:
    pred = np.empty(len(seqs), dtype=np.int64)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        groups.setdefault(len(s), []).append(i)
    with tn.no_grad():
        for members in groups.values():
            logits = model.forward_nlu(np.stack([seqs[i] for i in members])).data
            pred[members] = np.argmax(logits.reshape(len(members), -1), axis=-1)
    return pred


def evaluate_classifier(model: SpikeGPT, seqs: list[np.ndarray], labels: list[int]) -> dict:
    if not seqs:
        raise DataError("empty test set: accuracy is undefined")
    pred = predict_classes(model, seqs)
    labels = np.asarray(labels)
    C = model.cfg.n_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return {"accuracy": float((pred == labels).mean()), "n": int(len(labels)),
            "confusion": confusion.tolist()}


def split_examples(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    return holdout_split(n, frac, np.random.default_rng(seed))
