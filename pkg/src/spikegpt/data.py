"""Character tokenizer, corpus splits and truncated-BPTT batch lanes."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

UNK = 0


class DataError(ValueError):
    pass


class CharTokenizer:
    """Sorted alphabet of observed characters; id 0 is reserved for unknowns."""

    def __init__(self, chars):
        chars = sorted(set(chars))
        self.chars = chars
        self.stoi = {c: i + 1 for i, c in enumerate(chars)}
        self.itos = {i + 1: c for i, c in enumerate(chars)}

    @classmethod
    def from_text(cls, text: str) -> "CharTokenizer":
        return cls(text)

    @property
    def vocab_size(self) -> int:
        return len(self.chars) + 1

    def encode(self, text: str) -> np.ndarray:
        codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
        uniq, inv = np.unique(codes, return_inverse=True)
        table = np.array([self.stoi.get(chr(c), UNK) for c in uniq], dtype=np.int64)
        return table[inv].reshape(-1)

    def decode(self, ids) -> str:
        return "".join(self.itos.get(int(i), "�") for i in ids)

    def to_meta(self) -> dict:
        return {"chars": "".join(self.chars)}

    @classmethod
    def from_meta(cls, meta: dict) -> "CharTokenizer":
        if "chars" not in meta:
            raise DataError("checkpoint carries no tokenizer alphabet")
        return cls(meta["chars"])


def read_corpus(path) -> str:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from e
    if not text:
        raise DataError(f"corpus {path} is empty")
    return text


def bundled_corpus_path(name: str = "corpus.txt") -> Path:
    return Path(str(resources.files("spikegpt") / "corpora" / name))


def split_ids(ids: np.ndarray, fractions=(0.9, 0.05, 0.05)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contiguous train/val/test split by token position."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    n = len(ids)
    a = int(n * fractions[0])
    b = a + int(n * fractions[1])
    return ids[:a], ids[a:b], ids[b:]


@dataclass
class LaneBatcher:
    """Parallel contiguous streams for stateful truncated BPTT.

    The training ids are cut into ``batch`` lanes. Each call to ``next``
    returns the next ``ctx``-long chunk of every lane plus targets shifted by
    one, and whether the lanes were just (re)started. When the lanes run out,
    a new epoch starts from a seeded random offset so chunk boundaries move
    between epochs.
    """

    ids: np.ndarray
    batch: int
    ctx: int
    rng: np.random.Generator

    def __post_init__(self):
        if len(self.ids) < self.batch * (self.ctx + 1) + 1:
            raise DataError(f"corpus of {len(self.ids)} tokens too small for batch={self.batch}, ctx={self.ctx}")
        self.epoch = -1
        self._new_epoch()

    def _new_epoch(self):
        self.epoch += 1
        offset = 0 if self.epoch == 0 else int(self.rng.integers(0, self.ctx))
        usable = len(self.ids) - 1 - offset
        lane_len = usable // self.batch
        self.n_chunks = lane_len // self.ctx
        self.starts = offset + lane_len * np.arange(self.batch)
        self.chunk = 0

    def next(self) -> tuple[np.ndarray, np.ndarray, bool]:
        if self.chunk >= self.n_chunks:
            self._new_epoch()
        fresh = self.chunk == 0
        base = self.starts + self.chunk * self.ctx
        idx = base[:, None] + np.arange(self.ctx)[None, :]
        self.chunk += 1
        return self.ids[idx], self.ids[idx + 1], fresh


@dataclass
class ChunkBatcher:
    """Non-overlapping ``ctx``-long chunks, reshuffled every epoch.

    Each batch draws ``batch`` chunks from anywhere in the corpus, so state
    is carried through the tokens of a chunk and reset at its end (every
    batch is ``fresh``).
    """

    ids: np.ndarray
    batch: int
    ctx: int
    rng: np.random.Generator

    def __post_init__(self):
        self.n_chunks = (len(self.ids) - 1) // self.ctx
        if self.n_chunks < self.batch:
            raise DataError(f"corpus of {len(self.ids)} tokens too small for batch={self.batch}, ctx={self.ctx}")
        self.epoch = -1
        self._new_epoch()

    def _new_epoch(self):
        self.epoch += 1
        self.order = self.rng.permutation(self.n_chunks)
        self.pos = 0

    def next(self) -> tuple[np.ndarray, np.ndarray, bool]:
        if self.pos + self.batch > self.n_chunks:
            self._new_epoch()
        starts = self.order[self.pos:self.pos + self.batch] * self.ctx
        self.pos += self.batch
        idx = starts[:, None] + np.arange(self.ctx)[None, :]
        return self.ids[idx], self.ids[idx + 1], True


def read_tsv(path) -> tuple[list[int], list[str]]:
    """Rows of ``label<TAB>text``; labels must be integers."""
    labels, texts = [], []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{n}: expected label<TAB>text")
        lab, text = line.split("\t", 1)
        try:
            labels.append(int(lab))
        except ValueError as e:
            raise DataError(f"{path}:{n}: label {lab!r} is not an integer") from e
        texts.append(text)
    return labels, texts


def holdout_split(n: int, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle then take ``frac`` of the indices as the test set."""
    perm = rng.permutation(n)
    k = max(1, int(round(n * frac)))
    return np.sort(perm[k:]), np.sort(perm[:k])
