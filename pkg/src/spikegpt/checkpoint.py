"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SGPT" | u32 version | u32 n | n bytes canonical JSON
    then per tensor until EOF:
    u32 name_len | name (utf-8) | u8 dtype tag | u32 rank | rank * u32 dims | payload

The JSON holds ``{"model": <ModelConfig>, "meta": {...}}``; ``meta`` carries
free-form extras such as the tokenizer alphabet.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, SpikeGPT

MAGIC = b"SGPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save(model: SpikeGPT, path, meta: dict | None = None) -> None:
    header = canonical_json({"model": model.cfg.to_dict(), "meta": meta or {}})
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for name, p in model.parameters().items():
        arr = np.ascontiguousarray(p.data)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", _TAGS[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> bool:
        return self.pos >= len(self.buf)


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into ``(header, tensors)`` without building a model."""
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (reader is {VERSION})")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt config block: {e}") from e
    tensors: dict[str, np.ndarray] = {}
    while not r.done():
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BI")
        if tag not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[tag]
        count = int(np.prod(dims)) if dims else 1
        payload = r.take(count * dt.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    return header, tensors


def load_into(model: SpikeGPT, tensors: dict[str, np.ndarray], strict: bool = True) -> None:
    params = model.parameters()
    if strict:
        missing = sorted(set(params) - set(tensors))
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {missing}")
    for name, arr in tensors.items():
        if name not in params:
            if strict:
                raise CheckpointError(f"checkpoint tensor {name!r} has no matching parameter")
            continue
        p = params[name]
        if p.shape != arr.shape:
            raise CheckpointShapeError(f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data[...] = arr.astype(p.dtype, copy=False)


def load(path) -> tuple[SpikeGPT, dict]:
    """Rebuild the model described by the checkpoint; returns ``(model, meta)``."""
    header, tensors = read(path)
    try:
        cfg = ModelConfig.from_dict(header["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid model config: {e}") from e
    model = SpikeGPT(cfg)
    load_into(model, tensors)
    return model, header.get("meta", {})
