"""SpikeGPT: binary embedding, stacked spiking RWKV + SRFFN blocks, LM and NLU heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tn
from .neurons import SPIKING_MODES, LIFConfig, binary_embed
from .rwkv import RWKVLayer, RWKVState, spiking_rwkv_forward
from .srffn import SRFFNLayer, SRFFNState, srffn_forward
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_layer: int = 4
    n_embd: int = 128
    ctx_len: int = 256
    vocab_size: int = 256
    mode: str = "lif"
    beta: float = 0.5
    alpha: float = 2.0
    threshold: float = 1.0
    reset: float = 0.0
    p_k: float = 0.3
    dropout: float = 0.03
    tie_head: bool = True
    n_classes: int = 0
    nlu_pool: str = "real"
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.n_layer < 1:
            raise ValueError("n_layer must be >= 1")
        if self.n_embd < 2:
            raise ValueError("n_embd must be >= 2")
        if self.ctx_len < 2:
            raise ValueError("ctx_len must be >= 2")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.mode not in SPIKING_MODES:
            raise ValueError(f"mode must be one of {SPIKING_MODES}, got {self.mode!r}")
        if self.nlu_pool not in ("real", "rate"):
            raise ValueError("nlu_pool must be 'real' or 'rate'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def lif(self) -> LIFConfig:
        return LIFConfig(self.beta, self.threshold, self.reset, self.alpha)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelState:
    """Streaming state: one (token-mixer, channel-mixer) pair per block."""

    blocks: list = field(default_factory=list)

    def state_floats(self) -> dict[str, int]:
        """Number of stored floats per kind, summed over blocks."""
        counts = {"wkv": 0, "lif": 0, "shift": 0}
        for att, ffn in self.blocks:
            if att.wkv is not None:
                counts["wkv"] += att.wkv.A.size + att.wkv.B.size
            for s in (att, ffn):
                if s.H is not None:
                    counts["lif"] += s.H.size
                if s.prev_x is not None:
                    counts["shift"] += s.prev_x.size
        return counts


class Block:
    def __init__(self, cfg: ModelConfig, index: int, rng: np.random.Generator, dtype):
        E = cfg.n_embd
        self.index = index
        self.ln1_g = Tensor(np.ones(E, dtype), requires_grad=True, name=f"blocks.{index}.ln1.g")
        self.ln1_b = Tensor(np.zeros(E, dtype), requires_grad=True, name=f"blocks.{index}.ln1.b")
        self.ln2_g = Tensor(np.ones(E, dtype), requires_grad=True, name=f"blocks.{index}.ln2.g")
        self.ln2_b = Tensor(np.zeros(E, dtype), requires_grad=True, name=f"blocks.{index}.ln2.b")
        self.att = RWKVLayer(E, index, cfg.n_layer, rng, dtype, cfg.p_k, cfg.lif, prefix=f"blocks.{index}.att")
        self.ffn = SRFFNLayer(E, index, cfg.n_layer, rng, dtype, cfg.dropout, cfg.lif, prefix=f"blocks.{index}.ffn")

    def parameters(self) -> dict[str, Tensor]:
        out = {p.name: p for p in (self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b)}
        out.update(self.att.parameters())
        out.update(self.ffn.parameters())
        return out


class SpikeGPT:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.dtype = dtype
        init_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        rng = np.random.default_rng(init_seq)
        self.dropout_rng = np.random.default_rng(drop_seq)
        V, E = cfg.vocab_size, cfg.n_embd
        # only sign(W_e) reaches the forward pass; a +-1/E scale keeps the tied
        # head's logits O(1) at init so untrained loss sits near ln V
        self.W_e = tn.uniform_param(rng, (V, E), E * E, dtype, "emb.W_e")
        self.blocks = [Block(cfg, i, rng, dtype) for i in range(cfg.n_layer)]
        self.ln_out_g = Tensor(np.ones(E, dtype), requires_grad=True, name="ln_out.g")
        self.ln_out_b = Tensor(np.zeros(E, dtype), requires_grad=True, name="ln_out.b")
        self.head = None if cfg.tie_head else tn.uniform_param(rng, (V, E), E, dtype, "head.W")
        self.W_m = None
        if cfg.n_classes:
            self.W_m = tn.uniform_param(rng, (cfg.n_classes, E), E, dtype, "nlu.W_m")

    # -- parameters ----------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out = {self.W_e.name: self.W_e}
        for b in self.blocks:
            out.update(b.parameters())
        out[self.ln_out_g.name] = self.ln_out_g
        out[self.ln_out_b.name] = self.ln_out_b
        if self.head is not None:
            out[self.head.name] = self.head
        if self.W_m is not None:
            out[self.W_m.name] = self.W_m
        return out

    def backbone_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if not k.startswith("nlu.")}

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        tn.zero_grads(self.parameters().values())

    # -- forward -----------------------------------------------------------------
    def features(self, tokens, state: ModelState | None = None, training: bool = False,
                 wkv: str = "serial", trace: list | None = None) -> tuple[Tensor, ModelState, Tensor]:
        """Final normalized hidden states ``[..., T, E]``.

        Returns ``(hidden, new_state, last_spikes)`` where ``last_spikes`` is
        the output of the final spike site.
        """
        cfg = self.cfg
        tokens = np.asarray(tokens)
        if tokens.shape[-1] == 0:
            raise ValueError("empty token sequence")
        spiking_embed = cfg.mode != "none"
        x = binary_embed(tokens, self.W_e, cfg.alpha, spiking=spiking_embed)
        if trace is not None:
            trace.append({"site": "emb", "spikes": x.data, "membrane": None, "binary": spiking_embed})
        prev = state.blocks if state is not None else [(None, None)] * cfg.n_layer
        new_blocks = []
        last = x
        for b, (att_s, ffn_s) in zip(self.blocks, prev):
            i = b.index
            h = tn.layer_norm(x, b.ln1_g, b.ln1_b)
            s_att, att_new, mem = spiking_rwkv_forward(h, b.att, att_s, cfg.mode, wkv, name=f"blocks.{i}.att")
            if trace is not None:
                trace.append({"site": f"blocks.{i}.att", "spikes": s_att.data, "membrane": mem,
                              "binary": cfg.mode != "none"})
            x = x + s_att
            h = tn.layer_norm(x, b.ln2_g, b.ln2_b)
            s_ffn, ffn_new, mem = srffn_forward(h, b.ffn, ffn_s, cfg.mode, training, self.dropout_rng,
                                                name=f"blocks.{i}.ffn")
            if trace is not None:
                trace.append({"site": f"blocks.{i}.ffn", "spikes": s_ffn.data, "membrane": mem,
                              "binary": cfg.mode != "none"})
            x = x + s_ffn
            new_blocks.append((att_new, ffn_new))
            last = s_ffn
        hidden = tn.layer_norm(x, self.ln_out_g, self.ln_out_b)
        return hidden, ModelState(new_blocks), last

    def forward_lm(self, tokens, state: ModelState | None = None, training: bool = False,
                   wkv: str = "serial", trace: list | None = None) -> tuple[Tensor, ModelState]:
        """Next-token logits ``[..., T, V]`` and the carried streaming state."""
        hidden, new_state, _ = self.features(tokens, state, training, wkv, trace)
        W = self.W_e if self.head is None else self.head
        return hidden @ W.T, new_state

    __call__ = forward_lm

    def forward_nlu(self, tokens, training: bool = False) -> Tensor:
        """Class logits from mean-pooled final hidden states."""
        if self.W_m is None:
            raise ValueError("model has no classification head (n_classes=0)")
        tokens = np.asarray(tokens)
        if tokens.size == 0:
            raise ValueError("cannot classify an empty sequence")
        hidden, _, last = self.features(tokens, training=training)
        pooled_src = hidden if self.cfg.nlu_pool == "real" else last
        pooled = tn.mean(pooled_src, axis=-2)
        if pooled.ndim == 1:
            return (pooled.reshape(1, -1) @ self.W_m.T).reshape(-1)
        return pooled @ self.W_m.T


def lm_loss(logits: Tensor, targets) -> Tensor:
    """Mean next-token negative log-likelihood in nats."""
    return tn.softmax_cross_entropy(logits, targets)


def bpc(loss: float) -> float:
    return float(loss) / math.log(2.0)


def perplexity(loss: float) -> float:
    return math.exp(float(loss))


def nlu_loss(class_logits: Tensor, labels) -> Tensor:
    if class_logits.ndim == 1:
        class_logits = class_logits.reshape(1, -1)
    return tn.softmax_cross_entropy(class_logits, np.asarray(labels).reshape(-1))


def sample_next(logits: np.ndarray, rng: np.random.Generator | None = None,
                temperature: float = 0.0, top_k: int = 0) -> int:
    """Greedy when ``temperature <= 0``; otherwise temperature/top-k sampling."""
    logits = np.asarray(logits, dtype=np.float64)
    if temperature <= 0:
        return int(np.argmax(logits))
    z = logits / temperature
    if top_k and top_k < z.size:
        cutoff = np.partition(z, -top_k)[-top_k]
        z = np.where(z < cutoff, -np.inf, z)
    p = tn.softmax(z)
    if rng is None:
        raise ValueError("sampling needs an rng")
    return int(rng.choice(p.size, p=p))


def generate(model: SpikeGPT, prompt, n_tokens: int, temperature: float = 0.0, top_k: int = 0,
             rng: np.random.Generator | None = None, return_logits: bool = False):
    """Stream ``n_tokens`` continuation ids after ``prompt`` (prompt not echoed).

    Decoding is serial with carried WKV/LIF/shift state, so memory per layer
    stays constant regardless of how many tokens are produced.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim != 1 or prompt.size == 0:
        raise ValueError("prompt must be a non-empty 1-D id sequence")
    out: list[int] = []
    step_logits = []
    with tn.no_grad():
        logits, state = model.forward_lm(prompt)
        last = logits.data[-1]
        for _ in range(n_tokens):
            step_logits.append(last)
            nxt = sample_next(last, rng, temperature, top_k)
            out.append(nxt)
            logits, state = model.forward_lm(np.array([nxt]), state)
            last = logits.data[-1]
    if return_logits:
        return out, np.stack(step_logits)
    return out
