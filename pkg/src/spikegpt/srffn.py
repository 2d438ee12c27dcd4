"""Spiking receptance feed-forward channel mixer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .neurons import LIFConfig, spike_site
from .rwkv import shift_mask, token_shift
from .tensor import Tensor


@dataclass
class SRFFNState:
    prev_x: np.ndarray | None = None
    H: np.ndarray | None = None


class SRFFNLayer:
    """sigmoid(X M_P) * (relu(X M_G)^2 M_S) with hidden width 4E, then a spike site."""

    def __init__(self, E: int, block: int, n_blocks: int, rng: np.random.Generator,
                 dtype=np.float32, dropout: float = 0.03, lif: LIFConfig = LIFConfig(),
                 prefix: str = "ffn"):
        H = 4 * E
        self.E = E
        self.hidden = H
        self.dropout = dropout
        self.lif = lif
        self.mask = shift_mask(E, block + 1, n_blocks)
        self.M_P = tn.uniform_param(rng, (E, E), E, dtype, f"{prefix}.M_P")
        self.M_G = tn.uniform_param(rng, (E, H), E, dtype, f"{prefix}.M_G")
        self.M_S = tn.uniform_param(rng, (H, E), H, dtype, f"{prefix}.M_S")

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in (self.M_P, self.M_G, self.M_S)}

    def mix(self, X: Tensor, state: SRFFNState, training: bool = False,
            rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor, SRFFNState]:
        """Returns ``(out, hidden, new_state)``; ``hidden`` is the relu^2 activation."""
        xs = token_shift(X, self.mask, state.prev_x)
        gate = tn.sigmoid(xs @ self.M_P)
        hidden = tn.relu_squared(xs @ self.M_G)
        out = gate * (hidden @ self.M_S)
        if training and self.dropout > 0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            out = tn.dropout(out, self.dropout, rng, training=True)
        return out, hidden, SRFFNState(X.data[..., -1, :].copy(), state.H)


def srffn_forward(X: Tensor, layer: SRFFNLayer, state: SRFFNState | None = None,
                  mode: str = "lif", training: bool = False, rng: np.random.Generator | None = None,
                  name: str = "srffn") -> tuple[Tensor, SRFFNState, np.ndarray]:
    state = state or SRFFNState()
    out, _, new = layer.mix(X, state, training, rng)
    S, H, membrane = spike_site(out, mode, layer.lif, state.H, name)
    new.H = H
    return S, new, membrane
