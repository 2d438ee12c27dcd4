"""Heaviside spiking with an arctangent surrogate, LIF cells, binary embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, custom_grad_node, embedding, make_node

SPIKING_MODES = ("lif", "heaviside", "none")


class VocabularyError(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    pass


def heaviside(x: np.ndarray) -> np.ndarray:
    # Theta(0) = 1: a membrane sitting exactly on threshold fires
    return (x >= 0).astype(x.dtype)


def atan_surrogate(x: np.ndarray, alpha: float = 2.0) -> np.ndarray:
    """Derivative of ``arctan(pi/2 * alpha * x) / pi + 1/2``."""
    return alpha / (2.0 * (1.0 + (np.pi / 2.0 * alpha * x) ** 2))


def heaviside_spike(x: Tensor, alpha: float = 2.0) -> Tensor:
    return custom_grad_node(heaviside, lambda v: atan_surrogate(v, alpha), x)


@dataclass(frozen=True)
class LIFConfig:
    beta: float = 0.5
    threshold: float = 1.0
    reset: float = 0.0
    alpha: float = 2.0
    # stop the surrogate gradient from flowing through the reset term
    detach_reset: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not self.threshold > self.reset:
            raise ValueError("threshold must exceed the reset potential")


@dataclass
class LIFState:
    """Post-reset membrane ``H`` of every neuron plus the last pre-reset ``U``."""

    H: Tensor
    step: int = 0
    U: np.ndarray | None = None

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "LIFState":
        return cls(Tensor(np.zeros(shape, dtype=dtype)))


def _check_finite(y: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(y)):
        raise NonFiniteActivation(f"non-finite input to spiking layer {name!r}")


def lif_step(y: Tensor, state: LIFState, cfg: LIFConfig = LIFConfig(),
             name: str = "lif") -> tuple[Tensor, LIFState]:
    """Advance every neuron by one time step.

    U = H_prev + beta * (y - (H_prev - U_reset)); S = Theta(U - U_th);
    H = U * (1 - S).
    """
    if y.shape != state.H.shape:
        raise ValueError(f"{name}: input shape {y.shape} != state shape {state.H.shape}")
    _check_finite(y.data, name)
    H = state.H
    U = H + cfg.beta * (y - (H - cfg.reset))
    S = heaviside_spike(U - cfg.threshold, cfg.alpha)
    gate = (1.0 - S.detach()) if cfg.detach_reset else (1.0 - S)
    H_new = U * gate
    return S, LIFState(H_new, state.step + 1, U.data.copy())


def lif_sequence(y: Tensor, cfg: LIFConfig = LIFConfig(), H0: np.ndarray | None = None,
                 name: str = "lif") -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Run LIF neurons over the time axis of ``y[..., T, E]``.

    Fused equivalent of calling :func:`lif_step` T times. Returns
    ``(spikes, H_final, membrane)`` where ``membrane`` holds the pre-reset
    potential U at every step. ``H_final`` is detached: gradients do not
    cross calls.
    """
    yd = y.data
    _check_finite(yd, name)
    T = yd.shape[-2]
    beta, thr, alpha = cfg.beta, cfg.threshold, cfg.alpha
    H = np.zeros(yd.shape[:-2] + yd.shape[-1:], dtype=yd.dtype) if H0 is None else np.array(H0, dtype=yd.dtype)
    U_all = np.empty_like(yd)
    S_all = np.empty_like(yd)
    drive = beta * (yd + cfg.reset)
    for t in range(T):
        U = (1.0 - beta) * H + drive[..., t, :]
        S = (U >= thr).astype(yd.dtype)
        H = U * (1.0 - S)
        U_all[..., t, :] = U
        S_all[..., t, :] = S

    def bw(g):
        sg = atan_surrogate(U_all - thr, alpha)
        gy = np.empty_like(yd)
        gH = np.zeros_like(H)
        for t in range(T - 1, -1, -1):
            St = S_all[..., t, :]
            sgt = sg[..., t, :]
            gS = g[..., t, :]
            if not cfg.detach_reset:
                gS = gS - gH * U_all[..., t, :]
            gU = gH * (1.0 - St) + gS * sgt
            gy[..., t, :] = beta * gU
            gH = (1.0 - beta) * gU
        return (gy,)

    return make_node(S_all, (y,), bw), H, U_all


def spike_site(y: Tensor, mode: str, cfg: LIFConfig, H0: np.ndarray | None = None,
               name: str = "site") -> tuple[Tensor, np.ndarray | None, np.ndarray]:
    """Binarize a real-valued layer output according to the spiking mode.

    ``lif`` runs stateful LIF neurons, ``heaviside`` binarizes directly with
    Θ(y) (no membrane, no threshold offset), ``none`` passes the input through. Returns
    ``(output, H_final, membrane)``.
    """
    if mode == "lif":
        return lif_sequence(y, cfg, H0, name)
    if mode == "heaviside":
        _check_finite(y.data, name)
        return heaviside_spike(y, cfg.alpha), None, y.data
    if mode == "none":
        return y, None, y.data
    raise ValueError(f"unknown spiking mode {mode!r}; expected one of {SPIKING_MODES}")


def binary_embed(tokens, W_e: Tensor, alpha: float = 2.0, spiking: bool = True) -> Tensor:
    """Look up embedding rows and binarize them with the surrogate spike."""
    ids = np.asarray(tokens)
    V = W_e.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = int(ids[(ids < 0) | (ids >= V)].flat[0])
        raise VocabularyError(f"token id {bad} outside vocabulary of size {V}")
    x = embedding(W_e, ids)
    return heaviside_spike(x, alpha) if spiking else x
