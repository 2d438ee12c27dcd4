"""Spiking RWKV token mixer.

Two evaluations of the weighted-key-value average are provided: a serial
recurrence over accumulators (A, B) with a hand-written backward pass, and a
direct causal 1-D convolution against a per-channel decay kernel composed
from autodiff primitives. They agree to rounding from a zero state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .neurons import LIFConfig, spike_site
from .tensor import Tensor, make_node


def shift_mask(E: int, block: int, n_blocks: int) -> np.ndarray:
    """Token-shift mix weights ``(i/E)**(block/n_blocks)`` for i = 1..E.

    ``block`` counts from 1, so the last block mixes linearly.
    """
    if not 1 <= block <= n_blocks:
        raise ValueError(f"block index {block} outside 1..{n_blocks}")
    i = np.arange(1, E + 1, dtype=np.float64)
    return (i / E) ** (block / n_blocks)


def token_shift(X: Tensor, mask: np.ndarray, prev: np.ndarray | None = None) -> Tensor:
    """Blend each row of ``X[..., T, E]`` with its predecessor.

    ``prev`` is the last row of the previous chunk when streaming; the first
    row otherwise blends with zeros.
    """
    m = np.asarray(mask, dtype=X.dtype)
    Xs = tn.shift_rows(X, prev)
    return X * m + Xs * (1.0 - m)


def k_limit(dtype) -> float:
    return 30.0 if np.dtype(dtype) == np.float32 else 60.0


@dataclass
class DecayParams:
    """Per-channel log decay ``w_d`` (< 0) and current-token log bonus ``w_f``."""

    w_d: Tensor
    w_f: Tensor


@dataclass
class WKVState:
    A: np.ndarray
    B: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "WKVState":
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def build_decay_kernel(params: DecayParams, T: int) -> Tensor:
    """Kernel ``[E, T]``; column j weights the token at distance ``T-1-j``.

    Past distances d >= 1 get ``exp(d * w_d)``; the current token (last
    column) gets ``exp(w_f)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    w_d, w_f = params.w_d, params.w_f
    E = w_d.shape[0]
    w_f_col = w_f.reshape(E, 1)
    if T == 1:
        return tn.exp(w_f_col)
    dist = Tensor(np.arange(T - 1, 0, -1, dtype=w_d.dtype).reshape(1, T - 1))
    return tn.exp(tn.concat([w_d.reshape(E, 1) @ dist, w_f_col], axis=1))


def causal_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Direct per-channel causal convolution, O(E T^2).

    ``out[..., t, e] = sum_{i<=t} kernel[e, T-1-(t-i)] * x[..., i, e]``; the
    input is implicitly left-padded with zeros.
    """
    T, E = x.shape[-2], x.shape[-1]
    if kernel.shape != (E, T):
        raise ValueError(f"kernel shape {kernel.shape} != {(E, T)}")
    t_idx = np.arange(T)
    lag = t_idx[:, None] - t_idx[None, :]          # t - i
    causal = lag >= 0
    col = np.where(causal, T - 1 - lag, 0)         # kernel column per (t, i)

    def toeplitz(k):
        return k.T[col] * causal[..., None]        # [T, T, E]

    W = toeplitz(kernel.data)
    out = np.einsum("tie,...ie->...te", W, x.data)

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gx = np.einsum("tie,...te->...ie", W, g)
        if kernel.requires_grad:
            g2 = g.reshape(-1, T, E)
            x2 = x.data.reshape(-1, T, E)
            gW = np.einsum("bte,bie->tie", g2, x2) * causal[..., None]
            gkT = np.zeros((T, E), dtype=kernel.dtype)
            np.add.at(gkT, col[causal], gW[causal])
            gk = gkT.T
        return gx, gk

    return make_node(out, (x, kernel), bw)


def wkv_parallel(R: Tensor, K: Tensor, V: Tensor, params: DecayParams) -> Tensor:
    """Convolutional form from a zero state; built only from autodiff primitives."""
    T = K.shape[-2]
    kern = build_decay_kernel(params, T)
    ek = tn.exp(tn.clamp_max(K, k_limit(K.dtype)))
    num = causal_conv1d(ek * V, kern)
    den = causal_conv1d(ek, kern)
    return tn.sigmoid(R) * (num / den)


def wkv_recurrence(K: Tensor, V: Tensor, params: DecayParams,
                   state: WKVState | None = None) -> tuple[Tensor, WKVState]:
    """Serial pre-receptance WKV average with carried accumulators.

    For each t: y = (e^{w_f+k} v + A) / (e^{w_f+k} + B), then
    A <- e^{w_d} (A + e^k v), B <- e^{w_d} (B + e^k). The incoming state is
    treated as a constant; the returned state is detached.
    """
    w_d, w_f = params.w_d, params.w_f
    kd, vd = K.data, V.data
    dtype = kd.dtype
    lim = k_limit(dtype)
    T = kd.shape[-2]
    lead = kd.shape[:-2] + kd.shape[-1:]
    if state is None:
        A = np.zeros(lead, dtype=dtype)
        B = np.zeros(lead, dtype=dtype)
    else:
        if state.A.shape[-1] != kd.shape[-1]:
            raise ValueError(f"state has {state.A.shape[-1]} channels, inputs have {kd.shape[-1]}")
        A = np.broadcast_to(state.A, lead).astype(dtype)
        B = np.broadcast_to(state.B, lead).astype(dtype)
    ew = np.exp(w_d.data).astype(dtype)
    eu = np.exp(w_f.data).astype(dtype)
    clipped = kd > lim
    ek = np.exp(np.minimum(kd, lim))
    A_hist = np.empty_like(kd)
    B_hist = np.empty_like(kd)
    y = np.empty_like(kd)
    for t in range(T):
        A_hist[..., t, :] = A
        B_hist[..., t, :] = B
        e = ek[..., t, :]
        ev = e * vd[..., t, :]
        y[..., t, :] = (eu * ev + A) / (eu * e + B)
        A = ew * (A + ev)
        B = ew * (B + e)
    final = WKVState(A, B)

    def bw(g):
        gk = np.zeros_like(kd)
        gv = np.zeros_like(vd)
        gwd = np.zeros_like(ew)
        gwf = np.zeros_like(eu)
        gA = np.zeros(lead, dtype=dtype)   # dL/dA_{t+1}
        gB = np.zeros(lead, dtype=dtype)
        red = tuple(range(len(lead) - 1))
        for t in range(T - 1, -1, -1):
            e = ek[..., t, :]
            v = vd[..., t, :]
            At = A_hist[..., t, :]
            Bt = B_hist[..., t, :]
            # A_{t+1} = ew (A_t + e v), B_{t+1} = ew (B_t + e)
            gwd += (gA * ew * (At + e * v) + gB * ew * (Bt + e)).sum(axis=red)
            gAe = gA * ew
            gBe = gB * ew
            den = eu * e + Bt
            yt = y[..., t, :]
            gnum = g[..., t, :] / den
            gden = -gnum * yt
            ge = gAe * v + gBe + (gnum * v + gden) * eu
            gv[..., t, :] = (gAe + gnum * eu) * e
            gwf += ((gnum * v + gden) * eu * e).sum(axis=red)
            gk[..., t, :] = ge * e
            gA = gAe + gnum
            gB = gBe + gden
        gk[clipped] = 0.0
        return gk, gv, gwd, gwf

    return make_node(y, (K, V, w_d, w_f), bw), final


def wkv_serial(R: Tensor, K: Tensor, V: Tensor, params: DecayParams,
               state: WKVState | None = None) -> tuple[Tensor, WKVState]:
    wkv, final = wkv_recurrence(K, V, params, state)
    return tn.sigmoid(R) * wkv, final


def init_log_decay_raw(E: int, block: int, n_blocks: int) -> np.ndarray:
    """Log of the per-step decay rate magnitude; ``w_d = -exp(raw)``.

    Channels ramp from slow decay (rate 0.3, i.e. w_d = -0.3) to fast decay
    (w_d = -5), with the curve bent by depth.
    """
    frac = 0.0 if n_blocks == 1 else block / (n_blocks - 1)
    ramp = (np.arange(E) / max(E - 1, 1)) ** (0.7 + 1.3 * frac)
    return np.log(0.3) + (np.log(5.0) - np.log(0.3)) * ramp


@dataclass
class RWKVState:
    prev_x: np.ndarray | None = None
    wkv: WKVState | None = None
    H: np.ndarray | None = None


class RWKVLayer:
    """Token shift -> R, K, V projections -> WKV -> spike site."""

    def __init__(self, E: int, block: int, n_blocks: int, rng: np.random.Generator,
                 dtype=np.float32, p_k: float = 0.3, lif: LIFConfig = LIFConfig(), prefix: str = "att"):
        self.E = E
        self.lif = lif
        self.mask = shift_mask(E, block + 1, n_blocks)
        self.M_R = tn.uniform_param(rng, (E, E), E, dtype, f"{prefix}.M_R")
        self.M_K = tn.uniform_param(rng, (E, E), E, dtype, f"{prefix}.M_K")
        self.M_V = tn.uniform_param(rng, (E, E), E, dtype, f"{prefix}.M_V")
        self.decay_raw = Tensor(init_log_decay_raw(E, block, n_blocks).astype(dtype),
                                requires_grad=True, name=f"{prefix}.decay_raw")
        self.w_f = Tensor(np.full(E, np.log(p_k), dtype=dtype), requires_grad=True, name=f"{prefix}.w_f")

    def parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in (self.M_R, self.M_K, self.M_V, self.decay_raw, self.w_f)}

    def decay(self) -> DecayParams:
        return DecayParams(-tn.exp(self.decay_raw), self.w_f)

    def mix(self, X: Tensor, state: RWKVState, wkv: str = "serial") -> tuple[Tensor, RWKVState]:
        """Real-valued mixer output before the spike site."""
        xs = token_shift(X, self.mask, state.prev_x)
        R = xs @ self.M_R
        K = xs @ self.M_K
        V = xs @ self.M_V
        params = self.decay()
        if wkv == "serial":
            Y, wstate = wkv_serial(R, K, V, params, state.wkv)
        elif wkv == "parallel":
            if state.wkv is not None:
                raise ValueError("parallel WKV assumes a zero initial state")
            Y = wkv_parallel(R, K, V, params)
            wstate = None
        else:
            raise ValueError(f"unknown wkv form {wkv!r}")
        return Y, RWKVState(X.data[..., -1, :].copy(), wstate, state.H)


def spiking_rwkv_forward(X: Tensor, layer: RWKVLayer, state: RWKVState | None = None,
                         mode: str = "lif", wkv: str = "serial",
                         name: str = "rwkv") -> tuple[Tensor, RWKVState, np.ndarray]:
    """Spiking RWKV mixer. Returns ``(spikes, new_state, membrane)``."""
    state = state or RWKVState()
    Y, new = layer.mix(X, state, wkv)
    S, H, membrane = spike_site(Y, mode, layer.lif, state.H, name)
    new.H = H
    return S, new, membrane
