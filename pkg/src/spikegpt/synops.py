"""Synaptic-operation accounting, firing rates and spike/membrane rasters.

Accounting perimeter: every spike site (binary embedding and the LIF output
of each token and channel mixer) drives the projections of the mixer that
reads it next, or the LM head after the final block. A spike costs one
accumulate per receiving synapse. The residual add and layer norm between
a site and its reader are treated as pass-through. The SRFFN output
projection reads the real-valued relu^2 hidden activation, so it is counted
as full-precision MACs only. Elementwise neuron and WKV updates are
reported as state ops, outside SynOps.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .model import SpikeGPT

PERIMETER = ("spike sites (emb, blocks.*.att, blocks.*.ffn) x fan-out of the reading mixer/head; "
             "SRFFN M_S counted as full-precision; LIF/WKV updates as state ops")


class SynOpsContractError(ValueError):
    pass


def count_linear_synops(spike_input, out_features: int, spiking: bool = True) -> tuple[int, int]:
    """``(synops, dense_macs)`` for a linear layer fed by ``spike_input``.

    synops = nnz(input) * out_features, dense = input.size * out_features.
    """
    x = np.asarray(spike_input)
    if spiking and not np.all((x == 0) | (x == 1)):
        raise SynOpsContractError("spiking linear layer received non-binary input")
    nnz = int(np.count_nonzero(x))
    return nnz * int(out_features), int(x.size) * int(out_features)


@dataclass
class SiteCount:
    site: str
    reader: str
    binary: bool
    width: int
    fan_out: int
    positions: int      # neuron-steps observed (tokens x width)
    spikes: int         # nonzero inputs
    synops: int
    dense_macs: int

    @property
    def firing_rate(self) -> float:
        return self.spikes / self.positions if self.positions else 0.0


@dataclass
class SynOpsLedger:
    tokens: int = 0
    sites: list[SiteCount] = field(default_factory=list)
    fp_macs: int = 0          # real-valued-input sites, dense
    state_ops: int = 0
    perimeter: str = PERIMETER

    def _binary(self):
        return [s for s in self.sites if s.binary]

    @property
    def synops(self) -> int:
        return sum(s.synops for s in self._binary())

    @property
    def binary_dense_macs(self) -> int:
        return sum(s.dense_macs for s in self._binary())

    @property
    def fp_synops(self) -> int:
        """Nonzero MACs at sites whose input is real-valued."""
        return self.fp_macs + sum(s.synops for s in self.sites if not s.binary)

    @property
    def dense_macs(self) -> int:
        return sum(s.dense_macs for s in self.sites) + self.fp_macs

    @property
    def synops_ratio(self) -> float:
        """Binarized SynOps over the dense MACs of the same (binary-input) sites."""
        d = self.binary_dense_macs
        return self.synops / d if d else 1.0

    @property
    def mean_firing_rate(self) -> float:
        """Mean firing rate over binary sites, weighted by each site's fan-out."""
        num = sum(s.spikes * s.fan_out for s in self._binary())
        den = sum(s.positions * s.fan_out for s in self._binary())
        return num / den if den else 0.0

    @property
    def mean_firing_rate_unweighted(self) -> float:
        b = self._binary()
        den = sum(s.positions for s in b)
        return sum(s.spikes for s in b) / den if den else 0.0

    def total_ops(self) -> int:
        return self.synops + self.fp_synops

    def to_dict(self) -> dict:
        return {
            "perimeter": self.perimeter,
            "tokens": self.tokens,
            "binarized_synops": self.synops,
            "binary_dense_macs": self.binary_dense_macs,
            "full_precision_macs": self.fp_synops,
            "dense_macs": self.dense_macs,
            "synops_ratio": self.synops_ratio,
            "mean_firing_rate": self.mean_firing_rate,
            "mean_firing_rate_unweighted": self.mean_firing_rate_unweighted,
            "dense_over_synops": (self.binary_dense_macs / self.synops) if self.synops else None,
            "state_ops": self.state_ops,
            "sites": [dict(asdict(s), firing_rate=s.firing_rate) for s in self.sites],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"# perimeter: {self.perimeter}",
                 f"{'site':<16}{'reader':<18}{'rate':>8}{'synops':>14}{'dense':>14}"]
        for s in self.sites:
            rate = f"{s.firing_rate:.4f}" if s.binary else "real"
            lines.append(f"{s.site:<16}{s.reader:<18}{rate:>8}{s.synops:>14,}{s.dense_macs:>14,}")
        lines.append(f"tokens={self.tokens}  binarized synops={self.synops:,}  "
                     f"binary dense={self.binary_dense_macs:,}  ratio={self.synops_ratio:.6f}")
        lines.append(f"full-precision MACs={self.fp_synops:,}  state ops={self.state_ops:,}  "
                     f"mean firing rate={self.mean_firing_rate:.6f}")
        return "\n".join(lines)


def _readers(model: SpikeGPT) -> dict[str, tuple[str, int]]:
    """Map each spike site to (reader name, fan-out per input neuron)."""
    E, L, V = model.cfg.n_embd, model.cfg.n_layer, model.cfg.vocab_size
    att_fan = 3 * E                 # M_R, M_K, M_V
    ffn_fan = E + 4 * E             # M_P, M_G
    out = {"emb": ("blocks.0.att", att_fan)}
    for i in range(L):
        out[f"blocks.{i}.att"] = (f"blocks.{i}.ffn", ffn_fan)
        out[f"blocks.{i}.ffn"] = (f"blocks.{i + 1}.att", att_fan) if i + 1 < L else ("head", V)
    return out


def trace_run(model: SpikeGPT, tokens) -> list[dict]:
    trace: list[dict] = []
    with tn.no_grad():
        model.forward_lm(np.asarray(tokens), trace=trace)
    return trace


def profile_run(model: SpikeGPT, tokens, trace: list[dict] | None = None) -> SynOpsLedger:
    """Instrumented eval-mode forward over ``tokens`` (``[T]`` or ``[B, T]``)."""
    tokens = np.asarray(tokens)
    if trace is None:
        trace = trace_run(model, tokens)
    readers = _readers(model)
    E = model.cfg.n_embd
    n_tok = int(tokens.size)
    ledger = SynOpsLedger(tokens=n_tok)
    for rec in trace:
        reader, fan = readers[rec["site"]]
        s = rec["spikes"]
        syn, dense = count_linear_synops(s, fan, spiking=rec["binary"])
        ledger.sites.append(SiteCount(rec["site"], reader, rec["binary"], s.shape[-1], fan,
                                      int(s.size), int(np.count_nonzero(s)), syn, dense))
    L = model.cfg.n_layer
    ledger.fp_macs = L * n_tok * (4 * E) * E       # SRFFN M_S
    per_tok_state = L * (2 * E)                    # WKV accumulator updates
    if model.cfg.mode == "lif":
        per_tok_state += 2 * L * E                 # membrane updates
    ledger.state_ops = n_tok * per_tok_state
    return ledger


def dump_raster(model: SpikeGPT, tokens, path, trace: list[dict] | None = None) -> list[Path]:
    """Write ``<site>.spikes.csv`` (t,neuron events) and ``<site>.membrane.csv`` (T x width).

    Only mixer spike sites are dumped. For batched input the first sequence
    is used.
    """
    tokens = np.asarray(tokens)
    if trace is None:
        trace = trace_run(model, tokens)
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in trace:
        if rec["membrane"] is None:
            continue
        spikes = rec["spikes"].reshape(-1, *rec["spikes"].shape[-2:])[0]
        mem = rec["membrane"].reshape(-1, *rec["membrane"].shape[-2:])[0]
        sp_path = out_dir / f"{rec['site']}.spikes.csv"
        with sp_path.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "neuron"])
            if rec["binary"]:
                for t, n in zip(*np.nonzero(spikes)):
                    w.writerow([int(t), int(n)])
        mem_path = out_dir / f"{rec['site']}.membrane.csv"
        np.savetxt(mem_path, mem, delimiter=",", fmt="%.6g")
        written += [sp_path, mem_path]
    return written
