"""Factorized differentiable architecture search over two 24-way candidate blocks.

Each block (timestep modeling, quantum feed-forward) carries an independent
24-way softmax mixture. The ensemble mixes timestep candidates at the
density-matrix level and feed-forward candidates at the readout level; by
linearity of the trace this equals the brute-force 576-pair joint ensemble
exactly, while costing 24 + 24 block evaluations per sample. The joint
enumeration is kept as `joint_ensemble_oracle`, the reference the fast path
is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .circuits import CandidateDescriptor, N_CANDIDATES, enumerate_candidates
from .head import (
    HeadConfig,
    HeadParams,
    classify,
    measure_pauli,
    pauli_expectations,
    qff_apply,
    qff_states,
    timestep_block,
    timestep_states,
)
from .linalg import outer

# Finite stand-in for -inf: exp(-1e9) underflows to exactly 0 in both float
# widths, excluding a candidate without producing NaN softmax gradients.
EXCLUDED_LOGIT = -1e9


@dataclass
class StructuralWeights:
    """Two 24-way logit vectors; `frozen` pins both mixtures to exact uniform
    (the warmup schedule) regardless of the logit values."""

    ts_logits: torch.Tensor
    qff_logits: torch.Tensor
    frozen: bool = False

    def __post_init__(self):
        if self.ts_logits.shape != (N_CANDIDATES,) or self.qff_logits.shape != (N_CANDIDATES,):
            raise ValueError(f"structural logits must be length {N_CANDIDATES}")

    def block_weights(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self.frozen:
            w = torch.full((N_CANDIDATES,), 1.0 / N_CANDIDATES, dtype=self.ts_logits.dtype)
            return w, w.clone()
        return torch.softmax(self.ts_logits, dim=0), torch.softmax(self.qff_logits, dim=0)


def init_structural_weights(dtype: torch.dtype = torch.float64) -> StructuralWeights:
    """All-zero logits: the softmax starts uniform, matching the warmup."""
    return StructuralWeights(torch.zeros(N_CANDIDATES, dtype=dtype),
                             torch.zeros(N_CANDIDATES, dtype=dtype))


def warmup_weights(epoch: int, warmup_epochs: int, sw: StructuralWeights) -> StructuralWeights:
    """Frozen uniform mixing while epoch < warmup_epochs; trainable afterwards."""
    return replace(sw, frozen=epoch < warmup_epochs)


def mixed_qff_features(states: torch.Tensor, ts_weights: torch.Tensor,
                       qff_descs: list[CandidateDescriptor], params: HeadParams,
                       cfg: HeadConfig) -> torch.Tensor:
    """Readout of the timestep mixture under every feed-forward candidate.

    states: [24, ..., 2^n] pure states per timestep candidate. Returns
    e_b = sum_a w_a <psi_a| V_b^dag P V_b |psi_a>, shaped [24, ..., 3n] --
    identical to measuring qff_apply(rho_mix, b) because the trace is linear
    in the mixture.
    """
    phi = qff_states(states, qff_descs, params.qff_angles, cfg)  # [Cb, Ca, ..., dim]
    exps = pauli_expectations(phi, cfg.n_qubits)                 # [Cb, Ca, ..., 3n]
    w = ts_weights.to(exps.dtype)
    return torch.einsum("a,ba...->b...", w, exps)


def ensemble_forward(features: torch.Tensor, sw: StructuralWeights, params: HeadParams,
                     cfg: HeadConfig,
                     dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Weighted-ensemble logits over both blocks: exactly 24 + 24 block
    evaluations per sample. Raises NormCollapse naming the candidate if a
    timestep candidate's polynomial collapses the state."""
    ts_descs = cfg.timestep_candidates()
    qff_descs = cfg.qff_candidates()
    w, v = sw.block_weights()
    psi = timestep_states(features, ts_descs, params, cfg, dropout_mask)
    e = mixed_qff_features(psi, w, qff_descs, params, cfg)  # [Cb, ..., 3n]
    feats = torch.einsum("b,b...->...", v.to(e.dtype), e)
    return classify(feats, params.cls_w, params.cls_b)


def mix_density(states: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """rho_mix = sum_a w_a |psi_a><psi_a| from stacked states [C, ..., 2^n]."""
    rho = outer(states)  # [C, ..., dim, dim]
    return torch.einsum("a,a...->...", weights.to(rho.dtype), rho)


def joint_ensemble_oracle(features: torch.Tensor, sw: StructuralWeights,
                          params: HeadParams, cfg: HeadConfig,
                          dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Brute-force reference: enumerate all 24 x 24 = 576 architecture pairs
    through the literal density-matrix route and mix their readout features.

    Test-scale only (guarded at n_qubits <= 8, seq_len <= 8).
    """
    if cfg.n_qubits > 8 or cfg.seq_len > 8:
        raise ValueError("joint_ensemble_oracle is guarded to n_qubits <= 8 and seq_len <= 8")
    ts_descs = cfg.timestep_candidates()
    qff_descs = cfg.qff_candidates()
    w, v = sw.block_weights()
    feats = None
    for a, ts_desc in enumerate(ts_descs):
        psi = timestep_block(features, ts_desc, params, cfg, dropout_mask)
        rho = outer(psi)
        for b, qff_desc in enumerate(qff_descs):
            sigma = qff_apply(rho, qff_desc, params.qff_angles[b], cfg)
            e_ab = measure_pauli(sigma, cfg.n_qubits)
            term = (w[a] * v[b]).to(e_ab.dtype) * e_ab
            feats = term if feats is None else feats + term
    return classify(feats, params.cls_w, params.cls_b)


def discretize(sw: StructuralWeights, timestep_layers: int,
               qff_layers: int) -> tuple[CandidateDescriptor, CandidateDescriptor]:
    """Argmax candidate per block, ties broken by lowest enumeration index."""
    w, v = sw.block_weights()
    ts_idx = int(np.argmax(w.detach().numpy()))
    qff_idx = int(np.argmax(v.detach().numpy()))
    return (enumerate_candidates(timestep_layers)[ts_idx],
            enumerate_candidates(qff_layers)[qff_idx])


@dataclass
class SearchState:
    """Mutable driver state: structural weights, head parameters, epoch counter,
    and the per-epoch snapshot log of both softmax vectors."""

    sw: StructuralWeights
    params: HeadParams
    epoch: int = 0
    trajectory: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)

    def log_snapshot(self):
        w, v = self.sw.block_weights()
        self.trajectory.append((self.epoch, w.detach().numpy().copy(),
                                v.detach().numpy().copy()))
