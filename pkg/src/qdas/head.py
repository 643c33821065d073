"""The quantum readout head for one fixed (timestep, feed-forward) circuit pair.

Pipeline per sample: project classical features to normalized gate angles,
embed each timestep as a candidate-circuit unitary, mix the timestep
unitaries into a contraction M with softmax magnitudes and trainable phases,
apply a trainable matrix polynomial to M, renormalize, run the quantum
feed-forward circuit, read out X/Y/Z expectations per qubit, and classify
linearly.

All operations accept arbitrary leading batch dimensions and are pure:
dropout masks (inverted-dropout scaling, entries 0 or 1/(1-rate)) are
generated by the caller, so forward passes are deterministic given them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch

from .circuits import (
    CandidateDescriptor,
    QUBIT_LIMIT,
    apply_candidate_circuits,
    build_bank_unitaries,
    build_candidate_unitary,
    candidate_index,
    enumerate_candidates,
    param_count,
)
from .linalg import NORM_EPS, NormCollapse, basis_state, kron


@dataclass
class HeadConfig:
    """Shape and hyper-parameters of the head; dimensions follow the dataset."""

    n_qubits: int = 8
    seq_len: int = 4
    feat_dim: int = 32
    n_classes: int = 4
    qsvt_degree: int = 3
    timestep_layers: int = 2
    qff_layers: int = 1
    dropout_rate: float = 0.1

    def __post_init__(self):
        if not 2 <= self.n_qubits <= QUBIT_LIMIT:
            raise ValueError(f"n_qubits must be in [2, {QUBIT_LIMIT}], got {self.n_qubits}")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.qsvt_degree < 1:
            raise ValueError("qsvt_degree must be >= 1")
        if self.timestep_layers < 1 or self.qff_layers < 1:
            raise ValueError("layer counts must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def n_angle_slots(self) -> int:
        """Projection width: the largest param_count over the timestep candidates
        (the CRX entanglers, at 2 angles per qubit per layer)."""
        return self.timestep_layers * 2 * self.n_qubits

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def timestep_candidates(self) -> list[CandidateDescriptor]:
        return enumerate_candidates(self.timestep_layers)

    def qff_candidates(self) -> list[CandidateDescriptor]:
        return enumerate_candidates(self.qff_layers)


@dataclass
class HeadParams:
    """All trainable tensors of the head.

    `qff_angles` holds one unconstrained vector per quantum feed-forward
    candidate (squashed through sigmoid at use time): 24 entries during a
    search, a single entry for a fixed architecture. Timestep angles are not
    stored here; they are data-driven through the projection.
    """

    proj_w: torch.Tensor       # [n_angle_slots, feat_dim]
    proj_b: torch.Tensor       # [n_angle_slots]
    attn_logits: torch.Tensor  # [seq_len]
    phases: torch.Tensor       # [seq_len]
    qsvt_coeffs: torch.Tensor  # [qsvt_degree + 1]
    qff_angles: list[torch.Tensor]
    cls_w: torch.Tensor        # [n_classes, 3 * n_qubits]
    cls_b: torch.Tensor        # [n_classes]

    @property
    def real_dtype(self) -> torch.dtype:
        return self.proj_w.dtype

    @property
    def complex_dtype(self) -> torch.dtype:
        return torch.complex64 if self.real_dtype == torch.float32 else torch.complex128

    def qff_angles_for(self, desc: CandidateDescriptor) -> torch.Tensor:
        """The raw angle vector feeding `desc` (single entry or the 24-way bank)."""
        if len(self.qff_angles) == 1:
            return self.qff_angles[0]
        return self.qff_angles[candidate_index(desc)]


def init_head_params(cfg: HeadConfig, qff_descs: Sequence[CandidateDescriptor],
                     seed: int, dtype: torch.dtype = torch.float64) -> HeadParams:
    """Seeded initialization; the polynomial starts as the identity transform
    of the mixed operator (coefficients (0, 1, 0, ...)) to keep norms healthy."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x48454144]))

    def t(arr) -> torch.Tensor:
        return torch.as_tensor(arr, dtype=dtype)

    qsvt = np.zeros(cfg.qsvt_degree + 1)
    qsvt[1] = 1.0
    return HeadParams(
        proj_w=t(rng.normal(0.0, 1.0 / np.sqrt(cfg.feat_dim),
                            (cfg.n_angle_slots, cfg.feat_dim))),
        proj_b=t(np.zeros(cfg.n_angle_slots)),
        attn_logits=t(np.zeros(cfg.seq_len)),
        phases=t(np.zeros(cfg.seq_len)),
        qsvt_coeffs=t(qsvt),
        qff_angles=[t(rng.normal(0.0, 1.0, param_count(d, cfg.n_qubits)))
                    for d in qff_descs],
        cls_w=t(rng.normal(0.0, 0.1, (cfg.n_classes, 3 * cfg.n_qubits))),
        cls_b=t(np.zeros(cfg.n_classes)),
    )


# ---------------------------------------------------------------------------
# Stage ops
# ---------------------------------------------------------------------------

def project_features(x: torch.Tensor, proj_w: torch.Tensor, proj_b: torch.Tensor,
                     dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """theta = sigmoid(W (mask * x) + b), every component in (0, 1)."""
    if x.shape[-1] != proj_w.shape[-1]:
        raise ValueError(f"feature dim {x.shape[-1]} != projection dim {proj_w.shape[-1]}")
    if dropout_mask is not None:
        x = x * dropout_mask
    return torch.sigmoid(x @ proj_w.T + proj_b)


def lcu_coefficients(attn_logits: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
    """Complex mixing weights e^{i gamma_j} p_j with p = softmax(attn_logits)."""
    p = torch.softmax(attn_logits, dim=-1)
    return torch.polar(p, phases.to(p.dtype))


def lcu_mix(unitaries: torch.Tensor | Sequence[torch.Tensor],
            attn_logits: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
    """M = sum_j e^{i gamma_j} p_j U_j; a convex phase combination of unitaries,
    so the spectral norm never exceeds 1."""
    if not isinstance(unitaries, torch.Tensor):
        if len(unitaries) == 0:
            raise ValueError("lcu_mix needs at least one unitary")
        unitaries = torch.stack(list(unitaries))
    if unitaries.shape[0] == 0:
        raise ValueError("lcu_mix needs at least one unitary")
    coeff = lcu_coefficients(attn_logits, phases).to(unitaries.dtype)
    return torch.einsum("j,j...->...", coeff, unitaries)


def pauli_expectations(states: torch.Tensor, n_qubits: int) -> torch.Tensor:
    """[<X_0>..<X_{n-1}>, <Y_0>.., <Z_0>..] from statevectors [..., 2^n]."""
    lead = states.shape[:-1]
    probs = states.abs().pow(2)
    xs, ys, zs = [], [], []
    for q in range(n_qubits):
        left, right = 1 << q, 1 << (n_qubits - 1 - q)
        s = states.reshape(*lead, left, 2, right)
        cross = (s[..., 0, :].conj() * s[..., 1, :]).sum(dim=(-2, -1))
        xs.append(2.0 * cross.real)
        ys.append(2.0 * cross.imag)
        p = probs.reshape(*lead, left, 2, right)
        zs.append(p[..., 0, :].sum(dim=(-2, -1)) - p[..., 1, :].sum(dim=(-2, -1)))
    return torch.stack(xs + ys + zs, dim=-1)


_PAULI = {
    "x": torch.tensor([[0, 1], [1, 0]], dtype=torch.complex128),
    "y": torch.tensor([[0, -1j], [1j, 0]], dtype=torch.complex128),
    "z": torch.tensor([[1, 0], [0, -1]], dtype=torch.complex128),
}


@lru_cache(maxsize=None)
def pauli_observables(n_qubits: int) -> torch.Tensor:
    """Dense single-qubit Pauli strings, stacked [3n, 2^n, 2^n] in readout order."""
    eye = torch.eye(2, dtype=torch.complex128)
    obs = []
    for kind in ("x", "y", "z"):
        for q in range(n_qubits):
            m = torch.tensor([[1.0 + 0j]])
            for pos in range(n_qubits):
                m = kron(m, _PAULI[kind] if pos == q else eye)
            obs.append(m)
    return torch.stack(obs)


def measure_pauli(rho: torch.Tensor, n_qubits: int) -> torch.Tensor:
    """Pauli readout from a density matrix: Tr(rho P) for every X/Y/Z on every qubit."""
    obs = pauli_observables(n_qubits).to(rho.dtype)
    return torch.einsum("...ij,oji->...o", rho, obs).real


def qff_apply(rho: torch.Tensor, desc: CandidateDescriptor, angles_raw: torch.Tensor,
              cfg: HeadConfig) -> torch.Tensor:
    """Conjugate a density matrix by the candidate's unitary at sigmoid(angles_raw)."""
    pc = param_count(desc, cfg.n_qubits)
    if angles_raw.shape[-1] != pc:
        raise ValueError(f"qff angles sized {angles_raw.shape[-1]}, need {pc}")
    if rho.shape[-1] != cfg.dim:
        raise ValueError(f"density dim {rho.shape[-1]} != 2^n_qubits {cfg.dim}")
    v = build_candidate_unitary(desc, cfg.n_qubits, torch.sigmoid(angles_raw))
    v = v.to(rho.dtype)
    return v @ rho @ v.mH


def classify(features: torch.Tensor, cls_w: torch.Tensor, cls_b: torch.Tensor) -> torch.Tensor:
    """Linear logits from the 3n Pauli readout features."""
    if features.shape[-1] != cls_w.shape[-1]:
        raise ValueError(f"readout width {features.shape[-1]} != classifier {cls_w.shape[-1]}")
    return features @ cls_w.T + cls_b


# ---------------------------------------------------------------------------
# Timestep block (per-candidate pure states)
# ---------------------------------------------------------------------------

def timestep_states(features: torch.Tensor, descs: Sequence[CandidateDescriptor],
                    params: HeadParams, cfg: HeadConfig,
                    dropout_mask: torch.Tensor | None = None,
                    block: str = "timestep") -> torch.Tensor:
    """Normalized P_c(M)|0..0> for every candidate in `descs`.

    features: [..., seq_len, feat_dim]; returns [len(descs), ..., 2^n].
    The polynomial is applied directly to the state (iterated M-applications),
    never materializing M; M v = sum_j e^{i gamma_j} p_j U_j(theta_j) v.
    """
    if features.dim() < 2 or features.shape[-1] != cfg.feat_dim \
            or features.shape[-2] != cfg.seq_len:
        raise ValueError(f"features shaped {tuple(features.shape)}, expected "
                         f"[..., {cfg.seq_len}, {cfg.feat_dim}]")
    descs = list(descs)
    lead = features.shape[:-2]
    b = int(np.prod(lead)) if lead else 1
    n, nseq, dim = cfg.n_qubits, cfg.seq_len, cfg.dim
    c = len(descs)
    cdtype = params.complex_dtype

    theta = project_features(features, params.proj_w, params.proj_b, dropout_mask)
    theta = theta.reshape(b, nseq, -1)
    angles = theta.reshape(1, b * nseq, -1).expand(c, b * nseq, theta.shape[-1])
    coeff = lcu_coefficients(params.attn_logits, params.phases).to(cdtype)

    v = basis_state(n, cdtype).reshape(1, 1, dim).expand(c, b, dim)
    acc = params.qsvt_coeffs[0] * v
    for k in range(1, cfg.qsvt_degree + 1):
        spread = v.unsqueeze(2).expand(c, b, nseq, dim).reshape(c, b * nseq, dim)
        evolved = apply_candidate_circuits(descs, n, spread, angles)
        v = torch.einsum("j,cbjd->cbd", coeff, evolved.reshape(c, b, nseq, dim))
        acc = acc + params.qsvt_coeffs[k] * v

    norms = torch.linalg.vector_norm(acc, dim=-1)
    if bool((norms <= NORM_EPS).any()):
        bad = int((norms <= NORM_EPS).any(dim=-1).nonzero()[0, 0])
        raise NormCollapse(
            f"{block} candidate {bad} collapsed the state "
            f"(norm <= {NORM_EPS:.0e}); polynomial coefficients are degenerate",
            block=block, candidate_index=bad)
    out = acc / norms.unsqueeze(-1)
    return out.reshape(c, *lead, dim) if lead else out.reshape(c, dim)


def timestep_block(features: torch.Tensor, desc: CandidateDescriptor,
                   params: HeadParams, cfg: HeadConfig,
                   dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Single-candidate timestep stage: features [..., N, d] -> state [..., 2^n]."""
    return timestep_states(features, [desc], params, cfg, dropout_mask)[0]


def qff_states(states: torch.Tensor, descs: Sequence[CandidateDescriptor],
               qff_angles: Sequence[torch.Tensor], cfg: HeadConfig) -> torch.Tensor:
    """Apply each feed-forward candidate to every input state.

    states: [..., 2^n] -> [len(descs), ..., 2^n]. Angles are raw
    (unconstrained) per-candidate vectors, squashed by sigmoid here. The
    angles are sample-independent, so each candidate's unitary is built once
    and applied to the whole batch as one matrix product.
    """
    descs = list(descs)
    cb = len(descs)
    n, dim = cfg.n_qubits, cfg.dim
    max_slots = max(param_count(d, n) for d in descs)
    rows = []
    for i, (d, raw) in enumerate(zip(descs, qff_angles)):
        pc = param_count(d, n)
        if raw.shape[-1] != pc:
            raise ValueError(f"qff candidate {i} angles sized {raw.shape[-1]}, need {pc}")
        pad = torch.zeros(max_slots - pc, dtype=raw.dtype)
        rows.append(torch.cat((torch.sigmoid(raw), pad)))
    padded = torch.stack(rows)
    unitaries = build_bank_unitaries(descs, n, padded).to(states.dtype)
    return torch.einsum("bed,...d->b...e", unitaries, states)


def forward_fixed(features: torch.Tensor,
                  arch: tuple[CandidateDescriptor, CandidateDescriptor],
                  params: HeadParams, cfg: HeadConfig,
                  dropout_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Full head for one fixed architecture pair: features [..., N, d] -> logits [..., K].

    Passing a dropout mask selects training behavior; without one the pass is
    deterministic (evaluation mode).
    """
    ts_desc, qff_desc = arch
    psi = timestep_block(features, ts_desc, params, cfg, dropout_mask)
    raw = params.qff_angles_for(qff_desc)
    phi = qff_states(psi, [qff_desc], [raw], cfg)[0]
    feats = pauli_expectations(phi, cfg.n_qubits)
    return classify(feats, params.cls_w, params.cls_b)
