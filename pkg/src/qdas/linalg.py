"""Dense complex linear algebra for small statevector / density-matrix simulation.

Everything operates on torch tensors (complex128 by default) and stays
differentiable, so gradients flow through matrix polynomials and state
normalization. Storage is dense and row-major; the simulator is meant for
at most QUBIT_CAP qubits, where clarity and exact gradients beat asymptotic
savings.
"""

from __future__ import annotations

from typing import Sequence

import torch

# Hard dimension cap (2**QUBIT_CAP) for any matrix built here.
QUBIT_CAP = 12

# Global tolerance for unitarity / hermiticity / trace checks.
ATOL = 1e-10

# States with norm at or below this are considered collapsed.
NORM_EPS = 1e-12


class NormCollapse(RuntimeError):
    """State norm fell below NORM_EPS (a degenerate polynomial transform).

    When raised from an ensemble evaluation, `block` and `candidate_index`
    identify the offending candidate circuit.
    """

    def __init__(self, message: str, block: str | None = None,
                 candidate_index: int | None = None):
        super().__init__(message)
        self.block = block
        self.candidate_index = candidate_index


def kron(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Kronecker product of two matrices; output dimensions multiply."""
    out_rows = a.shape[-2] * b.shape[-2]
    out_cols = a.shape[-1] * b.shape[-1]
    cap = 1 << QUBIT_CAP
    if out_rows > cap or out_cols > cap:
        raise ValueError(
            f"kron result {out_rows}x{out_cols} exceeds the {QUBIT_CAP}-qubit cap"
        )
    return torch.kron(a, b)


def matrix_polynomial(m: torch.Tensor, coeffs: Sequence[float] | torch.Tensor) -> torch.Tensor:
    """Evaluate c_d M^d + ... + c_1 M + c_0 I by iterated multiplication.

    No eigendecomposition is used, so the result is differentiable in both
    the matrix entries and the coefficients.
    """
    if len(coeffs) == 0:
        raise ValueError("matrix_polynomial needs at least one coefficient")
    if m.shape[-1] != m.shape[-2]:
        raise ValueError(f"matrix must be square, got {tuple(m.shape)}")
    eye = torch.eye(m.shape[-1], dtype=m.dtype, device=m.device)
    out = coeffs[0] * eye
    power = eye
    for c in coeffs[1:]:
        power = power @ m
        out = out + c * power
    return out


def expectation(rho: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
    """Tr(rho @ obs) for a Hermitian observable; the imaginary residue is dropped."""
    if rho.shape[-1] != obs.shape[-2] or rho.shape[-2] != obs.shape[-1]:
        raise ValueError(
            f"dimension mismatch: rho {tuple(rho.shape)} vs obs {tuple(obs.shape)}"
        )
    return torch.einsum("...ij,ji->...", rho, obs).real


def normalize_state(v: torch.Tensor) -> torch.Tensor:
    """Return a unit-norm copy of `v` (norm over the last axis).

    Raises NormCollapse if any norm is at or below NORM_EPS.
    """
    norm = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    if bool((norm <= NORM_EPS).any()):
        raise NormCollapse(f"state norm {float(norm.min()):.3e} <= {NORM_EPS:.0e}")
    return v / norm


def basis_state(n_qubits: int, dtype: torch.dtype = torch.complex128) -> torch.Tensor:
    """|0...0> on `n_qubits` qubits."""
    v = torch.zeros(1 << n_qubits, dtype=dtype)
    v[0] = 1.0
    return v


def outer(v: torch.Tensor) -> torch.Tensor:
    """|v><v| (pure-state density matrix), batched over leading axes."""
    return v.unsqueeze(-1) * v.conj().unsqueeze(-2)


def unitarity_defect(u: torch.Tensor) -> float:
    """max |(U^dag U - I)_ij| over the batch."""
    eye = torch.eye(u.shape[-1], dtype=u.dtype, device=u.device)
    return float((u.mH @ u - eye).abs().max())


def hermiticity_defect(m: torch.Tensor) -> float:
    return float((m - m.mH).abs().max())


def density_defects(rho: torch.Tensor) -> tuple[float, float, float]:
    """(hermiticity defect, |trace - 1|, min eigenvalue) for a density matrix."""
    herm = hermiticity_defect(rho)
    trace_err = float((torch.diagonal(rho, dim1=-2, dim2=-1).sum(-1) - 1.0).abs().max())
    sym = 0.5 * (rho + rho.mH)
    min_eig = float(torch.linalg.eigvalsh(sym).min())
    return herm, trace_err, min_eig


def is_unitary(u: torch.Tensor, atol: float = ATOL) -> bool:
    return unitarity_defect(u) <= atol


def is_physical_density(rho: torch.Tensor, atol: float = ATOL) -> bool:
    herm, trace_err, min_eig = density_defects(rho)
    return herm <= atol and trace_err <= atol and min_eig >= -10 * atol
