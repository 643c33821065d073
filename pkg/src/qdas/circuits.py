"""Gate set, the 24-candidate per-block search space, and circuit compilation.

Candidate circuits follow a hardware-efficient template: an optional Hadamard
prefix applied once, then per layer one single-qubit rotation per qubit
followed by an entangling layer. Angle vectors carry normalized values in
[0, 1]; gates scale them to rotation angles phi = pi * value, i.e.
R_axis(theta_hat) = exp(-i * (pi * theta_hat / 2) * sigma_axis).

Conventions:
  - Qubit 0 is the most significant bit of a basis index; a state of n qubits
    reshapes to [2] * n with qubit q on axis q.
  - Angle consumption is prefix-ordered: per layer, n rotation angles (qubit
    0..n-1) come first, then n controlled-rotation angles (gate emission
    order) when the entangler is parameterized. A candidate reads the first
    param_count(desc, n) entries of whatever angle vector it is given, so one
    shared projection can feed every candidate.
  - Entangler topologies: LinearCNOT = CNOT(q -> q+1) for q = 0..n-2;
    RingCNOT = linear plus CNOT(n-1 -> 0); CRXForward = CRX(q -> (q+1) mod n)
    for q = 0..n-1; CRXBackward = CRX(q -> (q-1+n) mod n) emitted for
    q = n-1..0 (descending, so the two rings differ for every n >= 2).

`apply_candidate_circuits` is the only statevector engine in the package: it
evaluates a stack of candidates over a flat batch of states in a handful of
vectorized ops per layer and stays differentiable end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Sequence

import torch


class Init(str, Enum):
    HADAMARD = "hadamard"
    NONE = "none"


class Entangler(str, Enum):
    LINEAR_CNOT = "linear_cnot"
    RING_CNOT = "ring_cnot"
    CRX_FORWARD = "crx_forward"
    CRX_BACKWARD = "crx_backward"


class Rotation(str, Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"


# Enumeration order: init-major, then entangler, then rotation.
INIT_ORDER = (Init.HADAMARD, Init.NONE)
ENTANGLER_ORDER = (
    Entangler.LINEAR_CNOT,
    Entangler.RING_CNOT,
    Entangler.CRX_FORWARD,
    Entangler.CRX_BACKWARD,
)
ROTATION_ORDER = (Rotation.RX, Rotation.RY, Rotation.RZ)

N_CANDIDATES = len(INIT_ORDER) * len(ENTANGLER_ORDER) * len(ROTATION_ORDER)

# Largest head the simulator accepts (dense statevectors only).
QUBIT_LIMIT = 10


@dataclass(frozen=True)
class CandidateDescriptor:
    """One point of the per-block search space: init x entangler x rotation axis,
    at a fixed layer count (the layer count is configured per block, not searched)."""

    init: Init
    entangler: Entangler
    rotation: Rotation
    layers: int

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")


@dataclass(frozen=True)
class GateSpec:
    """A single gate instance; `param_slot` indexes into the angle vector."""

    kind: str  # "h", "rx", "ry", "rz", "cnot", "crx"
    target: int
    control: int | None = None
    param_slot: int | None = None

    def __post_init__(self):
        if self.kind in ("cnot", "crx"):
            if self.control is None or self.control == self.target:
                raise ValueError(f"{self.kind} needs control != target "
                                 f"(control={self.control}, target={self.target})")
        elif self.control is not None:
            raise ValueError(f"single-qubit gate {self.kind} cannot have a control")


@dataclass(frozen=True)
class CompiledCircuit:
    n_qubits: int
    gates: tuple[GateSpec, ...]
    n_params: int


def enumerate_candidates(layers: int) -> list[CandidateDescriptor]:
    """All 24 candidates at the given layer count, in stable init-major order."""
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    return [
        CandidateDescriptor(init, ent, rot, layers)
        for init in INIT_ORDER
        for ent in ENTANGLER_ORDER
        for rot in ROTATION_ORDER
    ]


def candidate_index(desc: CandidateDescriptor) -> int:
    """Position of `desc` in enumerate_candidates(desc.layers)."""
    return (INIT_ORDER.index(desc.init) * len(ENTANGLER_ORDER) * len(ROTATION_ORDER)
            + ENTANGLER_ORDER.index(desc.entangler) * len(ROTATION_ORDER)
            + ROTATION_ORDER.index(desc.rotation))


def entangler_is_parameterized(entangler: Entangler) -> bool:
    return entangler in (Entangler.CRX_FORWARD, Entangler.CRX_BACKWARD)


def param_count(desc: CandidateDescriptor, n_qubits: int) -> int:
    """Trainable angles: layers * (n rotations + n CRX angles when parameterized)."""
    per_layer = n_qubits + (n_qubits if entangler_is_parameterized(desc.entangler) else 0)
    return desc.layers * per_layer


def _entangler_gates(entangler: Entangler, n_qubits: int) -> list[tuple[int, int]]:
    """(control, target) pairs in emission order."""
    n = n_qubits
    if entangler == Entangler.LINEAR_CNOT:
        return [(q, q + 1) for q in range(n - 1)]
    if entangler == Entangler.RING_CNOT:
        return [(q, q + 1) for q in range(n - 1)] + [(n - 1, 0)]
    if entangler == Entangler.CRX_FORWARD:
        return [(q, (q + 1) % n) for q in range(n)]
    if entangler == Entangler.CRX_BACKWARD:
        return [(q, (q - 1 + n) % n) for q in range(n - 1, -1, -1)]
    raise ValueError(f"unknown entangler {entangler}")


@lru_cache(maxsize=None)
def compile_circuit(desc: CandidateDescriptor, n_qubits: int) -> CompiledCircuit:
    """Lower a descriptor to an ordered gate list with angle slots assigned."""
    if n_qubits < 2:
        raise ValueError("ring entanglers need n_qubits >= 2")
    gates: list[GateSpec] = []
    if desc.init == Init.HADAMARD:
        gates += [GateSpec("h", q) for q in range(n_qubits)]
    slot = 0
    parameterized = entangler_is_parameterized(desc.entangler)
    for _ in range(desc.layers):
        for q in range(n_qubits):
            gates.append(GateSpec(desc.rotation.value, q, param_slot=slot))
            slot += 1
        for control, target in _entangler_gates(desc.entangler, n_qubits):
            if parameterized:
                gates.append(GateSpec("crx", target, control=control, param_slot=slot))
                slot += 1
            else:
                gates.append(GateSpec("cnot", target, control=control))
    circuit = CompiledCircuit(n_qubits, tuple(gates), slot)
    assert circuit.n_params == param_count(desc, n_qubits)
    return circuit


# ---------------------------------------------------------------------------
# Gate matrices
# ---------------------------------------------------------------------------

_AXIS_ID = {Rotation.RX: 0, Rotation.RY: 1, Rotation.RZ: 2}


def rotation_gate(axis: Rotation | str, theta_hat: float) -> torch.Tensor:
    """2x2 rotation exp(-i * (pi * theta_hat / 2) * sigma_axis), theta_hat in [0, 1]."""
    try:
        axis = Rotation(axis)
    except ValueError:
        raise ValueError(f"axis must be one of rx/ry/rz, got {axis!r}") from None
    phi = math.pi * float(theta_hat)
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    if axis == Rotation.RX:
        mat = [[c, -1j * s], [-1j * s, c]]
    elif axis == Rotation.RY:
        mat = [[c, -s], [s, c]]
    else:
        mat = [[c - 1j * s, 0.0], [0.0, c + 1j * s]]
    return torch.tensor(mat, dtype=torch.complex128)


def hadamard_gate(dtype: torch.dtype = torch.complex128) -> torch.Tensor:
    inv = 1.0 / math.sqrt(2.0)
    return torch.tensor([[inv, inv], [inv, -inv]], dtype=dtype)


def _complex_dtype(real_dtype: torch.dtype) -> torch.dtype:
    return torch.complex64 if real_dtype == torch.float32 else torch.complex128


def _rotation_matrices(axis_ids: torch.Tensor, theta_hat: torch.Tensor) -> torch.Tensor:
    """Batched rotation matrices, [..., 2, 2]; axis_ids broadcasts against theta_hat."""
    phi = math.pi * theta_hat
    c, s = torch.cos(phi / 2), torch.sin(phi / 2)
    x = (axis_ids == 0).to(theta_hat.dtype)
    y = (axis_ids == 1).to(theta_hat.dtype)
    z = (axis_ids == 2).to(theta_hat.dtype)
    m00 = torch.complex(c, -s * z)
    m01 = torch.complex(-s * y, -s * x)
    m10 = torch.complex(s * y, -s * x)
    m11 = torch.complex(c, s * z)
    row0 = torch.stack((m00, m01), dim=-1)
    row1 = torch.stack((m10, m11), dim=-1)
    return torch.stack((row0, row1), dim=-2)


def _rx_matrices(theta_hat: torch.Tensor) -> torch.Tensor:
    phi = math.pi * theta_hat
    c = torch.cos(phi / 2)
    s = torch.sin(phi / 2)
    zero = torch.zeros_like(c)
    m_diag = torch.complex(c, zero)
    m_off = torch.complex(zero, -s)
    row0 = torch.stack((m_diag, m_off), dim=-1)
    row1 = torch.stack((m_off, m_diag), dim=-1)
    return torch.stack((row0, row1), dim=-2)


# ---------------------------------------------------------------------------
# Batched statevector primitives (flat batch of states in the leading axis)
# ---------------------------------------------------------------------------

def _apply_1q(states: torch.Tensor, mats: torch.Tensor, q: int, n: int) -> torch.Tensor:
    """Apply 2x2 gates to qubit q of [R, 2^n] states; mats is [R, 2, 2] or [2, 2]."""
    left, right = 1 << q, 1 << (n - 1 - q)
    s = states.reshape(-1, left, 2, right)
    if mats.dim() == 3:
        out = torch.einsum("rij,rljt->rlit", mats, s)
    else:
        out = torch.einsum("ij,rljt->rlit", mats, s)
    return out.reshape(states.shape)


def _apply_crx(states: torch.Tensor, mats: torch.Tensor, control: int, target: int,
               n: int) -> torch.Tensor:
    """Controlled 2x2 application: identity on the control=0 half, `mats` on the other."""
    r = states.shape[0]
    if control < target:
        a, b, c = 1 << control, 1 << (target - control - 1), 1 << (n - 1 - target)
        s = states.reshape(r, a, 2, b, 2, c)
        u0, u1 = s[:, :, 0], s[:, :, 1]
        u1 = torch.einsum("rij,rabjc->rabic", mats, u1)
        return torch.stack((u0, u1), dim=2).reshape(states.shape)
    a, b, c = 1 << target, 1 << (control - target - 1), 1 << (n - 1 - control)
    s = states.reshape(r, a, 2, b, 2, c)
    u0, u1 = s[..., 0, :], s[..., 1, :]
    u1 = torch.einsum("rij,rajbc->raibc", mats, u1)
    return torch.stack((u0, u1), dim=4).reshape(states.shape)


def _apply_hadamard_all(states: torch.Tensor, n: int) -> torch.Tensor:
    h = hadamard_gate(states.dtype)
    for q in range(n):
        states = _apply_1q(states, h, q, n)
    return states


@lru_cache(maxsize=None)
def _cnot_layer_gather(entangler: Entangler, n_qubits: int) -> torch.Tensor:
    """Index map g with out[..., j] = in[..., g[j]] for a whole CNOT layer."""
    dim = 1 << n_qubits
    image = torch.arange(dim)
    for control, target in _entangler_gates(entangler, n_qubits):
        cbit = 1 << (n_qubits - 1 - control)
        tbit = 1 << (n_qubits - 1 - target)
        image = torch.where(image & cbit != 0, image ^ tbit, image)
    # image[x] = F(x); the layer sends amplitude at x to F(x), so out[F(x)] = in[x].
    gather = torch.empty(dim, dtype=torch.long)
    gather[image] = torch.arange(dim)
    return gather


# ---------------------------------------------------------------------------
# The candidate-bank executor
# ---------------------------------------------------------------------------

class _Bank:
    """Precomputed structure for one (candidate tuple, n_qubits) pair."""

    def __init__(self, descs: tuple[CandidateDescriptor, ...], n_qubits: int):
        if n_qubits < 2 or n_qubits > QUBIT_LIMIT:
            raise ValueError(f"n_qubits must be in [2, {QUBIT_LIMIT}], got {n_qubits}")
        layers = {d.layers for d in descs}
        if len(layers) != 1:
            raise ValueError("all candidates in one bank must share a layer count")
        self.n_qubits = n_qubits
        self.layers = layers.pop()
        self.axis_ids = torch.tensor([_AXIS_ID[d.rotation] for d in descs])
        self.slots_per_layer = torch.tensor(
            [n_qubits * (2 if entangler_is_parameterized(d.entangler) else 1)
             for d in descs])
        self.had_idx = torch.tensor(
            [i for i, d in enumerate(descs) if d.init == Init.HADAMARD], dtype=torch.long)
        self.cnot_idx = torch.tensor(
            [i for i, d in enumerate(descs) if not entangler_is_parameterized(d.entangler)],
            dtype=torch.long)
        if self.cnot_idx.numel():
            self.cnot_gather = torch.stack(
                [_cnot_layer_gather(descs[int(i)].entangler, n_qubits)
                 for i in self.cnot_idx])
        else:
            self.cnot_gather = None
        self.crx_groups = []
        for ent in (Entangler.CRX_FORWARD, Entangler.CRX_BACKWARD):
            idx = torch.tensor([i for i, d in enumerate(descs) if d.entangler == ent],
                               dtype=torch.long)
            if idx.numel():
                self.crx_groups.append((idx, _entangler_gates(ent, n_qubits)))


_BANKS: dict[tuple, _Bank] = {}


def _get_bank(descs: tuple[CandidateDescriptor, ...], n_qubits: int) -> _Bank:
    key = (descs, n_qubits)
    bank = _BANKS.get(key)
    if bank is None:
        bank = _BANKS[key] = _Bank(descs, n_qubits)
    return bank


def _gather_slot(angles: torch.Tensor, slots: torch.Tensor) -> torch.Tensor:
    """angles [C, R, S], slots [C] -> theta [C, R]."""
    c, r, _ = angles.shape
    idx = slots.view(c, 1, 1).expand(c, r, 1)
    return torch.gather(angles, 2, idx).squeeze(2)


def apply_candidate_circuits(descs: Sequence[CandidateDescriptor], n_qubits: int,
                             states: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Apply candidate circuits to a stacked batch of states.

    Args:
        descs: candidate descriptors (all with the same layer count).
        states: [C, R, 2^n] complex amplitudes, candidate c acting on slice c.
        angles: [C, R, S] normalized angles in [0, 1]; candidate c reads its
            prefix slots from slice c (S may exceed any candidate's need).

    Returns:
        [C, R, 2^n] output states.
    """
    descs = tuple(descs)
    bank = _get_bank(descs, n_qubits)
    c, r, dim = states.shape
    if angles.shape[0] != c or angles.shape[1] != r:
        raise ValueError(f"angles shape {tuple(angles.shape)} does not match "
                         f"states {tuple(states.shape)}")
    needed = int((bank.slots_per_layer * bank.layers).max())
    if angles.shape[2] < needed:
        raise ValueError(f"angle vector too short: need {needed}, got {angles.shape[2]}")
    n = n_qubits
    flat = states.reshape(c * r, dim)

    if bank.had_idx.numel():
        out = states.clone()
        out[bank.had_idx] = _apply_hadamard_all(
            states[bank.had_idx].reshape(-1, dim), n).reshape(-1, r, dim)
        states = out
        flat = states.reshape(c * r, dim)

    for layer in range(bank.layers):
        base = layer * bank.slots_per_layer  # [C]
        # Rotation sub-layer: one call per qubit across every candidate.
        for q in range(n):
            theta = _gather_slot(angles, base + q)  # [C, R]
            mats = _rotation_matrices(bank.axis_ids.view(c, 1), theta)
            flat = _apply_1q(flat, mats.reshape(c * r, 2, 2), q, n)
        states = flat.reshape(c, r, dim)
        # Entangler sub-layer: the three structural groups partition the stack.
        out = torch.empty_like(states)
        if bank.cnot_idx.numel():
            sub = states[bank.cnot_idx]
            gather = bank.cnot_gather.unsqueeze(1).expand(-1, r, -1)
            out[bank.cnot_idx] = torch.gather(sub, 2, gather)
        for idx, gates in bank.crx_groups:
            sub = states[idx].reshape(-1, dim)
            sub_angles = angles[idx]
            sub_base = base[idx]
            for i, (control, target) in enumerate(gates):
                theta = _gather_slot(sub_angles, sub_base + n + i)
                mats = _rx_matrices(theta).reshape(-1, 2, 2)
                sub = _apply_crx(sub, mats, control, target, n)
            out[idx] = sub.reshape(-1, r, dim)
        states = out
        flat = states.reshape(c * r, dim)
    return states


def build_candidate_unitary(desc: CandidateDescriptor, n_qubits: int,
                            angles: torch.Tensor | Sequence[float]) -> torch.Tensor:
    """Dense 2^n x 2^n unitary for one candidate at one angle vector."""
    angles = torch.as_tensor(angles, dtype=torch.float64) \
        if not isinstance(angles, torch.Tensor) else angles
    if angles.dim() != 1:
        raise ValueError("angles must be a flat vector")
    return build_candidate_unitaries(desc, n_qubits, angles.unsqueeze(0))[0]


def build_candidate_unitaries(desc: CandidateDescriptor, n_qubits: int,
                              angles: torch.Tensor) -> torch.Tensor:
    """Dense unitaries for one candidate at a batch of angle vectors [K, S] -> [K, dim, dim]."""
    pc = param_count(desc, n_qubits)
    if angles.shape[-1] < pc:
        raise ValueError(f"angle vector too short: need {pc}, got {angles.shape[-1]}")
    k = angles.shape[0]
    dim = 1 << n_qubits
    cdtype = _complex_dtype(angles.dtype)
    eye = torch.eye(dim, dtype=cdtype)
    states = eye.unsqueeze(0).expand(k, dim, dim).reshape(1, k * dim, dim)
    ang = angles.unsqueeze(1).expand(k, dim, angles.shape[-1]).reshape(1, k * dim, -1)
    rows = apply_candidate_circuits([desc], n_qubits, states, ang)[0]
    # Row r holds U|r>, i.e. column r of U.
    return rows.reshape(k, dim, dim).transpose(1, 2)


def build_bank_unitaries(descs: Sequence[CandidateDescriptor], n_qubits: int,
                         angles: torch.Tensor) -> torch.Tensor:
    """Dense unitaries for a candidate stack at per-candidate angles [C, S] -> [C, dim, dim]."""
    descs = tuple(descs)
    c = len(descs)
    if angles.shape[0] != c:
        raise ValueError(f"angles carry {angles.shape[0]} rows for {c} candidates")
    dim = 1 << n_qubits
    cdtype = _complex_dtype(angles.dtype)
    eye = torch.eye(dim, dtype=cdtype)
    states = eye.unsqueeze(0).expand(c, dim, dim)
    ang = angles.unsqueeze(1).expand(c, dim, angles.shape[-1])
    rows = apply_candidate_circuits(descs, n_qubits, states, ang)
    return rows.transpose(1, 2)
