import numpy as np
import pytest
import scipy.linalg
import torch

from qdas.circuits import (
    CandidateDescriptor,
    Entangler,
    GateSpec,
    Init,
    Rotation,
    build_candidate_unitaries,
    build_candidate_unitary,
    candidate_index,
    compile_circuit,
    enumerate_candidates,
    param_count,
    rotation_gate,
)

import oracles


class TestEnumeration:
    def test_exactly_24(self):
        assert len(enumerate_candidates(2)) == 24

    def test_joint_space_576(self):
        assert len(enumerate_candidates(2)) * len(enumerate_candidates(1)) == 576

    def test_first_element_ordering_convention(self):
        first = enumerate_candidates(2)[0]
        assert first == CandidateDescriptor(Init.HADAMARD, Entangler.LINEAR_CNOT,
                                            Rotation.RX, 2)

    def test_all_combinations_distinct(self):
        descs = enumerate_candidates(1)
        assert len({(d.init, d.entangler, d.rotation) for d in descs}) == 24

    def test_stable_ordering_across_calls(self):
        a = [(d.init.value, d.entangler.value, d.rotation.value)
             for d in enumerate_candidates(3)]
        b = [(d.init.value, d.entangler.value, d.rotation.value)
             for d in enumerate_candidates(3)]
        assert a == b

    def test_candidate_index_roundtrip(self):
        for i, d in enumerate(enumerate_candidates(2)):
            assert candidate_index(d) == i

    def test_layers_zero_rejected(self):
        with pytest.raises(ValueError):
            enumerate_candidates(0)
        with pytest.raises(ValueError):
            CandidateDescriptor(Init.NONE, Entangler.RING_CNOT, Rotation.RX, 0)


class TestRotationGate:
    def test_zero_angle_is_identity(self):
        for axis in ("rx", "ry", "rz"):
            np.testing.assert_allclose(rotation_gate(axis, 0.0).numpy(), np.eye(2),
                                       atol=1e-15)

    def test_ry_full_angle_against_expm_oracle(self):
        # exp(-i * (pi/2) * sigma_y) computed with the matrix exponential.
        sy = np.array([[0, -1j], [1j, 0]])
        want = scipy.linalg.expm(-1j * (np.pi * 1.0 / 2) * sy)
        np.testing.assert_allclose(rotation_gate(Rotation.RY, 1.0).numpy(), want,
                                   atol=1e-12)
        np.testing.assert_allclose(want, np.array([[0, -1], [1, 0]]), atol=1e-12)

    def test_rz_full_angle_diagonal(self):
        want = np.diag([np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)])
        np.testing.assert_allclose(rotation_gate("rz", 1.0).numpy(), want, atol=1e-12)

    def test_expm_oracle_random_angles(self):
        paulis = {"rx": np.array([[0, 1], [1, 0]]),
                  "ry": np.array([[0, -1j], [1j, 0]]),
                  "rz": np.array([[1, 0], [0, -1]])}
        rng = np.random.default_rng(0)
        for axis, sigma in paulis.items():
            for theta in rng.uniform(0, 1, 5):
                want = scipy.linalg.expm(-1j * (np.pi * theta / 2) * sigma)
                np.testing.assert_allclose(rotation_gate(axis, theta).numpy(), want,
                                           atol=1e-12)

    def test_bad_axis_rejected(self):
        with pytest.raises(ValueError, match="axis"):
            rotation_gate("rw", 0.5)


class TestParamCount:
    def test_crx_backward_two_layers(self):
        desc = CandidateDescriptor(Init.NONE, Entangler.CRX_BACKWARD, Rotation.RZ, 2)
        assert param_count(desc, 8) == 32

    def test_ring_cnot_one_layer(self):
        desc = CandidateDescriptor(Init.NONE, Entangler.RING_CNOT, Rotation.RX, 1)
        assert param_count(desc, 8) == 8

    def test_matches_compiled_slots(self):
        for n in (2, 4):
            for desc in enumerate_candidates(2):
                circuit = compile_circuit(desc, n)
                slots = {g.param_slot for g in circuit.gates if g.param_slot is not None}
                assert len(slots) == param_count(desc, n) == circuit.n_params
                assert slots == set(range(circuit.n_params))


class TestGateSpec:
    def test_control_equals_target_rejected(self):
        with pytest.raises(ValueError):
            GateSpec("cnot", target=1, control=1)

    def test_single_qubit_with_control_rejected(self):
        with pytest.raises(ValueError):
            GateSpec("rx", target=0, control=1, param_slot=0)


class TestBuildUnitary:
    def test_cnot_only_at_zero_angles(self):
        # Rotations at angle 0 are the identity; the circuit reduces to the
        # product of its CNOTs.
        desc = CandidateDescriptor(Init.NONE, Entangler.LINEAR_CNOT, Rotation.RX, 1)
        u = build_candidate_unitary(desc, 3, torch.zeros(3, dtype=torch.float64))
        want = (oracles.embed_controlled(oracles.PX, 1, 2, 3)
                @ oracles.embed_controlled(oracles.PX, 0, 1, 3))
        np.testing.assert_allclose(u.numpy(), want, atol=1e-14)

    def test_hand_multiplied_hadamard_ring(self):
        # (Hadamard, RingCNOT, RY) on 2 qubits at zero angles:
        # CNOT(1->0) . CNOT(0->1) . (H (x) H), all written out by hand.
        desc = CandidateDescriptor(Init.HADAMARD, Entangler.RING_CNOT, Rotation.RY, 1)
        u = build_candidate_unitary(desc, 2, torch.zeros(2, dtype=torch.float64))
        h = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        hh = np.kron(h, h)
        cnot_01 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
        cnot_10 = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]])
        want = cnot_10 @ cnot_01 @ hh
        np.testing.assert_allclose(u.numpy(), want, atol=1e-14)

    def test_matches_kron_oracle_all_candidates(self):
        rng = np.random.default_rng(1)
        for n in (2, 3):
            for desc in enumerate_candidates(2):
                angles = rng.uniform(0, 1, param_count(desc, n))
                got = build_candidate_unitary(desc, n, torch.from_numpy(angles))
                want = oracles.candidate_unitary(
                    desc.init.value, desc.entangler.value, desc.rotation.value,
                    desc.layers, n, angles)
                np.testing.assert_allclose(got.numpy(), want, atol=1e-12)

    def test_unitarity_random_candidates(self):
        rng = np.random.default_rng(2)
        for desc in enumerate_candidates(1):
            angles = torch.from_numpy(rng.uniform(0, 1, (5, param_count(desc, 4))))
            us = build_candidate_unitaries(desc, 4, angles)
            eye = torch.eye(16, dtype=torch.complex128)
            defect = (us.mH @ us - eye).abs().max()
            assert float(defect) < 1e-10

    def test_prefix_angle_consumption(self):
        # Extending the angle vector beyond param_count must not change the
        # unitary: a candidate reads only its prefix.
        rng = np.random.default_rng(3)
        desc = CandidateDescriptor(Init.NONE, Entangler.RING_CNOT, Rotation.RY, 2)
        pc = param_count(desc, 3)
        angles = rng.uniform(0, 1, pc + 7)
        u_exact = build_candidate_unitary(desc, 3, torch.from_numpy(angles[:pc]))
        u_long = build_candidate_unitary(desc, 3, torch.from_numpy(angles))
        np.testing.assert_allclose(u_exact.numpy(), u_long.numpy(), atol=0)

    def test_short_angle_vector_rejected(self):
        desc = CandidateDescriptor(Init.NONE, Entangler.CRX_FORWARD, Rotation.RX, 1)
        with pytest.raises(ValueError, match="too short"):
            build_candidate_unitary(desc, 3, torch.zeros(5, dtype=torch.float64))

    def test_crx_directions_differ(self):
        # Forward and backward CRX rings differ at random angles for n >= 2,
        # and coincide only when every angle is zero.
        rng = np.random.default_rng(4)
        for n in (2, 3, 4):
            fwd = CandidateDescriptor(Init.NONE, Entangler.CRX_FORWARD, Rotation.RX, 1)
            bwd = CandidateDescriptor(Init.NONE, Entangler.CRX_BACKWARD, Rotation.RX, 1)
            angles = torch.from_numpy(rng.uniform(0.1, 0.9, param_count(fwd, n)))
            uf = build_candidate_unitary(fwd, n, angles)
            ub = build_candidate_unitary(bwd, n, angles)
            assert float((uf - ub).abs().max()) > 1e-3
            zero = torch.zeros_like(angles)
            np.testing.assert_allclose(build_candidate_unitary(fwd, n, zero).numpy(),
                                       build_candidate_unitary(bwd, n, zero).numpy(),
                                       atol=0)

    def test_single_qubit_rejected(self):
        desc = CandidateDescriptor(Init.NONE, Entangler.RING_CNOT, Rotation.RX, 1)
        with pytest.raises(ValueError):
            build_candidate_unitary(desc, 1, torch.zeros(1, dtype=torch.float64))

    def test_float32_angles_give_complex64(self):
        desc = CandidateDescriptor(Init.HADAMARD, Entangler.CRX_FORWARD, Rotation.RZ, 1)
        u = build_candidate_unitary(desc, 2, torch.rand(4, dtype=torch.float32))
        assert u.dtype == torch.complex64
        eye = torch.eye(4, dtype=torch.complex64)
        assert float((u.mH @ u - eye).abs().max()) < 1e-5
