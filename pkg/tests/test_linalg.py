import numpy as np
import pytest
import torch

from qdas.linalg import (
    NormCollapse,
    basis_state,
    density_defects,
    expectation,
    kron,
    matrix_polynomial,
    normalize_state,
    outer,
    unitarity_defect,
)


def _rand_complex(rng, *shape):
    return torch.from_numpy(rng.normal(size=shape) + 1j * rng.normal(size=shape))


class TestKron:
    def test_identity_case(self):
        eye2 = torch.eye(2, dtype=torch.complex128)
        np.testing.assert_allclose(kron(eye2, eye2).numpy(), np.eye(4), atol=0)

    def test_z_tensor_identity(self):
        z = torch.tensor([[1, 0], [0, -1]], dtype=torch.complex128)
        eye2 = torch.eye(2, dtype=torch.complex128)
        np.testing.assert_allclose(kron(z, eye2).numpy(), np.diag([1, 1, -1, -1]), atol=0)

    def test_mixed_product_rule(self):
        # (A (x) B)(C (x) D) = (AC) (x) (BD), checked by direct multiplication.
        rng = np.random.default_rng(0)
        for _ in range(10):
            a, b, c, d = (_rand_complex(rng, 2, 2) for _ in range(4))
            left = kron(a, b) @ kron(c, d)
            right = kron(a @ c, b @ d)
            np.testing.assert_allclose(left.numpy(), right.numpy(), atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b, c = (_rand_complex(rng, 2, 2) for _ in range(3))
            np.testing.assert_allclose(kron(kron(a, b), c).numpy(),
                                       kron(a, kron(b, c)).numpy(), atol=1e-12)

    def test_dimension_cap(self):
        big = torch.eye(1 << 7, dtype=torch.complex128)
        with pytest.raises(ValueError, match="cap"):
            kron(big, big)


class TestMatrixPolynomial:
    def test_constant_only(self):
        m = torch.tensor([[2.0, 1.0], [0.0, 3.0]], dtype=torch.complex128)
        np.testing.assert_allclose(matrix_polynomial(m, [1.0]).numpy(), np.eye(2), atol=0)

    def test_identity_coeffs(self):
        rng = np.random.default_rng(2)
        m = _rand_complex(rng, 3, 3)
        np.testing.assert_allclose(matrix_polynomial(m, [0.0, 1.0]).numpy(),
                                   m.numpy(), atol=1e-14)

    def test_diagonal_scalar_oracle(self):
        # coeffs (1, 2, 3) on diag(1, 2): per-entry scalar polynomial gives
        # 1 + 2*1 + 3*1 = 6 and 1 + 2*2 + 3*4 = 17.
        m = torch.diag(torch.tensor([1.0, 2.0])).to(torch.complex128)
        out = matrix_polynomial(m, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(out.numpy(), np.diag([6.0, 17.0]), atol=1e-12)

    def test_diagonal_property_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            diag = rng.normal(size=4)
            coeffs = rng.normal(size=rng.integers(1, 6))
            m = torch.diag(torch.from_numpy(diag)).to(torch.complex128)
            out = matrix_polynomial(m, coeffs)
            scalar = np.array([np.polyval(coeffs[::-1], d) for d in diag])
            np.testing.assert_allclose(np.diag(out.numpy()), scalar, atol=1e-12)

    def test_empty_coeffs_rejected(self):
        with pytest.raises(ValueError):
            matrix_polynomial(torch.eye(2, dtype=torch.complex128), [])

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            matrix_polynomial(torch.zeros(2, 3, dtype=torch.complex128), [1.0])


class TestExpectation:
    def test_ground_state_z(self):
        rho = outer(basis_state(1))
        z = torch.tensor([[1, 0], [0, -1]], dtype=torch.complex128)
        assert float(expectation(rho, z)) == pytest.approx(1.0, abs=1e-14)

    def test_maximally_mixed_traceless(self):
        rho = torch.eye(4, dtype=torch.complex128) / 4
        zz = torch.diag(torch.tensor([1.0, -1.0, -1.0, 1.0])).to(torch.complex128)
        assert float(expectation(rho, zz)) == pytest.approx(0.0, abs=1e-14)

    def test_matches_statevector_oracle(self):
        # <psi|X_0|psi> computed directly on the amplitudes.
        rng = np.random.default_rng(4)
        for _ in range(10):
            psi = rng.normal(size=4) + 1j * rng.normal(size=4)
            psi /= np.linalg.norm(psi)
            x0 = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2)).astype(complex)
            want = np.real(np.conj(psi) @ x0 @ psi)
            rho = outer(torch.from_numpy(psi))
            got = float(expectation(rho, torch.from_numpy(x0)))
            assert got == pytest.approx(want, abs=1e-12)

    def test_real_on_random_physical_density(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            rho = a @ a.conj().T
            rho /= np.trace(rho).real
            obs = rng.normal(size=(4, 4))
            obs = torch.from_numpy(obs + obs.T).to(torch.complex128)
            val = torch.einsum("ij,ji->", torch.from_numpy(rho), obs)
            assert abs(float(val.imag)) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            expectation(torch.eye(2, dtype=torch.complex128),
                        torch.eye(4, dtype=torch.complex128))


class TestNormalizeState:
    def test_scales_to_unit(self):
        v = torch.tensor([2.0, 0.0, 0.0, 0.0], dtype=torch.complex128)
        np.testing.assert_allclose(normalize_state(v).numpy(), [1, 0, 0, 0], atol=0)

    def test_unit_vector_unchanged(self):
        v = torch.tensor([0.0, 1.0], dtype=torch.complex128)
        np.testing.assert_allclose(normalize_state(v).numpy(), v.numpy(), atol=0)

    def test_complex_hand_norm(self):
        v = torch.tensor([1.0, 1.0j], dtype=torch.complex128)
        want = np.array([1.0, 1.0j]) / np.sqrt(2)
        np.testing.assert_allclose(normalize_state(v).numpy(), want, atol=1e-15)

    def test_collapse_raises(self):
        v = torch.zeros(4, dtype=torch.complex128)
        with pytest.raises(NormCollapse):
            normalize_state(v)


class TestChecks:
    def test_unitarity_defect_zero_for_unitary(self):
        h = torch.tensor([[1, 1], [1, -1]], dtype=torch.complex128) / np.sqrt(2)
        assert unitarity_defect(h) < 1e-15

    def test_density_defects_pure_state(self):
        rng = np.random.default_rng(6)
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        psi /= np.linalg.norm(psi)
        herm, tr, eig = density_defects(outer(torch.from_numpy(psi)))
        assert herm < 1e-14 and tr < 1e-14 and eig > -1e-12
