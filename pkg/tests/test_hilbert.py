import math

import numpy as np
import pytest

from tpesim import hilbert
from tpesim.hilbert import SpaceLayout


class TestCoherent:
    def test_vacuum(self):
        assert np.array_equal(hilbert.coherent_state(0, 8), hilbert.fock(8, 0))

    def test_poisson_amplitudes(self):
        # closed-form oracle e^{-|a|^2/2} a^n / sqrt(n!)
        v = hilbert.coherent_state(0.75, 16)
        for n in range(16):
            oracle = math.exp(-0.75**2 / 2) * 0.75**n / math.sqrt(math.factorial(n))
            assert abs(v[n] - oracle) < 1e-12
        assert abs(v[0] - 0.75484) < 1e-5

    def test_overlap_closed_form(self):
        v1 = hilbert.coherent_state(0.75, 16)
        v2 = hilbert.coherent_state(-0.75, 16)
        assert abs(np.vdot(v2, v1).real - math.exp(-2 * 0.75**2)) < 1e-10
        assert abs(np.vdot(v2, v1).real - 0.32465) < 1e-5

    def test_complex_amplitude_overlap(self):
        a, b = 0.4 + 0.3j, -0.2 + 0.5j
        va = hilbert.coherent_state(a, 20)
        vb = hilbert.coherent_state(b, 20)
        oracle = np.exp(-abs(a - b) ** 2 / 2 + 1j * np.imag(np.conj(b) * a))
        assert abs(np.vdot(vb, va) - oracle) < 1e-10

    def test_truncation_guard(self):
        with pytest.raises(hilbert.TruncationError):
            hilbert.coherent_state(2.0, 6)
        # explicit tolerance admits the same construction
        v = hilbert.coherent_state(2.0, 6, tail_tol=0.5)
        assert abs(np.linalg.norm(v) - 1) < 1e-12


class TestOperators:
    def test_annihilation(self):
        a = hilbert.annihilation_op(3)
        assert np.allclose(a @ hilbert.fock(3, 1), hilbert.fock(3, 0))
        assert np.allclose(a @ hilbert.fock(3, 2), math.sqrt(2) * hilbert.fock(3, 1))

    def test_canonical_commutator_interior(self):
        n = 10
        x, y = hilbert.quadrature_ops(n)
        comm = x @ y - y @ x
        interior = comm[: n - 2, : n - 2]
        assert np.allclose(interior, 1j * np.eye(n - 2), atol=1e-12)

    def test_coherent_x_expectation(self):
        alpha = 0.6
        v = hilbert.coherent_state(alpha, 16)
        x, _ = hilbert.quadrature_ops(16)
        assert abs(np.vdot(v, x @ v).real - math.sqrt(2) * alpha) < 1e-10


class TestQuadratureEigenvectors:
    def test_vacuum_component_at_origin(self):
        v = hilbert.quadrature_eigenvector(0.0, 0.0, 4)
        assert abs(v[0] - np.pi ** (-0.25)) < 1e-12
        assert abs(v[0] - 0.75113) < 1e-5

    def test_odd_levels_vanish_at_origin(self):
        v = hilbert.quadrature_eigenvector(0.0, 0.0, 8)
        assert np.allclose(v[1::2], 0.0, atol=1e-14)

    def test_matches_slow_hermite_oracle(self):
        # independent oracle: explicit Hermite polynomials via numpy.polynomial
        from numpy.polynomial.hermite import hermval

        n = 40
        xs = np.linspace(-6, 6, 25)
        psi = hilbert.hermite_functions(xs, n)
        for k in (0, 1, 5, 17, 39):
            c = np.zeros(k + 1)
            c[k] = 1.0
            oracle = (
                hermval(xs, c)
                * np.exp(-(xs**2) / 2)
                / (np.pi**0.25 * math.sqrt(2.0**k * math.factorial(k)))
            )
            assert np.max(np.abs(psi[:, k] - oracle)) < 1e-9

    def test_phase_convention(self):
        n = 6
        vx = hilbert.quadrature_eigenvector(1.3, 0.0, n)
        vy = hilbert.quadrature_eigenvector(1.3, np.pi / 2, n)
        phases = np.exp(1j * (np.pi / 2) * np.arange(n))
        assert np.allclose(vy, phases * vx, atol=1e-14)

    def test_completeness_for_coherent_state(self):
        # POVM completeness oracle by dense-grid quadrature
        n = 16
        v = hilbert.coherent_state(0.75, n)
        xs = np.linspace(-6, 6, 2401)
        psi = hilbert.hermite_functions(xs, n)
        amps = psi @ v.real + 1j * (psi @ v.imag)
        total = np.trapezoid(np.abs(amps) ** 2, xs)
        assert abs(total - 1.0) < 1e-6

    def test_guards(self):
        with pytest.raises(ValueError):
            hilbert.hermite_functions(np.array([50.0]), 4)
        with pytest.raises(ValueError):
            hilbert.hermite_functions(np.array([1.0]), 5000)


class TestLayoutAndStates:
    def test_layout(self):
        lay = SpaceLayout.protocol(8, 10, 4)
        assert lay.dims == (2, 2, 8, 10, 4)
        assert lay.dim == 2 * 2 * 8 * 10 * 4
        assert lay.axis("a") == 2 and lay.dim_of("c") == 4
        with pytest.raises(ValueError):
            hilbert.ModeSpec("a", 1)

    def test_step1_zero_amplitude(self):
        lay = SpaceLayout.protocol(4, 4)
        psi = hilbert.step1_joint_state(0.0, 0.0, lay)
        plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
        oracle = hilbert.kron_vectors(plus, plus, hilbert.fock(4, 0), hilbert.fock(4, 0))
        assert np.allclose(psi, oracle, atol=1e-14)

    def test_step1_normalized(self):
        lay = SpaceLayout.protocol(12, 12)
        psi = hilbert.step1_joint_state(0.75, 0.75, lay)
        assert abs(np.linalg.norm(psi) - 1) < 1e-10

    def test_step1_equals_reordered_product(self):
        n = 10
        lay = SpaceLayout.protocol(n, n)
        alpha, beta = 0.6, 0.4
        psi = hilbert.step1_joint_state(alpha, beta, lay)
        e, g = hilbert.qubit_state("e"), hilbert.qubit_state("g")
        pair_a = (
            np.kron(e, hilbert.coherent_state(alpha, n))
            + np.kron(g, hilbert.coherent_state(-alpha, n))
        ) / math.sqrt(2)
        pair_b = (
            np.kron(e, hilbert.coherent_state(beta, n))
            + np.kron(g, hilbert.coherent_state(-beta, n))
        ) / math.sqrt(2)
        prod = np.kron(pair_a, pair_b).reshape(2, n, 2, n)
        reordered = np.transpose(prod, (0, 2, 1, 3)).reshape(-1)
        assert np.allclose(psi, reordered, atol=1e-12)

    def test_qubit_marginal_coherence_suppression(self):
        from tpesim import linalg

        n = 12
        alpha = 0.75
        lay = SpaceLayout.protocol(n, n)
        psi = hilbert.step1_joint_state(alpha, alpha, lay)
        rho_q = linalg.partial_trace(np.outer(psi, psi.conj()), lay.dims, keep=(0, 1))
        s = math.exp(-2 * alpha**2)
        # one qubit flipped: one factor of <-a|a>; both flipped: two factors
        assert abs(rho_q[3, 1] - 0.25 * s) < 1e-10
        assert abs(rho_q[3, 0] - 0.25 * s * s) < 1e-10
        assert abs(rho_q[3, 3] - 0.25) < 1e-12

    def test_parity_projection_probabilities(self):
        lay = SpaceLayout.protocol(10, 12)
        psi = hilbert.step1_joint_state(0.6, 0.9, lay)
        pe, prob_e = hilbert.parity_project(psi, lay, "even")
        po, prob_o = hilbert.parity_project(psi, lay, "odd")
        assert abs(prob_e - 0.5) < 1e-10 and abs(prob_o - 0.5) < 1e-10
        assert abs(np.linalg.norm(pe) - 1) < 1e-12
        assert abs(np.vdot(pe, po)) < 1e-12

    def test_parity_projection_pure_sector(self):
        lay = SpaceLayout.protocol(6, 6)
        ee = hilbert.kron_vectors(
            hilbert.qubit_state("e"), hilbert.qubit_state("e"),
            hilbert.coherent_state(0.4, 6, tail_tol=1e-6),
            hilbert.coherent_state(0.4, 6, tail_tol=1e-6),
        )
        proj, prob = hilbert.parity_project(ee, lay, "even")
        assert abs(prob - 1.0) < 1e-12
        assert np.allclose(proj, ee)
        with pytest.raises(hilbert.ZeroProbabilityError):
            hilbert.parity_project(ee, lay, "odd")


class TestValidators:
    def test_state_norm(self):
        with pytest.raises(ValueError):
            hilbert.check_state_vector(np.array([1.0, 1.0]))

    def test_density_checks(self):
        good = np.diag([0.5, 0.5]).astype(complex)
        hilbert.check_density_matrix(good)
        with pytest.raises(ValueError):
            hilbert.check_density_matrix(np.diag([0.7, 0.7]).astype(complex))
        bad_herm = np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex)
        with pytest.raises(ValueError):
            hilbert.check_density_matrix(bad_herm)
        neg = np.diag([1.2, -0.2]).astype(complex)
        with pytest.raises(ValueError):
            hilbert.check_density_matrix(neg)
