import math

import numpy as np
import pytest

from tpesim import dynamics, linalg
from tpesim.dynamics import ProtocolParams
from tpesim.hilbert import (
    SpaceLayout,
    annihilation_op,
    coherent_state,
    fock,
    ket_to_dm,
    parity_project,
    qubit_parity_mask,
    step1_joint_state,
)
from tpesim.shiftops import ladder_monomial


def even_branch_state(n, alpha, tail=1e-6):
    lay = SpaceLayout.protocol(n, n)
    psi = step1_joint_state(alpha, alpha, lay, tail_tol=tail)
    pe, _ = parity_project(psi, lay, "even")
    return lay, ket_to_dm(pe)


class TestParams:
    def test_derived_quantities(self):
        p = ProtocolParams(alpha=0.5, beta=0.5, g=0.05, kappa_c=1.0)
        assert abs(p.kappa_2ph - 0.01) < 1e-15
        assert p.theta_c == 0.0
        assert abs(ProtocolParams(alpha=-0.5, beta=0.5).theta_c - math.pi) < 1e-12

    def test_regime_validation(self):
        good = ProtocolParams(alpha=0.5, beta=0.5)
        assert good.validate(strict=True) == []
        bad = ProtocolParams(alpha=0.5, beta=0.5, kappa_a=0.04)
        with pytest.raises(dynamics.RegimeError):
            bad.validate(strict=True)
        with pytest.warns(UserWarning):
            assert bad.validate(strict=False)
        with pytest.raises(ValueError):
            ProtocolParams(alpha=0.5, beta=0.5, eta=1.2).validate()

    def test_default_steps(self):
        p = ProtocolParams(alpha=0.5, beta=0.5)
        assert abs(p.dt_lindblad("two_mode") - 0.02 / p.kappa_2ph) < 1e-12
        assert abs(p.dt_lindblad("three_mode") - 0.02 / p.kappa_c) < 1e-12
        assert abs(p.t_end() - 10 / p.kappa_2ph) < 1e-9


class TestLindbladRHS:
    def test_zero_generator(self):
        rho = np.eye(4, dtype=complex) / 4
        assert np.allclose(dynamics.lindblad_rhs(rho, []), 0.0)

    def test_single_photon_decay(self):
        a = annihilation_op(3)
        rho = ket_to_dm(fock(3, 1))
        rhs = dynamics.lindblad_rhs(rho, [(0.8, a)])
        oracle = 0.8 * (ket_to_dm(fock(3, 0)) - ket_to_dm(fock(3, 1)))
        assert np.allclose(rhs, oracle, atol=1e-14)

    def test_trace_preservation_random(self):
        rng = np.random.default_rng(0)
        for _ in range(8):
            d = int(rng.integers(2, 12))
            a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            rho = a @ a.conj().T
            rho /= np.trace(rho).real
            op = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            rhs = dynamics.lindblad_rhs(rho, [(0.5, op)], h=(h + h.conj().T) / 2)
            assert abs(np.trace(rhs)) <= 1e-12 * np.linalg.norm(rho)

    def test_even_branch_symmetries(self):
        n = 8
        lay, rho = even_branch_state(n, 0.75, tail=1e-9)
        ab = ladder_monomial(lay.dims, [(2, "lower"), (3, "lower")])
        rhs = dynamics.lindblad_rhs(rho, [(1.0, ab.dense())])
        assert abs(np.trace(rhs)) < 1e-12
        # <n_a - n_b> conserved: its rate vanishes
        idx = np.arange(lay.dim)
        na = (idx // n) % n
        nb = idx % n
        assert abs(np.sum((na - nb) * np.diagonal(rhs).real)) < 1e-12


class TestEvolveLindblad:
    def test_t_zero_identity(self):
        rho = np.diag([0.25, 0.75]).astype(complex)
        out = dynamics.evolve_lindblad(rho, [(1.0, annihilation_op(2))], 0.0, 0.01)
        assert np.allclose(out, rho)

    def test_vacuum_dark(self):
        n = 4
        ab = np.kron(annihilation_op(n), annihilation_op(n))
        vac = ket_to_dm(np.kron(fock(n, 0), fock(n, 0)))
        out = dynamics.evolve_lindblad(vac, [(1.0, ab)], 5.0, 0.02)
        assert np.allclose(out, vac, atol=1e-12)

    def test_structured_matches_dense(self):
        n = 5
        dims = (n, n)
        ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
        v = np.kron(coherent_state(0.5, n, tail_tol=1e-6), coherent_state(0.5, n, tail_tol=1e-6))
        rho0 = ket_to_dm(v)
        gen = dynamics.StructuredLindblad(dims, [(1.0, ab)])
        out_s = gen.evolve(rho0, 3.0, 0.02)
        out_d = dynamics.evolve_lindblad(rho0, [(1.0, ab.dense())], 3.0, 0.02)
        assert np.allclose(out_s, out_d, atol=1e-12)

    def test_three_mode_structured_matches_dense(self):
        dims = (3, 3, 3)
        p = ProtocolParams(alpha=0.3, beta=0.3, g=0.05, kappa_c=1.0, n_a=3, n_b=3, n_c=3)
        gen = dynamics.three_mode_generator(dims, 0, 1, 2, p)
        pab = ladder_monomial(dims, [(0, "lower"), (1, "lower"), (2, "raise")])
        h = 1j * p.g * (pab.dense() - pab.dense().conj().T)
        c = ladder_monomial(dims, [(2, "lower")]).dense()
        v = np.kron(
            np.kron(coherent_state(0.3, 3, tail_tol=1e-3), coherent_state(0.3, 3, tail_tol=1e-3)),
            fock(3, 0),
        )
        rho0 = ket_to_dm(v)
        out_s = gen.evolve(rho0, 2.0, 0.02)
        out_d = dynamics.evolve_lindblad(rho0, [(p.kappa_c, c)], 2.0, 0.02, h=h)
        assert np.allclose(out_s, out_d, atol=1e-11)

    def test_rk4_vs_superoperator_expm_full_state(self):
        # brute-force oracle: mode-space superoperator exponential applied
        # to each qubit block (generator acts on modes only)
        n = 6
        lay, rho0 = even_branch_state(n, 0.75, tail=1e-4)
        p = ProtocolParams(alpha=0.75, beta=0.75, n_a=n, n_b=n, g=0.5, kappa_c=1.0)
        kappa = p.kappa_2ph
        gen = dynamics.two_photon_generator(lay.dims, 2, 3, p)
        out = gen.evolve(rho0, 10.0 / kappa, 0.02 / kappa)
        ab_m = np.kron(annihilation_op(n), annihilation_op(n))
        s = linalg.lindblad_superoperator([(kappa, ab_m)])
        prop = linalg.expm(s * (10.0 / kappa))
        m = n * n
        blocks = rho0.reshape(4, m, 4, m)
        oracle = np.empty_like(blocks)
        for i in range(4):
            for j in range(4):
                oracle[i, :, j, :] = linalg.unvec(prop @ linalg.vec(blocks[i, :, j, :]))
        assert np.linalg.norm(out - oracle.reshape(rho0.shape)) <= 1e-8

    def test_stability_guard(self):
        n = 16
        dims = (n, n)
        ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
        gen = dynamics.StructuredLindblad(dims, [(1.0, ab)])
        rho = ket_to_dm(np.kron(fock(n, 0), fock(n, 0)))
        with pytest.raises(ValueError, match="stability"):
            gen.evolve(rho, 1.0, 0.02)

    def test_dt_rate_bound(self):
        a = annihilation_op(3)
        rho = ket_to_dm(fock(3, 0))
        with pytest.raises(ValueError, match="dt"):
            dynamics.evolve_lindblad(rho, [(1.0, a)], 1.0, 0.2)


class TestQuasiSteady:
    def test_vacuum_fixed_point(self):
        p = ProtocolParams(alpha=0.0, beta=0.0, n_a=4, n_b=4, g=0.5, kappa_c=1.0)
        lay = p.layout()
        vac = ket_to_dm(step1_joint_state(0.0, 0.0, lay))
        out = dynamics.quasi_steady_state(vac, p, lay)
        assert np.allclose(out, vac, atol=1e-12)

    def test_single_excitation_dark(self):
        n = 4
        dims = (n, n)
        p = ProtocolParams(alpha=0.0, beta=0.0, n_a=n, n_b=n, g=0.5, kappa_c=1.0)
        rho = ket_to_dm(np.kron(fock(n, 1), fock(n, 0)))
        gen = dynamics.StructuredLindblad(
            dims, [(p.kappa_2ph, ladder_monomial(dims, [(0, "lower"), (1, "lower")]))]
        )
        out = gen.quasi_steady(rho, 0.02 / p.kappa_2ph, rate_scale=p.kappa_2ph)
        assert np.allclose(out, rho, atol=1e-12)

    def test_even_branch_dark_support_and_nullspace_oracle(self):
        n = 6
        lay, rho0 = even_branch_state(n, 0.75, tail=1e-4)
        p = ProtocolParams(alpha=0.75, beta=0.75, n_a=n, n_b=n, g=0.5, kappa_c=1.0)
        qs = dynamics.quasi_steady_state(rho0, p, lay)
        ab = ladder_monomial(lay.dims, [(2, "lower"), (3, "lower")])
        pair_occ = float(np.dot(ab.norm_diag(), np.diagonal(qs).real))
        assert pair_occ < 1e-8
        # two-mode correlations survive
        assert abs(qs[np.abs(qs) > 1e-3].size) > 16
        # null-space projection oracle: long-time superoperator exponential
        ab_m = np.kron(annihilation_op(n), annihilation_op(n))
        s = linalg.lindblad_superoperator([(p.kappa_2ph, ab_m)])
        prop = linalg.expm(s * (400.0 / p.kappa_2ph))
        m = n * n
        blocks = rho0.reshape(4, m, 4, m)
        oracle = np.empty_like(blocks)
        for i in range(4):
            for j in range(4):
                oracle[i, :, j, :] = linalg.unvec(prop @ linalg.vec(blocks[i, :, j, :]))
        assert np.linalg.norm(qs - oracle.reshape(qs.shape)) < 1e-6

    def test_nonconvergence_reported(self):
        n = 3
        dims = (n, n)
        ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
        gen = dynamics.StructuredLindblad(dims, [(1.0, ab)])
        rho = ket_to_dm(np.kron(fock(n, 1), fock(n, 1)))
        with pytest.raises(dynamics.ConvergenceError):
            gen.quasi_steady(rho, 0.02, rate_scale=1.0, tol=1e-8, t_max=0.5)


class TestSME:
    def test_eta_zero_matches_euler_reference(self):
        n = 5
        ab = ladder_monomial((n, n), [(0, "lower"), (1, "lower")])
        v = np.kron(coherent_state(0.4, n, tail_tol=1e-6), coherent_state(0.4, n, tail_tol=1e-6))
        rho0 = ket_to_dm(v)
        rec = dynamics.evolve_sme_homodyne(
            rho0, [(1.0, ab.dense(), 0.0, 0.0)], t_end=2.0, dt=0.005, seed=42
        )
        rho = rho0.copy()
        for i in range(400):
            rho = rho + 0.005 * dynamics.lindblad_rhs(rho, [(1.0, ab.dense())])
            rho /= np.trace(rho).real
            if i % 64 == 63:
                rho = linalg.hermitianize(rho)
        assert np.linalg.norm(rec.final_rho - rho) < 1e-12
        # and lies near the RK4 solution up to scheme order
        rk4 = dynamics.evolve_lindblad(rho0, [(1.0, ab.dense())], 2.0, 0.02)
        assert np.linalg.norm(rec.final_rho - rk4) < 0.05

    def test_fast_and_dense_loops_agree(self):
        n = 4
        ab = ladder_monomial((n, n), [(0, "lower"), (1, "lower")])
        v = np.kron(coherent_state(0.4, n, tail_tol=1e-4), coherent_state(0.4, n, tail_tol=1e-4))
        rho0 = ket_to_dm(v)
        monitored = [(1.0, ab.dense(), 0.3, 0.8)]
        steps = dynamics._steps_for(1.0, 0.005)
        rng = dynamics.make_rng(7)
        noise = dynamics._draw_noise(rng, len(steps), 1)

        rec_f = dynamics.TrajectoryRecord(seed=7)
        inc_f = np.zeros((len(steps), 1))
        rho_f = rho0.copy()
        dynamics._sme_loop_fast(
            rho_f, ab, 1.0, 0.3, 0.8, steps, noise[:, 0], inc_f[:, 0], {}, rec_f
        )
        rec_d = dynamics.TrajectoryRecord(seed=7)
        inc_d = np.zeros((len(steps), 1))
        rho_d = rho0.copy()
        dynamics._sme_loop_dense(rho_d, monitored, None, steps, noise, inc_d, {}, rec_d)
        assert np.allclose(rec_f.final_rho, rec_d.final_rho, atol=1e-11)
        assert np.allclose(inc_f, inc_d, atol=1e-11)

    def test_record_structure_and_checkpoints(self):
        n = 5
        p = ProtocolParams(alpha=0.4, beta=0.4, n_a=n, n_b=n, seed=9)
        lay = p.layout()
        psi = step1_joint_state(0.4, 0.4, lay, tail_tol=1e-6)
        times = [1 / p.kappa_2ph, 3 / p.kappa_2ph]
        rec = dynamics.run_sme_two_photon(
            ket_to_dm(psi), lay, p, seed=(9, 0), t_end=3 / p.kappa_2ph,
            checkpoint_times=times, record_increments=True,
        )
        assert len(rec.checkpoints) == 2
        for t, snap in rec.checkpoints:
            # Euler-Maruyama positivity floor is scheme-order, not 1e-8
            from tpesim.hilbert import check_density_matrix

            check_density_matrix(snap, herm_tol=1e-8, trace_tol=1e-6, eig_floor=-1e-4)
        assert rec.increments is not None
        assert abs(rec.x_c - rec.increments.sum()) < 1e-12

    def test_multichannel_dense_runs(self):
        n = 4
        dims = (n, n)
        ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")]).dense()
        a = ladder_monomial(dims, [(0, "lower")]).dense()
        v = np.kron(coherent_state(0.4, n, tail_tol=1e-4), coherent_state(0.4, n, tail_tol=1e-4))
        rec = dynamics.evolve_sme_homodyne(
            ket_to_dm(v),
            [(1.0, ab, 0.0, 1.0), (0.05, a, 0.0, 0.5)],
            t_end=1.0, dt=0.005, seed=1,
        )
        assert rec.x_c.shape == (2,)
        assert rec.increments.shape[1] == 2

    def test_pure_path_matches_matrix_weakly_same_noise(self):
        n = 6
        p = ProtocolParams(alpha=0.5, beta=0.5, n_a=n, n_b=n)
        lay = p.layout()
        psi = step1_joint_state(0.5, 0.5, lay, tail_tol=1e-6)
        rec_m = dynamics.run_sme_two_photon(
            ket_to_dm(psi), lay, p, seed=(3, 1), t_end=2 / p.kappa_2ph
        )
        rec_p = dynamics.run_sse_pure_two_photon(
            psi, lay, p, seed=(3, 1), t_end=2 / p.kappa_2ph
        )
        # same Wiener draws drive both engines: records agree to O(dt)
        assert abs(rec_m.x_c - rec_p.x_c) < 0.2
        rho_p = ket_to_dm(rec_p.final_state)
        assert np.linalg.norm(rec_m.final_rho - rho_p) < 0.02

    def test_parity_verdict(self):
        assert dynamics.parity_verdict(0.0, 0.1) == "ambiguous"
        assert dynamics.parity_verdict(1.0, 0.5) == "even"
        assert dynamics.parity_verdict(-1.0, 0.5) == "odd"
        with pytest.raises(ValueError):
            dynamics.parity_verdict(0.0, -1.0)

    def test_parity_sector_no_mixing(self):
        n = 5
        lay, rho0 = even_branch_state(n, 0.5)
        p = ProtocolParams(alpha=0.5, beta=0.5, n_a=n, n_b=n)
        rec = dynamics.run_sme_two_photon(rho0, lay, p, seed=(1, 2), t_end=2 / p.kappa_2ph)
        mask = qubit_parity_mask(lay, "even")
        cross = rec.final_rho[np.ix_(mask, ~mask)]
        assert np.abs(cross).max() <= 1e-12


class TestThreeMode:
    def test_g_zero_freezes_modes(self):
        p = ProtocolParams(alpha=0.3, beta=0.3, g=1e-9, kappa_c=1.0, n_a=4, n_b=4, n_c=3)
        lay = p.layout(with_c=True)
        psi = step1_joint_state(0.3, 0.3, lay, tail_tol=1e-4)
        rho0 = ket_to_dm(psi)
        out = dynamics.evolve_full_three_mode(rho0, p, t_end=3.0)
        na = ladder_monomial(lay.dims, [(2, "lower")]).norm_diag()
        before = float(np.dot(na, np.diagonal(rho0).real))
        after = float(np.dot(na, np.diagonal(out).real))
        assert abs(before - after) < 1e-6

    def test_c_decays_to_vacuum(self):
        p = ProtocolParams(alpha=0.0, beta=0.0, g=1e-9, kappa_c=1.0, n_a=2, n_b=2, n_c=3)
        lay = p.layout(with_c=True)
        v = np.zeros(lay.dim, dtype=complex)
        # |gg, 0, 0, n_c=2>
        v[2] = 1.0
        out = dynamics.evolve_full_three_mode(ket_to_dm(v), p, t_end=30.0)
        nc = ladder_monomial(lay.dims, [(4, "lower")]).norm_diag()
        assert float(np.dot(nc, np.diagonal(out).real)) < 1e-10

    def test_number_difference_conserved(self):
        p = ProtocolParams(alpha=0.4, beta=0.4, g=0.05, kappa_c=1.0, n_a=5, n_b=5, n_c=3)
        lay = p.layout(with_c=True)
        psi = step1_joint_state(0.4, 0.4, lay, tail_tol=1e-6)
        gen = dynamics.three_mode_generator(lay.dims, 2, 3, 4, p)
        na = ladder_monomial(lay.dims, [(2, "lower")]).norm_diag()
        nb = ladder_monomial(lay.dims, [(3, "lower")]).norm_diag()
        _, _, series = gen.evolve(
            ket_to_dm(psi), 50.0, 0.02, observables={"nd": na - nb}, sample_every=100
        )
        assert np.abs(series["nd"] - series["nd"][0]).max() <= 1e-8

    def test_stochastic_three_mode_record(self):
        p = ProtocolParams(alpha=0.3, beta=0.3, g=0.1, kappa_c=1.0, n_a=3, n_b=3, n_c=3)
        lay = p.layout(with_c=True)
        psi = step1_joint_state(0.3, 0.3, lay, tail_tol=1e-3)
        rec = dynamics.evolve_full_three_mode(
            ket_to_dm(psi), p, t_end=5.0, deterministic=False, seed=12
        )
        assert rec.final_rho is not None
        assert math.isfinite(rec.x_c)

    def test_regime_guard(self):
        p = ProtocolParams(alpha=0.3, beta=0.3, g=0.8, kappa_c=1.0, n_a=3, n_b=3, n_c=3)
        lay = p.layout(with_c=True)
        psi = step1_joint_state(0.3, 0.3, lay, tail_tol=1e-3)
        with pytest.raises(dynamics.RegimeError):
            dynamics.evolve_full_three_mode(ket_to_dm(psi), p, t_end=1.0)


@pytest.mark.slow
class TestEnsemble:
    def test_unraveling_consistency_small(self):
        from tpesim.checks import unraveling_consistency

        dists, bounds = unraveling_consistency(
            n_traj=200, levels=5, alpha=0.4, times=(1.0, 3.0), seed=8
        )
        for d, b in zip(dists, bounds):
            assert d < b

    def test_misclassification_vs_two_gaussian_oracle(self):
        from tpesim.checks import fit_two_lobes
        from scipy.stats import norm

        p = ProtocolParams(alpha=0.75, beta=0.75, n_a=12, n_b=12, t_final=200.0, seed=31)
        lay = p.layout()
        psi0 = step1_joint_state(0.75, 0.75, lay)
        mask = qubit_parity_mask(lay, "even")
        xcs, even = [], []
        for i in range(500):
            rec = dynamics.run_sse_pure_two_photon(psi0, lay, p, seed=(31, i))
            xcs.append(rec.x_c)
            u = rec.final_state
            even.append(float(np.sum(np.abs(u[mask]) ** 2)))
        xcs, even = np.array(xcs), np.array(even)
        mis = float(np.mean(((xcs > 0) & (even < 0.5)) | ((xcs < 0) & (even > 0.5))))
        mu_p, mu_m, sigma, _ = fit_two_lobes(xcs)
        predicted = float(norm.cdf(-((mu_p - mu_m) / 2) / sigma))
        assert abs(mis - predicted) < 0.06
