"""Invariant suites behind the ``validate`` command.

``quick`` covers the structural invariants in under a minute at small
dimensions; ``full`` adds the physics cross-validations (adiabatic
elimination, unraveling consistency, lobe centers, efficiency
monotonicity).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import dynamics, hilbert, linalg, measurement, metrics, protocol
from .shiftops import ladder_monomial


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_density(rng, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _coherent_mixture(rng, levels: int, n_terms: int = 3) -> np.ndarray:
    """Random mixture of two-mode coherent products with |amp| <= 1.5."""
    d = levels * levels
    rho = np.zeros((d, d), dtype=np.complex128)
    w = rng.random(n_terms)
    w /= w.sum()
    for k in range(n_terms):
        amps = rng.uniform(-1.5, 1.5, size=2)
        v = np.kron(
            hilbert.coherent_state(amps[0], levels),
            hilbert.coherent_state(amps[1], levels),
        )
        rho += w[k] * np.outer(v, v.conj())
    return rho


def check_generator_trace(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(6):
        dim = int(rng.integers(3, 9))
        rho = _random_density(rng, dim * dim)
        a = hilbert.annihilation_op(dim)
        ab = np.kron(a, a)
        h = _random_density(rng, dim * dim)
        rhs = dynamics.lindblad_rhs(rho, [(0.7, ab)], h=h)
        worst = max(worst, abs(np.trace(rhs)) / np.linalg.norm(rho))
    return worst <= 1e-12, f"max |Tr rhs|/||rho|| = {worst:.2e}"


def check_state_preservation(rng) -> tuple[bool, str]:
    n = 6
    lay = hilbert.SpaceLayout.protocol(n, n)
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, n_a=n, n_b=n)
    psi = hilbert.step1_joint_state(0.5, 0.5, lay, tail_tol=1e-6)
    gen = dynamics.two_photon_generator(lay.dims, 2, 3, p)
    rho = gen.evolve(hilbert.ket_to_dm(psi), 10 / p.kappa_2ph, 0.02 / p.kappa_2ph)
    tr = np.trace(rho).real
    herm = linalg.hermiticity_defect(rho)
    wmin = float(np.linalg.eigvalsh(rho).min())
    ok = abs(tr - 1) <= 1e-8 and herm <= 1e-10 and wmin >= -1e-8
    return ok, f"trace-1 {tr - 1:.1e}, herm {herm:.1e}, min-eig {wmin:.1e}"


def check_dark_space(rng) -> tuple[bool, str]:
    n = 6
    dims = (n, n)
    ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
    # random state supported on min(n_a, n_b) = 0
    dark = [i * n + 0 for i in range(n)] + [0 * n + j for j in range(1, n)]
    v = np.zeros((n * n,), dtype=np.complex128)
    amps = rng.standard_normal(len(dark)) + 1j * rng.standard_normal(len(dark))
    v[dark] = amps / np.linalg.norm(amps)
    rho = np.outer(v, v.conj())
    gen = dynamics.StructuredLindblad(dims, [(1.0, ab)])
    rhs = gen.rhs(rho)
    rho_t = gen.evolve(rho, 5.0, 0.02)
    drift = np.linalg.norm(rho_t - rho)
    ok = np.linalg.norm(rhs) <= 1e-13 and drift <= 1e-12
    return ok, f"||rhs|| {np.linalg.norm(rhs):.1e}, drift {drift:.1e}"


def check_number_difference(rng) -> tuple[bool, str]:
    n = 6
    lay = hilbert.SpaceLayout.protocol(n, n)
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.3, n_a=n, n_b=n)
    psi = hilbert.step1_joint_state(0.5, 0.3, lay, tail_tol=1e-6)
    gen = dynamics.two_photon_generator(lay.dims, 2, 3, p)
    na = np.zeros(lay.dim)
    nb = np.zeros(lay.dim)
    idx = np.arange(lay.dim)
    na[:] = (idx // n) % n
    nb[:] = idx % n
    _, _, series = gen.evolve(
        hilbert.ket_to_dm(psi),
        10 / p.kappa_2ph,
        0.02 / p.kappa_2ph,
        observables={"nd": na - nb},
        sample_every=50,
    )
    drift = float(np.abs(series["nd"] - series["nd"][0]).max())
    return drift <= 1e-8, f"max drift {drift:.1e}"


def check_rk4_vs_expm(rng) -> tuple[bool, str]:
    n = 6
    dims = (n, n)
    ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
    v = np.kron(
        hilbert.coherent_state(0.5, n, tail_tol=1e-6),
        hilbert.coherent_state(0.5, n, tail_tol=1e-6),
    )
    rho0 = np.outer(v, v.conj())
    gen = dynamics.StructuredLindblad(dims, [(1.0, ab)])
    rho = gen.evolve(rho0, 10.0, 0.02)
    s = linalg.lindblad_superoperator([(1.0, ab.dense())])
    oracle = linalg.unvec(linalg.expm(s * 10.0) @ linalg.vec(rho0))
    err = np.linalg.norm(rho - oracle)
    return err <= 1e-8, f"Frobenius {err:.1e}"


def check_quadrature_completeness(rng) -> tuple[bool, str]:
    n = 16
    lay = hilbert.SpaceLayout.protocol(n, n)
    axis = measurement.quadrature_axis(6.0, 0.05)
    worst = 0.0
    for _ in range(2):
        rho_modes = _coherent_mixture(rng, n)
        rho = np.kron(np.diag([0.25] * 4).astype(complex), rho_modes)
        for quad in ("X", "Y"):
            density, _ = measurement.qubit_state_grid(rho, lay, quad, axis)
            total = float(np.trapezoid(np.trapezoid(density, axis, axis=1), axis))
            worst = max(worst, abs(total - 1.0))
    return worst <= 1e-6, f"max |integral - 1| = {worst:.1e}"


def check_concurrence_invariance(rng) -> tuple[bool, str]:
    from scipy.stats import unitary_group

    ug = unitary_group(dim=2, seed=int(rng.integers(1 << 31)))
    worst = 0.0
    for _ in range(8):
        rho = _random_density(rng, 4)
        c0 = metrics.concurrence(rho)
        u = np.kron(ug.rvs(), ug.rvs())
        c1 = metrics.concurrence(u @ rho @ u.conj().T)
        worst = max(worst, abs(c0 - c1))
    return worst <= 1e-9, f"max |dC| = {worst:.1e}"


def check_werner(rng) -> tuple[bool, str]:
    phi = metrics.bell_state("phi+")
    worst = 0.0
    for p in (0.0, 0.2, 0.5, 0.8, 1.0):
        rho = p * np.outer(phi, phi.conj()) + (1 - p) * np.eye(4) / 4
        expect = max(0.0, (3 * p - 1) / 2)
        worst = max(worst, abs(metrics.concurrence(rho) - expect))
    return worst <= 1e-10, f"max deviation {worst:.1e}"


def check_parity_no_mixing(rng) -> tuple[bool, str]:
    n = 6
    lay = hilbert.SpaceLayout.protocol(n, n)
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, n_a=n, n_b=n)
    psi = hilbert.step1_joint_state(0.5, 0.5, lay, tail_tol=1e-6)
    psi_e, _ = hilbert.parity_project(psi, lay, "even")
    gen = dynamics.two_photon_generator(lay.dims, 2, 3, p)
    rho = gen.evolve(hilbert.ket_to_dm(psi_e), 10 / p.kappa_2ph, 0.02 / p.kappa_2ph)
    mask = hilbert.qubit_parity_mask(lay, "even")
    cross = rho[np.ix_(mask, ~mask)]
    leak = float(np.abs(cross).max())
    return leak <= 1e-12, f"max cross-sector element {leak:.1e}"


def check_even_odd_rotation(rng) -> tuple[bool, str]:
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, n_a=9, n_b=9)
    base = protocol.RunConfig(
        params=p, sector="even", quadrature="X", grid_window=4.0, grid_step=0.25
    )
    ge = protocol.run_analytic(base)
    go = protocol.run_analytic(replace(base, sector="odd"))
    # odd-sector structure equals the even grid with xi_b -> -xi_b
    diff = float(np.abs(ge.overlap - go.overlap[:, ::-1]).max())
    return diff <= 1e-6, f"max |F_even(a,b) - F_odd(a,-b)| = {diff:.1e}"


def check_reproducibility(rng) -> tuple[bool, str]:
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, n_a=8, n_b=8, seed=11)
    cfg = protocol.RunConfig(
        params=p, path="stochastic", quadrature="Y", trajectories=3, store_records=True,
        tail_tol=1e-9,
    )
    r1 = protocol.run_point(cfg)
    r2 = protocol.run_point(cfg)
    same = all(
        a.x_c == b.x_c and a.xi_a == b.xi_a and a.xi_b == b.xi_b
        and a.metrics == b.metrics
        for a, b in zip(r1.records, r2.records)
    )
    return same, "two runs bit-identical" if same else "runs diverged"


def check_sme_eta0(rng) -> tuple[bool, str]:
    n = 5
    dims = (n, n)
    ab = ladder_monomial(dims, [(0, "lower"), (1, "lower")])
    v = np.kron(
        hilbert.coherent_state(0.4, n, tail_tol=1e-6),
        hilbert.coherent_state(0.4, n, tail_tol=1e-6),
    )
    rho0 = np.outer(v, v.conj())
    rec = dynamics.evolve_sme_homodyne(
        rho0, [(1.0, ab.dense(), 0.0, 0.0)], t_end=2.0, dt=0.005, seed=3
    )
    rho = rho0.copy()
    for i in range(400):
        rho = rho + 0.005 * dynamics.lindblad_rhs(rho, [(1.0, ab.dense())])
        rho /= np.trace(rho).real
        if i % 64 == 63:
            rho = linalg.hermitianize(rho)
    err = np.linalg.norm(rec.final_rho - rho)
    return err <= 1e-12, f"pathwise |SME(eta=0) - Euler| = {err:.1e}"


def check_adiabatic_elimination(rng) -> tuple[bool, str]:
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, g=0.05, kappa_c=1.0, n_a=8, n_b=8, n_c=4)
    rel = adiabatic_deviation(p, t_end=5 / p.kappa_2ph)
    return rel <= 0.05, f"max rel <n_a> deviation {rel:.3f}"


def adiabatic_deviation(p: dynamics.ProtocolParams, t_end: float) -> float:
    """Max relative deviation of <n_a>(t): full three-mode vs effective model."""
    n_a, n_b, n_c = p.n_a, p.n_b, p.n_c
    ca = {s: hilbert.coherent_state(s * p.alpha, n_a, tail_tol=1e-9) for s in (1, -1)}
    cb = {s: hilbert.coherent_state(s * p.beta, n_b, tail_tol=1e-9) for s in (1, -1)}
    rho_ab = np.zeros((n_a * n_b, n_a * n_b), dtype=np.complex128)
    for sa in (1, -1):
        for sb in (1, -1):
            v = np.kron(ca[sa], cb[sb])
            rho_ab += 0.25 * np.outer(v, v.conj())
    vac = np.zeros((n_c, n_c), dtype=np.complex128)
    vac[0, 0] = 1.0
    rho3 = np.kron(rho_ab, vac)

    gen3 = dynamics.three_mode_generator((n_a, n_b, n_c), 0, 1, 2, p)
    na3 = np.repeat(np.arange(n_a), n_b * n_c).astype(float)
    _, t3, obs3 = gen3.evolve(
        rho3, t_end, p.dt_lindblad("three_mode"), observables={"na": na3}, sample_every=250
    )
    gen2 = dynamics.two_photon_generator((n_a, n_b), 0, 1, p)
    na2 = np.repeat(np.arange(n_a), n_b).astype(float)
    _, t2, obs2 = gen2.evolve(
        rho_ab, t_end, p.dt_lindblad("two_mode"), observables={"na": na2}, sample_every=1
    )
    v2 = np.interp(t3, t2, obs2["na"])
    return float(np.max(np.abs(obs3["na"] - v2) / np.maximum(np.abs(v2), 1e-12)))


def check_unraveling(rng) -> tuple[bool, str]:
    dist, bound = unraveling_consistency(
        n_traj=400, levels=6, alpha=0.5, times=(1.0, 3.0, 10.0), seed=5
    )
    worst = max(d / b for d, b in zip(dist, bound))
    return worst <= 1.0, f"max dist/(3 sigma_MC) = {worst:.2f}"


def unraveling_consistency(n_traj, levels, alpha, times, seed):
    """SME ensemble mean vs Lindblad solution at matched times.

    Returns (Frobenius distances, 3x Monte-Carlo standard errors).
    """
    p = dynamics.ProtocolParams(alpha=alpha, beta=alpha, n_a=levels, n_b=levels, seed=seed)
    lay = p.layout()
    kappa = p.kappa_2ph
    psi = hilbert.step1_joint_state(alpha, alpha, lay, tail_tol=1e-6)
    rho0 = hilbert.ket_to_dm(psi)
    t_scaled = [t / kappa for t in times]

    sums = [np.zeros_like(rho0) for _ in times]
    sqsums = [np.zeros(rho0.shape, dtype=np.float64) for _ in times]
    for i in range(n_traj):
        rec = dynamics.run_sme_two_photon(
            rho0, lay, p, seed=(seed, i), t_end=max(t_scaled), checkpoint_times=t_scaled
        )
        snaps = dict((round(t * kappa, 9), s) for t, s in rec.checkpoints)
        for j, t in enumerate(times):
            s = snaps[round(t, 9)]
            sums[j] += s
            sqsums[j] += np.abs(s) ** 2
    dists, bounds = [], []
    gen = dynamics.two_photon_generator(lay.dims, 2, 3, p)
    for j, t in enumerate(times):
        mean = sums[j] / n_traj
        lind = gen.evolve(rho0, t / kappa, p.dt_lindblad("two_mode"))
        var = sqsums[j] / n_traj - np.abs(mean) ** 2
        sigma = math.sqrt(max(float(var.sum()), 0.0) / n_traj)
        dists.append(float(np.linalg.norm(mean - lind)))
        bounds.append(3.0 * sigma)
    return dists, bounds


def check_lobe_centers(rng) -> tuple[bool, str]:
    p = dynamics.ProtocolParams(
        alpha=0.75, beta=0.75, n_a=12, n_b=12, t_final=200.0, seed=17
    )
    lay = p.layout()
    psi0 = hilbert.step1_joint_state(0.75, 0.75, lay)
    xbar = protocol.predicted_lobe_center(p)
    xcs = np.array(
        [dynamics.run_sse_pure_two_photon(psi0, lay, p, seed=(17, i)).x_c for i in range(6000)]
    )
    mu_p, mu_m, sigma, dll = fit_two_lobes(xcs)
    center = (mu_p - mu_m) / 2
    rel = abs(center - xbar) / xbar
    asym = abs(mu_p + mu_m) / center
    ok = rel <= 0.10 and dll > 10
    return ok, f"center {center:.2f} vs {xbar:.2f} (rel {rel:.3f}), asym {asym:.3f}, dLL {dll:.0f}"


def fit_two_lobes(x: np.ndarray, iters: int = 600):
    """Equal-weight two-Gaussian EM fit (free means, common sigma).

    Sector probabilities are exactly 1/2 each, so the weights are fixed;
    returns (mu_plus, mu_minus, sigma, delta-log-likelihood vs a single
    Gaussian).
    """
    mu1, mu2 = float(np.quantile(x, 0.75)), float(np.quantile(x, 0.25))
    s = float(x.std()) * 0.8
    for _ in range(iters):
        d1 = np.exp(-((x - mu1) ** 2) / (2 * s * s))
        d2 = np.exp(-((x - mu2) ** 2) / (2 * s * s))
        r = d1 / (d1 + d2)
        mu1 = float(np.sum(r * x) / np.sum(r))
        mu2 = float(np.sum((1 - r) * x) / np.sum(1 - r))
        s = math.sqrt(float(np.sum(r * (x - mu1) ** 2 + (1 - r) * (x - mu2) ** 2) / len(x)))
    mix = 0.5 * (
        np.exp(-((x - mu1) ** 2) / (2 * s * s)) + np.exp(-((x - mu2) ** 2) / (2 * s * s))
    )
    ll_mix = float(np.sum(np.log(mix))) - len(x) * math.log(math.sqrt(2 * math.pi) * s)
    m0, s0 = float(x.mean()), float(x.std())
    ll_one = float(np.sum(-((x - m0) ** 2) / (2 * s0 * s0))) - len(x) * math.log(
        math.sqrt(2 * math.pi) * s0
    )
    if mu1 < mu2:
        mu1, mu2 = mu2, mu1
    return mu1, mu2, s, ll_mix - ll_one


def check_eta_monotonicity(rng) -> tuple[bool, str]:
    p = dynamics.ProtocolParams(alpha=0.5, beta=0.5, n_a=8, n_b=8, seed=23)
    cfg = protocol.RunConfig(
        params=p, path="stochastic", quadrature="Y", trajectories=60,
        store_records=True, tail_tol=1e-9,
    )
    means, errs = [], []
    for eta in (0.6, 0.9):
        c = replace(cfg, params=replace(p, eta=eta))
        stats = protocol.run_point(c, seed_tag=(int(eta * 10),))
        fs = [r.metrics["fidelity_phase"] for r in stats.records
              if not r.aborted and r.verdict != "ambiguous"]
        means.append(float(np.mean(fs)))
        errs.append(float(np.std(fs) / math.sqrt(len(fs))))
    slack = 2 * math.hypot(*errs)
    ok = means[1] >= means[0] - slack
    return ok, f"mean F(0.9)={means[1]:.3f} vs F(0.6)={means[0]:.3f} (2sigma {slack:.3f})"


QUICK_CHECKS = [
    ("generator-trace-preservation", check_generator_trace),
    ("evolution-valid-state", check_state_preservation),
    ("dark-space-fixed-point", check_dark_space),
    ("number-difference-conservation", check_number_difference),
    ("rk4-vs-superoperator-expm", check_rk4_vs_expm),
    ("quadrature-completeness", check_quadrature_completeness),
    ("concurrence-local-unitary", check_concurrence_invariance),
    ("werner-concurrence", check_werner),
    ("parity-sector-no-mixing", check_parity_no_mixing),
    ("even-odd-grid-rotation", check_even_odd_rotation),
    ("seed-reproducibility", check_reproducibility),
    ("sme-eta0-deterministic", check_sme_eta0),
]

FULL_CHECKS = QUICK_CHECKS + [
    ("adiabatic-elimination", check_adiabatic_elimination),
    ("unraveling-consistency", check_unraveling),
    ("parity-lobe-centers", check_lobe_centers),
    ("eta-monotonicity", check_eta_monotonicity),
]


def run_checks(level: str = "quick", seed: int = 0) -> list[CheckResult]:
    checks = QUICK_CHECKS if level == "quick" else FULL_CHECKS
    results = []
    for name, fn in checks:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results
