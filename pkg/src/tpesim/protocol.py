"""End-to-end protocol runs.

Two paths mirror the two ways the parity step can be treated:

* the analytic path replaces the monitored evolution by a deterministic
  Lindblad evolution of one parity sector and maps the quasi-steady
  state over a grid of step-III outcomes (``run_analytic``);
* the stochastic path simulates monitored trajectories, classifies the
  integrated current into a parity verdict, samples one step-III
  outcome per trajectory, and aggregates fidelity statistics
  (``run_stochastic`` / ``run_sweep``).

``compare_paths`` bins stochastic samples onto the analytic grid and
quantifies their agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import measurement, metrics
from .dynamics import (
    ProtocolParams,
    StructuredLindblad,
    TrajectoryAbort,
    TrajectoryRecord,
    make_rng,
    parity_verdict,
    run_sme_two_photon,
    run_sse_pure_two_photon,
    two_photon_generator,
)
from .hilbert import SpaceLayout, coherent_state, ket_to_dm, parity_project, step1_joint_state
from .measurement import apply_loss, quadrature_axis, sample_quadrature_pair, sample_quadrature_pair_pure
from .metrics import OutcomeGrid, concurrence_batch

DEFAULT_CUTOFF_FRACTION = 0.5
ABORT_INVALID_FRACTION = 0.01
ARTIFACT_PURITY_THRESHOLD = 0.95


@dataclass
class RunConfig:
    """One protocol run: parameters plus path-specific settings."""

    params: ProtocolParams
    path: str = "analytic"                 # analytic | stochastic
    sector: str = "even"
    quadrature: str = "Y"
    grid_window: float = measurement.DEFAULT_WINDOW
    grid_step: float = measurement.GRID_STEP
    trajectories: int = 500
    cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION
    pre_jpm_loss: bool = False             # model eta as amplitude loss before step II
    tail_tol: float = 1e-10
    force_matrix_engine: bool = False
    store_records: bool = False
    threads: int = 1

    def validate(self) -> None:
        if self.path not in ("analytic", "stochastic"):
            raise ValueError(f"unknown path {self.path!r}")
        if self.quadrature not in ("X", "Y"):
            raise ValueError(f"quadrature must be X or Y, got {self.quadrature!r}")
        if self.sector not in ("even", "odd"):
            raise ValueError(f"sector must be even or odd, got {self.sector!r}")
        if self.path == "stochastic" and self.trajectories < 1:
            raise ValueError("stochastic path needs at least one trajectory")
        if self.grid_step <= 0 or self.grid_window <= 0:
            raise ValueError("grid window and step must be positive")
        if not 0 <= self.cutoff_fraction:
            raise ValueError("cutoff fraction must be >= 0")


def _effective_amplitudes(config: RunConfig) -> tuple[float, float]:
    """Pre-JPM loss (when enabled) scales the incident amplitudes."""
    a, b = config.params.alpha, config.params.beta
    if config.pre_jpm_loss:
        s = math.sqrt(config.params.eta)
        a, b = s * a, s * b
    return a, b


# --- analytic path ------------------------------------------------------------


def run_analytic(config: RunConfig) -> OutcomeGrid:
    """Deterministic-Lindblad pipeline over a step-III outcome grid.

    step-I state -> parity projection -> quasi-steady state of the
    two-photon dissipator -> per-cell quadrature projection, conditional
    qubit state, and metrics.
    """
    config.validate()
    p = config.params
    p.validate(strict=False)
    layout = p.layout()
    alpha, beta = _effective_amplitudes(config)
    psi = step1_joint_state(alpha, beta, layout, tail_tol=config.tail_tol)
    psi_sector, _ = parity_project(psi, layout, config.sector)
    rho_qs = _quasi_steady(ket_to_dm(psi_sector), layout, p)
    if p.eta < 1.0 and not config.pre_jpm_loss:
        rho_qs = apply_loss(rho_qs, layout, p.eta)
    return _grid_from_state(rho_qs, layout, config)


def _quasi_steady(rho0, layout: SpaceLayout, p: ProtocolParams) -> np.ndarray:
    from .dynamics import lindblad_dt

    gen = two_photon_generator(layout.dims, layout.axis("a"), layout.axis("b"), p)
    return gen.quasi_steady(rho0, lindblad_dt(p, gen, "two_mode"), rate_scale=p.kappa_2ph)


def _grid_from_state(rho, layout: SpaceLayout, config: RunConfig) -> OutcomeGrid:
    axis = quadrature_axis(config.grid_window, config.grid_step)
    density, rho_cells = measurement.qubit_state_grid(rho, layout, config.quadrature, axis)
    norm = np.maximum(density, 1e-300)[..., None, None]
    rho_cells = rho_cells / norm
    target = metrics.bell_state("phi+" if config.sector == "even" else "psi+")
    overlap = np.einsum("i,ghij,j->gh", target.conj(), rho_cells, target).real
    conc = concurrence_batch(rho_cells.reshape(-1, 4, 4)).reshape(density.shape)
    pur = np.einsum("ghij,ghji->gh", rho_cells, rho_cells).real
    if config.sector == "even":
        phase = np.angle(rho_cells[..., metrics.GG, metrics.EE])
    else:
        phase = np.angle(rho_cells[..., metrics.GE, metrics.EG])
    grid = OutcomeGrid(
        quadrature=config.quadrature,
        sector=config.sector,
        xi_a=axis,
        xi_b=axis.copy(),
        density=density,
        overlap=np.clip(overlap, 0.0, None),
        concurrence=conc,
        grad_overlap=metrics.overlap_gradient(overlap, float(axis[1] - axis[0])),
        purity=pur,
        bell_phase=phase,
        params={
            "alpha": config.params.alpha,
            "beta": config.params.beta,
            "eta": config.params.eta,
            "g": config.params.g,
            "kappa_c": config.params.kappa_c,
            "n_a": config.params.n_a,
            "n_b": config.params.n_b,
        },
    )
    grid.validate()
    return grid


def sector_leakage(grid_rho_cells: np.ndarray, sector: str) -> float:
    """Max weight outside the grid's parity manifold (diagnostic)."""
    d = np.real(np.einsum("ghii->ghi", grid_rho_cells))
    inside = (
        d[..., metrics.GG] + d[..., metrics.EE]
        if sector == "even"
        else d[..., metrics.GE] + d[..., metrics.EG]
    )
    total = d.sum(axis=-1)
    return float(np.max(total - inside))


# --- lobe-center prediction ----------------------------------------------------


def predicted_lobe_center(params: ProtocolParams, t_end: float | None = None) -> float:
    """Deterministic even-sector mean of the integrated homodyne current.

    Evolves the mode-reduced even-branch state under the two-photon
    dissipator and accumulates sqrt(eta kappa) * 2 Re[e^{-i theta} <ab>]
    with the same left-Riemann convention and step as the trajectory
    record.  The odd sector gives the opposite sign.
    """
    from .shiftops import ladder_monomial

    t_end = t_end if t_end is not None else params.t_end()
    n_a, n_b = params.n_a, params.n_b
    ca = {s: coherent_state(s * params.alpha, n_a, tail_tol=1e-6) for s in (1, -1)}
    cb = {s: coherent_state(s * params.beta, n_b, tail_tol=1e-6) for s in (1, -1)}
    rho = np.zeros((n_a * n_b, n_a * n_b), dtype=np.complex128)
    for s in (1, -1):
        v = np.kron(ca[s], cb[s])
        rho += 0.5 * np.outer(v, v.conj())
    from .dynamics import sme_dt

    ab = ladder_monomial((n_a, n_b), [(0, "lower"), (1, "lower")])
    gen = StructuredLindblad((n_a, n_b), [(params.kappa_2ph, ab)])
    # same step as the trajectory engines so the Riemann sums line up
    dt = sme_dt(params, params.kappa_2ph * float(ab.norm_diag().max()))
    _, expects = gen.evolve(rho, t_end, dt, record_op=ab)
    eiph = np.exp(-1j * params.theta_c)
    return float(
        math.sqrt(params.eta * params.kappa_2ph) * np.sum(2.0 * (eiph * expects).real) * dt
    )


# --- stochastic path ------------------------------------------------------------


@dataclass
class PointStats:
    """Aggregates of one (alpha, eta) stochastic point."""

    alpha: float
    eta: float
    trajectories: int
    ambiguous: int
    aborted: int
    success_fraction: float
    max_fidelity_phase: float
    max_fidelity_fixed: float
    mean_fidelity_phase: float
    mean_concurrence: float
    cutoff: float
    lobe_center: float
    valid: bool
    records: list[TrajectoryRecord] | None = None


def _seed_hash(seed_tag: tuple) -> tuple:
    """Flatten a mixed seed tag into integers for SeedSequence."""
    out = []
    for part in seed_tag:
        if isinstance(part, str):
            out.append(int.from_bytes(part.encode()[:8], "little"))
        else:
            out.append(int(part))
    return tuple(out)


def _trajectory_task(args) -> TrajectoryRecord:
    psi0, layout, p, config, base, pure_engine, cutoff = args
    try:
        return _one_trajectory(psi0, layout, p, config, base, pure_engine, cutoff)
    except TrajectoryAbort as exc:
        return TrajectoryRecord(seed=base, aborted=True, abort_reason=str(exc))


def run_point(config: RunConfig, seed_tag: tuple = ()) -> PointStats:
    """Run one stochastic (alpha, eta) point of ``config.trajectories`` paths.

    Per trajectory: step-I state -> monitored SME (pure-state engine at
    eta = 1, density-matrix engine otherwise) -> parity verdict on the
    integrated current -> finite-efficiency step-III sampling -> metrics.
    Seeds derive from (params.seed, *seed_tag, index), so results are
    bit-reproducible and independent of scheduling or worker count.
    """
    config.validate()
    p = config.params
    layout = p.layout()
    alpha, beta = _effective_amplitudes(config)
    psi0 = step1_joint_state(alpha, beta, layout, tail_tol=config.tail_tol)
    center = predicted_lobe_center(p)
    cutoff = config.cutoff_fraction * abs(center)
    pure_engine = p.eta == 1.0 and not config.force_matrix_engine
    tag = _seed_hash(seed_tag)

    tasks = [
        (psi0, layout, p, config, (p.seed, *tag, i), pure_engine, cutoff)
        for i in range(config.trajectories)
    ]
    if config.threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            all_records = list(pool.map(_trajectory_task, tasks, chunksize=8))
    else:
        all_records = [_trajectory_task(t) for t in tasks]

    records: list[TrajectoryRecord] = []
    n_ambig = n_abort = 0
    f_phase, f_fixed, concs = [], [], []
    for rec in all_records:
        if rec.aborted:
            n_abort += 1
        elif rec.verdict == "ambiguous":
            n_ambig += 1
        else:
            f_phase.append(rec.metrics["fidelity_phase"])
            f_fixed.append(rec.metrics["fidelity_phi_plus"])
            concs.append(rec.metrics["concurrence"])
        if config.store_records:
            records.append(rec)
    n_ok = config.trajectories - n_abort
    n_used = len(f_phase)
    return PointStats(
        alpha=p.alpha,
        eta=p.eta,
        trajectories=config.trajectories,
        ambiguous=n_ambig,
        aborted=n_abort,
        success_fraction=(n_ok - n_ambig) / config.trajectories,
        max_fidelity_phase=max(f_phase) if n_used else 0.0,
        max_fidelity_fixed=max(f_fixed) if n_used else 0.0,
        mean_fidelity_phase=float(np.mean(f_phase)) if n_used else 0.0,
        mean_concurrence=float(np.mean(concs)) if n_used else 0.0,
        cutoff=cutoff,
        lobe_center=center,
        valid=(n_abort <= ABORT_INVALID_FRACTION * config.trajectories),
        records=records if config.store_records else None,
    )


def _one_trajectory(
    psi0, layout, p: ProtocolParams, config: RunConfig, base: tuple, pure_engine: bool, cutoff: float
) -> TrajectoryRecord:
    if pure_engine:
        rec = run_sse_pure_two_photon(psi0, layout, p, seed=(*base, 0))
    else:
        rec = run_sme_two_photon(ket_to_dm(psi0), layout, p, seed=(*base, 0))
    rec.verdict = parity_verdict(rec.x_c, cutoff)
    if rec.verdict == "ambiguous":
        return rec
    rng3 = make_rng((*base, 1))
    if pure_engine:
        outcome, rho_q = sample_quadrature_pair_pure(
            rec.final_state, layout, config.quadrature, rng3
        )
        rec.final_state = None
    else:
        rho = rec.final_rho
        if p.eta < 1.0 and not config.pre_jpm_loss:
            rho = apply_loss(rho, layout, p.eta)
        outcome, rho_q = sample_quadrature_pair(rho, layout, config.quadrature, rng3)
        rec.final_rho = None
    rec.xi_a, rec.xi_b, rec.density = outcome.xi_a, outcome.xi_b, outcome.density
    rec.rho_q = rho_q
    f_phase, phi = metrics.max_bell_overlap(rho_q, rec.verdict)
    even_w, odd_w = metrics.sector_weights(rho_q)
    rec.metrics = {
        "fidelity_phase": f_phase,
        "bell_phase": phi,
        "fidelity_phi_plus": metrics.bell_overlap(rho_q, "phi+"),
        "concurrence": metrics.concurrence(rho_q),
        "even_weight": even_w,
        "odd_weight": odd_w,
    }
    return rec


@dataclass
class SweepResult:
    """Grid of stochastic points over (alpha, eta)."""

    alphas: list[float]
    etas: list[float]
    points: list[PointStats] = field(default_factory=list)

    def point(self, alpha: float, eta: float) -> PointStats:
        for s in self.points:
            if s.alpha == alpha and s.eta == eta:
                return s
        raise KeyError((alpha, eta))


DEFAULT_SWEEP_ALPHAS = [0.25, 0.5, 0.75, 1.0, 1.25]
DEFAULT_SWEEP_ETAS = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


def fock_levels_for(alpha: float, floor: int = 8, tail_tol: float = 1e-10) -> int:
    """Smallest truncation meeting the coherent-tail criterion."""
    from .hilbert import coherent_tail

    n = floor
    while coherent_tail(alpha, n) > tail_tol and n < 64:
        n += 1
    return n


def run_sweep(
    config: RunConfig,
    alphas=None,
    etas=None,
    adapt_truncation: bool = True,
) -> SweepResult:
    """Stochastic sweep over (alpha, eta); M trajectories per point."""
    alphas = list(alphas if alphas is not None else DEFAULT_SWEEP_ALPHAS)
    etas = list(etas if etas is not None else DEFAULT_SWEEP_ETAS)
    result = SweepResult(alphas=alphas, etas=etas)
    for ia, alpha in enumerate(alphas):
        for ie, eta in enumerate(etas):
            p = replace(config.params, alpha=alpha, beta=alpha, eta=eta)
            if adapt_truncation:
                n = fock_levels_for(alpha, tail_tol=config.tail_tol)
                p = replace(p, n_a=n, n_b=n)
            cfg = replace(config, params=p)
            result.points.append(run_point(cfg, seed_tag=(ia, ie)))
    return result


def run_stochastic(config: RunConfig):
    """Dispatch of the stochastic path: one point or a full sweep."""
    config.validate()
    return run_point(config)


# --- path comparison -------------------------------------------------------------


@dataclass
class CompareReport:
    """Stochastic-vs-analytic agreement binned over the outcome plane."""

    axis: np.ndarray
    counts: np.ndarray
    mean_abs_df: np.ndarray          # per-bin mean |F_stoch - F_analytic|
    mean_c_stoch: np.ndarray
    c_analytic: np.ndarray
    artifact_mask: np.ndarray        # analytic impurity regions
    median_df_clean: float           # median per-bin |dF| outside artifacts
    used_bins: int
    samples: int


def compare_paths(
    alpha: float,
    beta: float,
    sector: str,
    quadrature: str,
    params: ProtocolParams | None = None,
    trajectories: int = 2000,
    bin_step: float = 0.5,
    window: float = 4.0,
    min_count: int = 10,
    seed: int = 0,
) -> CompareReport:
    """Bin heralded stochastic samples onto the analytic grid.

    Trajectories whose verdict matches ``sector`` contribute their
    (xi_a, xi_b, F, C) sample to the bin of the analytic grid evaluated
    at the same resolution; bins with fewer than ``min_count`` samples
    are excluded.  Artifact regions (analytic impurity from averaging
    over the lobe outcomes) are flagged by low analytic purity.
    """
    if params is None:
        params = ProtocolParams(alpha=alpha, beta=beta, seed=seed)
    else:
        params = replace(params, alpha=alpha, beta=beta, seed=seed)
    n = fock_levels_for(max(abs(alpha), abs(beta)))
    params = replace(params, n_a=n, n_b=n)
    cfg = RunConfig(
        params=params,
        path="stochastic",
        sector=sector,
        quadrature=quadrature,
        grid_window=window,
        grid_step=bin_step,
        trajectories=trajectories,
        store_records=True,
    )
    grid = run_analytic(cfg)
    target = metrics.bell_state("phi+" if sector == "even" else "psi+")
    stats = run_point(cfg, seed_tag=("compare",))

    axis = grid.xi_a
    nbin = len(axis)
    step = grid.step
    counts = np.zeros((nbin, nbin), dtype=int)
    sum_df = np.zeros((nbin, nbin))
    sum_c = np.zeros((nbin, nbin))
    n_samples = 0
    for rec in stats.records:
        if rec.aborted or rec.verdict != sector or rec.rho_q is None:
            continue
        ia = int(round((rec.xi_a - axis[0]) / step))
        ib = int(round((rec.xi_b - axis[0]) / step))
        if not (0 <= ia < nbin and 0 <= ib < nbin):
            continue
        f = metrics.bell_overlap(rec.rho_q, target)
        counts[ia, ib] += 1
        sum_df[ia, ib] += abs(f - grid.overlap[ia, ib])
        sum_c[ia, ib] += rec.metrics["concurrence"]
        n_samples += 1

    used = counts >= min_count
    mean_df = np.full_like(sum_df, np.nan)
    mean_c = np.full_like(sum_c, np.nan)
    mean_df[used] = sum_df[used] / counts[used]
    mean_c[used] = sum_c[used] / counts[used]
    artifacts = grid.purity < ARTIFACT_PURITY_THRESHOLD
    clean = used & ~artifacts
    return CompareReport(
        axis=axis,
        counts=counts,
        mean_abs_df=mean_df,
        mean_c_stoch=mean_c,
        c_analytic=grid.concurrence,
        artifact_mask=artifacts,
        median_df_clean=float(np.median(mean_df[clean])) if clean.any() else math.nan,
        used_bins=int(used.sum()),
        samples=n_samples,
    )
