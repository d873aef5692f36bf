"""Density-matrix evolution engines.

Deterministic Lindblad integration (fixed-step RK4), quasi-steady-state
search, the homodyne-monitored stochastic master equation with finite
efficiency, and the full three-mode interaction model used to validate
the adiabatic elimination of the parity mode.

Two implementation paths coexist and are cross-tested:

* a generic dense path taking arbitrary operator matrices (the public
  contracts, fine at small dimension);
* structured paths that exploit the shift-table form of the protocol's
  operators (see ``shiftops``) with numba-fused inner loops, used by the
  ensemble runs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, linalg
from .hilbert import SpaceLayout, check_density_matrix
from .shiftops import ShiftOp, ladder_monomial

DT_RATE_BOUND = 0.05          # dt * fastest-physical-rate bound
SME_DT_DIVISOR = 4            # Euler-Maruyama runs at the RK4 step / 4
RK4_SPECTRAL_MARGIN = 1.5     # dt * generator-spectral-scale cap (stability ~2.78)
EM_SPECTRAL_MARGIN = 1.0      # same cap for the Euler-Maruyama step (limit 2)
QS_TOL = 1e-8                 # quasi-steady ||drho/dt|| tolerance (x kappa_2ph)
QS_T_MAX_FACTOR = 50.0        # give up after 50 two-photon lifetimes
POSITIVITY_ABORT = -1e-6      # deterministic RK4 integration failure
# Euler-Maruyama undershoots positivity by O((rate*dt)^2) ~ 1e-5 per scheme
# order even on healthy trajectories; abort only on clear breakdown.
TRAJECTORY_POSITIVITY_ABORT = -1e-3


class RegimeError(ValueError):
    """Parameters violate the protocol's rate hierarchy."""


class IntegratorError(RuntimeError):
    """Deterministic integration left the space of valid states."""


class TrajectoryAbort(RuntimeError):
    """A stochastic trajectory became invalid and was abandoned."""


class ConvergenceError(RuntimeError):
    """Quasi-steady-state search did not converge within its horizon."""


@dataclass
class ProtocolParams:
    """Physical and numerical parameters of one protocol run.

    Rates are in arbitrary reciprocal-time units; the two-photon rate is
    derived as kappa_2ph = 4 g^2 / kappa_c and the homodyne phase as
    arg(g * alpha * beta).  dt / t_final default to generator-adapted
    values when left as None.
    """

    alpha: float
    beta: float
    g: float = 0.05
    kappa_c: float = 1.0
    kappa_a: float = 0.0
    kappa_b: float = 0.0
    eta: float = 1.0
    n_a: int = 16
    n_b: int = 16
    n_c: int = 6
    dt: float | None = None
    t_final: float | None = None
    seed: int = 0

    @property
    def kappa_2ph(self) -> float:
        return 4.0 * self.g**2 / self.kappa_c

    @property
    def theta_c(self) -> float:
        z = self.g * self.alpha * self.beta
        return float(np.angle(z)) if z != 0 else 0.0

    def layout(self, with_c: bool = False) -> SpaceLayout:
        return SpaceLayout.protocol(self.n_a, self.n_b, self.n_c if with_c else None)

    def max_rate(self, model: str = "two_mode") -> float:
        if model == "two_mode":
            return max(self.kappa_2ph, self.kappa_a, self.kappa_b)
        if model == "three_mode":
            return max(self.g, self.kappa_c, self.kappa_a, self.kappa_b)
        raise ValueError(f"unknown model {model!r}")

    def dt_lindblad(self, model: str = "two_mode") -> float:
        return self.dt if self.dt is not None else 0.02 / self.max_rate(model)

    def dt_sme(self, model: str = "two_mode") -> float:
        return self.dt_lindblad(model) / SME_DT_DIVISOR

    def t_end(self) -> float:
        return self.t_final if self.t_final is not None else 10.0 / self.kappa_2ph

    def validate(self, strict: bool = True) -> list[str]:
        """Check the rate-hierarchy regime; raise or warn per ``strict``."""
        problems = []
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.g <= 0 or self.kappa_c <= 0:
            raise ValueError("g and kappa_c must be positive")
        if max(self.kappa_a, self.kappa_b) >= self.g / 10:
            problems.append(
                f"residual losses kappa_a={self.kappa_a}, kappa_b={self.kappa_b} "
                f"not << g={self.g}"
            )
        if self.kappa_2ph >= self.kappa_c / 10:
            problems.append(
                f"kappa_2ph={self.kappa_2ph:.4g} not << kappa_c={self.kappa_c}"
            )
        if problems and strict:
            raise RegimeError("; ".join(problems))
        for p in problems:
            warnings.warn(p, stacklevel=2)
        return problems


@dataclass
class TrajectoryRecord:
    """Outcome of one stochastic trajectory."""

    seed: object
    x_c: float = 0.0
    verdict: str | None = None
    increments: np.ndarray | None = None
    checkpoints: list = field(default_factory=list)
    final_rho: np.ndarray | None = None
    final_state: np.ndarray | None = None
    xi_a: float | None = None
    xi_b: float | None = None
    density: float | None = None
    rho_q: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""


# --- generic dense Lindblad --------------------------------------------------


def lindblad_rhs(rho: np.ndarray, jumps, h: np.ndarray | None = None) -> np.ndarray:
    """drho/dt = -i[H, rho] + sum_k rate_k D(L_k) rho (dense operators)."""
    rho = linalg.as_cmatrix(rho)
    out = np.zeros_like(rho)
    if h is not None:
        h = linalg.as_cmatrix(h)
        if h.shape != rho.shape:
            raise ValueError("Hamiltonian dimension mismatch")
        out += -1j * (h @ rho - rho @ h)
    for rate, op in jumps:
        op = linalg.as_cmatrix(op)
        if op.shape != rho.shape:
            raise ValueError("jump operator dimension mismatch")
        lr = op @ rho
        k = op.conj().T @ op
        out += rate * (lr @ op.conj().T - 0.5 * (k @ rho + rho @ k))
    return out


def _check_dt(dt: float, max_rate: float) -> None:
    if max_rate > 0 and dt * max_rate > DT_RATE_BOUND * (1 + 1e-12):
        raise ValueError(
            f"dt={dt} too large for fastest rate {max_rate} "
            f"(need dt*rate <= {DT_RATE_BOUND})"
        )


def _steps_for(t_end: float, dt: float) -> list[float]:
    """Fixed steps of size dt with one shorter final step if needed."""
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    n_full = int(math.floor(t_end / dt + 1e-9))
    rem = t_end - n_full * dt
    steps = [dt] * n_full
    if rem > 1e-12 * max(1.0, t_end):
        steps.append(rem)
    return steps


def evolve_lindblad(
    rho0: np.ndarray,
    jumps,
    t_end: float,
    dt: float,
    h: np.ndarray | None = None,
) -> np.ndarray:
    """Fixed-step RK4 integration of the dense Lindblad equation.

    Hermiticity is enforced by symmetrization each step; the result is
    checked for trace drift (<= 1e-8) and positivity (>= -1e-6).
    """
    rho = linalg.as_cmatrix(rho0).copy()
    rates = [r for r, _ in jumps]
    hscale = float(np.abs(h).max()) if h is not None else 0.0
    _check_dt(dt, max(rates + [hscale]) if (rates or hscale) else 0.0)
    tr0 = np.trace(rho).real

    def rhs(r):
        return lindblad_rhs(r, jumps, h)

    for step in _steps_for(t_end, dt):
        k1 = rhs(rho)
        k2 = rhs(rho + (step / 2) * k1)
        k3 = rhs(rho + (step / 2) * k2)
        k4 = rhs(rho + step * k3)
        rho += (step / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = linalg.hermitianize(rho)
    _post_evolution_checks(rho, tr0)
    return rho


def _post_evolution_checks(rho: np.ndarray, tr0: float) -> None:
    linalg.check_finite(rho, "evolved state")
    drift = abs(np.trace(rho).real - tr0)
    if drift > 1e-8 * max(1.0, abs(tr0)):
        raise IntegratorError(
            f"trace drifted by {drift:.2e}; reduce dt"
        )
    wmin = float(np.linalg.eigvalsh(rho).min())
    if wmin < POSITIVITY_ABORT:
        raise IntegratorError(
            f"positivity violated (min eigenvalue {wmin:.2e}); reduce dt"
        )


# --- structured generator -----------------------------------------------------


class StructuredLindblad:
    """Lindblad generator built from shift-table channels.

    ``channels`` is a list of (rate, ShiftOp); ``three_wave`` optionally
    adds H = i g (P - P^dag) for a ladder monomial P.  The RHS assumes a
    Hermitian argument (true for every RK4 stage of a Hermitian state).
    """

    def __init__(self, dims, channels, three_wave=None):
        self.dims = tuple(int(d) for d in dims)
        self.dim = int(np.prod(self.dims))
        self.channels = [(float(r), op, op.norm_diag()) for r, op in channels]
        self.three_wave = None
        if three_wave is not None:
            g, p = three_wave
            self.three_wave = (float(g), p, p.dagger())

    @property
    def max_rate(self) -> float:
        rates = [r for r, _, _ in self.channels]
        if self.three_wave is not None:
            rates.append(self.three_wave[0])
        return max(rates) if rates else 0.0

    @property
    def spectral_scale(self) -> float:
        """Fastest decay/oscillation scale of the generator on the
        truncated space.  Dissipator eigenvalues reach rate * max(L^dag L)
        (occupation-scaled, e.g. kappa (N-1)^2 for the two-photon jump),
        which is what limits explicit-integrator stability - not the bare
        physical rate.
        """
        scale = sum(r * float(kd.max()) for r, _, kd in self.channels)
        if self.three_wave is not None:
            g, p, _ = self.three_wave
            scale += 2.0 * g * float(p.w.max())
        return scale

    @property
    def stable_dt(self) -> float:
        """Largest RK4 step the generator's stiffest mode tolerates."""
        s = self.spectral_scale
        return math.inf if s == 0 else RK4_SPECTRAL_MARGIN / s

    def _require_stable(self, dt: float) -> None:
        if dt > self.stable_dt * (1 + 1e-12):
            raise ValueError(
                f"dt={dt:.4g} exceeds the RK4 stability cap {self.stable_dt:.4g} "
                f"(generator spectral scale {self.spectral_scale:.4g}); reduce dt "
                f"or the Fock truncation"
            )

    def rhs_into(self, rho: np.ndarray, out: np.ndarray) -> None:
        if self.three_wave is None and len(self.channels) == 1:
            rate, op, kd = self.channels[0]
            _kernels.dissipator_rhs(rho, out, op.w, op.src, kd, rate)
            return
        if self.three_wave is not None and len(self.channels) == 1:
            g, p, pd = self.three_wave
            rate, op, kd = self.channels[0]
            _kernels.three_mode_rhs(
                rho, out, p.w, p.src, pd.w, pd.src, g, op.w, op.src, kd, rate
            )
            return
        # generic fallback (small-dimension use only)
        out[:] = 0.0
        if self.three_wave is not None:
            g, p, pd = self.three_wave
            x = p.apply_left(rho) - pd.apply_left(rho)
            out += g * (x + x.conj().T)
        for rate, op, kd in self.channels:
            out += rate * (
                op.sandwich(rho) - 0.5 * ((kd[:, None] + kd[None, :]) * rho)
            )

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        out = np.empty_like(rho)
        self.rhs_into(np.ascontiguousarray(rho, dtype=np.complex128), out)
        return out

    def evolve(
        self,
        rho0: np.ndarray,
        t_end: float,
        dt: float,
        observables: dict | None = None,
        sample_every: int = 1,
        record_op: ShiftOp | None = None,
    ):
        """RK4 evolution; optionally samples observables.

        ``observables`` maps name -> real diagonal vector, sampled before
        step 0 and after every ``sample_every`` steps; ``record_op``
        records Tr[op rho] before every step (left-Riemann convention of
        the homodyne record).  Returns rho alone, (rho, times, series),
        or appends the expectation array when ``record_op`` is given.
        """
        rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
        _check_dt(dt, self.max_rate)
        self._require_stable(dt)
        tr0 = np.trace(rho).real
        k1, k2, k3, k4, y = (np.empty_like(rho) for _ in range(5))
        times, series = [], {name: [] for name in (observables or {})}
        expects = []

        def sample(t):
            times.append(t)
            diag = np.real(np.diagonal(rho))
            for name, vec in observables.items():
                series[name].append(float(np.dot(vec, diag)))

        steps = _steps_for(t_end, dt)
        if observables:
            sample(0.0)
        t = 0.0
        for i, step in enumerate(steps):
            if record_op is not None:
                expects.append(record_op.expectation(rho))
            self.rhs_into(rho, k1)
            _kernels.axpy(y, rho, k1, step / 2)
            self.rhs_into(y, k2)
            _kernels.axpy(y, rho, k2, step / 2)
            self.rhs_into(y, k3)
            _kernels.axpy(y, rho, k3, step)
            self.rhs_into(y, k4)
            _kernels.rk4_combine(rho, k1, k2, k3, k4, step)
            _kernels.hermitize(rho)
            t += step
            if observables and (i + 1) % sample_every == 0:
                sample(t)
        _post_evolution_checks(rho, tr0)
        out = [rho]
        if observables:
            out += [np.array(times), {k: np.array(v) for k, v in series.items()}]
        if record_op is not None:
            out.append(np.array(expects))
        return out[0] if len(out) == 1 else tuple(out)

    def quasi_steady(
        self,
        rho0: np.ndarray,
        dt: float,
        rate_scale: float,
        tol: float = QS_TOL,
        t_max: float | None = None,
    ) -> np.ndarray:
        """Integrate until ||drho/dt||_F < tol * rate_scale."""
        rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
        _check_dt(dt, self.max_rate)
        self._require_stable(dt)
        if t_max is None:
            t_max = QS_T_MAX_FACTOR / rate_scale
        k1, k2, k3, k4, y = (np.empty_like(rho) for _ in range(5))
        t = 0.0
        threshold = tol * rate_scale
        while True:
            self.rhs_into(rho, k1)
            if float(np.linalg.norm(k1)) < threshold:
                return rho
            if t >= t_max:
                raise ConvergenceError(
                    f"quasi-steady state not reached by t={t_max:.3g}"
                )
            _kernels.axpy(y, rho, k1, dt / 2)
            self.rhs_into(y, k2)
            _kernels.axpy(y, rho, k2, dt / 2)
            self.rhs_into(y, k3)
            _kernels.axpy(y, rho, k3, dt)
            self.rhs_into(y, k4)
            _kernels.rk4_combine(rho, k1, k2, k3, k4, dt)
            _kernels.hermitize(rho)
            t += dt


def two_photon_generator(dims, a_axis: int, b_axis: int, params: ProtocolParams) -> StructuredLindblad:
    """kappa_2ph D(ab) [+ residual single-photon losses when nonzero]."""
    ab = ladder_monomial(dims, [(a_axis, "lower"), (b_axis, "lower")])
    channels = [(params.kappa_2ph, ab)]
    if params.kappa_a > 0:
        channels.append((params.kappa_a, ladder_monomial(dims, [(a_axis, "lower")])))
    if params.kappa_b > 0:
        channels.append((params.kappa_b, ladder_monomial(dims, [(b_axis, "lower")])))
    return StructuredLindblad(dims, channels)


def three_mode_generator(
    dims, a_axis: int, b_axis: int, c_axis: int, params: ProtocolParams
) -> StructuredLindblad:
    """H = i g (a b c^dag - h.c.) plus kappa_c D(c) (rotating frame)."""
    p = ladder_monomial(dims, [(a_axis, "lower"), (b_axis, "lower"), (c_axis, "raise")])
    c = ladder_monomial(dims, [(c_axis, "lower")])
    channels = [(params.kappa_c, c)]
    if params.kappa_a > 0:
        channels.append((params.kappa_a, ladder_monomial(dims, [(a_axis, "lower")])))
    if params.kappa_b > 0:
        channels.append((params.kappa_b, ladder_monomial(dims, [(b_axis, "lower")])))
    return StructuredLindblad(dims, channels, three_wave=(params.g, p))


def lindblad_dt(params: ProtocolParams, gen: StructuredLindblad, model: str) -> float:
    """Default RK4 step: the rate-adapted spec value, stability-capped."""
    if params.dt is not None:
        return params.dt
    return min(params.dt_lindblad(model), gen.stable_dt)


def sme_dt(params: ProtocolParams, spectral_scale: float, model: str = "two_mode") -> float:
    """Default Euler-Maruyama step (RK4 default / 4, stability-capped)."""
    if params.dt is not None:
        return params.dt / SME_DT_DIVISOR
    cap = math.inf if spectral_scale == 0 else EM_SPECTRAL_MARGIN / spectral_scale
    return min(params.dt_sme(model), cap)


def quasi_steady_state(
    rho0: np.ndarray,
    params: ProtocolParams,
    layout: SpaceLayout | None = None,
    tol: float = QS_TOL,
) -> np.ndarray:
    """Quasi-steady state of the two-photon dissipator (residual losses off).

    Converged when ||drho/dt||_F < tol * kappa_2ph; the result is
    supported on the dark space min(n_a, n_b) = 0 up to the tolerance.
    """
    layout = layout or params.layout()
    gen = StructuredLindblad(
        layout.dims,
        [(params.kappa_2ph, ladder_monomial(layout.dims, [(layout.axis("a"), "lower"), (layout.axis("b"), "lower")]))],
    )
    dt = lindblad_dt(params, gen, "two_mode")
    return gen.quasi_steady(rho0, dt, rate_scale=params.kappa_2ph, tol=tol)


def evolve_full_three_mode(
    rho0: np.ndarray,
    params: ProtocolParams,
    t_end: float | None = None,
    deterministic: bool = True,
    seed=None,
    layout: SpaceLayout | None = None,
    observables: dict | None = None,
    sample_every: int = 1,
):
    """Evolve under the full three-wave model (deterministic or monitored).

    The deterministic branch returns the evolved density matrix (plus
    sampled observables when requested); the stochastic branch monitors
    the c-mode decay channel via the generic SME engine and returns a
    TrajectoryRecord.
    """
    layout = layout or params.layout(with_c=True)
    if "c" not in layout.labels:
        raise ValueError("three-mode evolution needs a layout with mode c")
    if params.kappa_c < 10 * params.kappa_2ph:
        raise RegimeError("three-mode model requires kappa_c >= 10 kappa_2ph")
    t_end = t_end if t_end is not None else params.t_end()
    gen = three_mode_generator(
        layout.dims, layout.axis("a"), layout.axis("b"), layout.axis("c"), params
    )
    if deterministic:
        dt = lindblad_dt(params, gen, "three_mode")
        return gen.evolve(rho0, t_end, dt, observables=observables, sample_every=sample_every)
    c_dense = ladder_monomial(layout.dims, [(layout.axis("c"), "lower")]).dense()
    return evolve_sme_homodyne(
        rho0,
        [(params.kappa_c, c_dense, params.theta_c, params.eta)],
        t_end=t_end,
        dt=params.dt_sme("three_mode"),
        seed=seed if seed is not None else params.seed,
    )


# --- stochastic master equation ------------------------------------------------


def parity_verdict(x_c: float, cutoff: float) -> str:
    """Classify an integrated current: even lobe positive by convention."""
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    if x_c > cutoff:
        return "even"
    if x_c < -cutoff:
        return "odd"
    return "ambiguous"


def _draw_noise(rng: np.random.Generator, n_steps: int, n_channels: int):
    """Standard normals; scaled by sqrt(step) where consumed."""
    return rng.standard_normal((n_steps, n_channels))


def make_rng(seed) -> np.random.Generator:
    """Deterministic generator from an int or tuple seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def evolve_sme_homodyne(
    rho0: np.ndarray,
    monitored,
    t_end: float,
    dt: float,
    seed,
    h: np.ndarray | None = None,
    checkpoint_times=(),
    record_increments: bool = True,
) -> TrajectoryRecord:
    """Euler-Maruyama integration of the homodyne SME.

    ``monitored`` lists (rate, operator, phase, eta) channels.  Update:
    drho = (-i[H,rho] + sum rate D(L) rho) dt
           + sum sqrt(eta rate) (O rho + rho O^dag - Tr[(O+O^dag) rho] rho) dW
    with O = L e^{-i phase}; the record per channel is
    dJ = sqrt(eta rate) Tr[(O + O^dag) rho] dt + dW.  The state is
    renormalized each step.  Single-channel shift-structured operators
    dispatch to the fused kernel path.
    """
    rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
    rates = []
    spectral = 0.0
    for rate, op, phase, eta in monitored:
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"channel efficiency {eta} outside [0, 1]")
        rates.append(rate)
        opm = op.dense() if isinstance(op, ShiftOp) else linalg.as_cmatrix(op)
        spectral += rate * float(np.linalg.norm(opm, 2) ** 2)
    hscale = float(np.abs(h).max()) if h is not None else 0.0
    spectral += hscale
    _check_dt(dt * SME_DT_DIVISOR, max(rates + [hscale]))
    if spectral > 0 and dt > EM_SPECTRAL_MARGIN / spectral * (1 + 1e-12):
        raise ValueError(
            f"dt={dt:.4g} exceeds the Euler-Maruyama stability cap "
            f"{EM_SPECTRAL_MARGIN / spectral:.4g} (spectral scale {spectral:.4g})"
        )
    steps = _steps_for(t_end, dt)
    rng = make_rng(seed)
    noise = _draw_noise(rng, len(steps), len(monitored))

    shift = None
    if h is None and len(monitored) == 1:
        shift = _as_shift(monitored[0][1])
    record = TrajectoryRecord(seed=seed)
    increments = np.zeros((len(steps), len(monitored)))
    checkpoint_steps = _checkpoint_steps(checkpoint_times, steps)

    if shift is not None:
        rate, _, phase, eta = monitored[0]
        _sme_loop_fast(
            rho, shift, rate, phase, eta, steps, noise[:, 0], increments[:, 0],
            checkpoint_steps, record,
        )
    else:
        _sme_loop_dense(rho, monitored, h, steps, noise, increments, checkpoint_steps, record)

    record.x_c = (
        float(increments.sum(axis=0)[0])
        if len(monitored) == 1
        else increments.sum(axis=0)
    )
    if record_increments:
        record.increments = increments[:, 0] if len(monitored) == 1 else increments
    return record


def _as_shift(op) -> ShiftOp | None:
    if isinstance(op, ShiftOp):
        return op
    op = linalg.as_cmatrix(op)
    if np.abs(op.imag).max() > 0.0:
        return None
    d = op.shape[0]
    w = np.zeros(d)
    src = np.zeros(d, dtype=np.int64)
    for i in range(d):
        nz = np.nonzero(op[i])[0]
        if nz.size > 1:
            return None
        if nz.size == 1:
            w[i] = op[i, nz[0]].real
            src[i] = nz[0]
    return ShiftOp(dims=(d,), w=w, src=src)


def _checkpoint_steps(checkpoint_times, steps) -> dict[int, float]:
    """Map step index (post-step) -> requested time."""
    out = {}
    if not len(steps):
        return out
    acc = np.cumsum(steps)
    for tc in checkpoint_times:
        idx = int(np.argmin(np.abs(acc - tc)))
        if abs(acc[idx] - tc) > steps[0] * 0.51:
            raise ValueError(f"checkpoint time {tc} not on the step grid")
        out[idx] = float(tc)
    return out


def _sme_loop_fast(rho, shift, rate, phase, eta, steps, noise, increments, checkpoints, record):
    d = rho.shape[0]
    w, src = shift.w, shift.src
    kd = shift.norm_diag()
    eiph = complex(math.cos(phase), -math.sin(phase))   # e^{-i phase}
    meas = math.sqrt(eta * rate)
    out = np.empty_like(rho)
    cols = np.arange(d)
    for i, step in enumerate(steps):
        dw = noise[i] * math.sqrt(step)
        expect = complex(np.sum(w * rho[src, cols]))
        sig = 2.0 * (eiph * expect).real
        gamma = meas * dw * eiph
        tr = _kernels.sme_step(
            rho, out, w, src, kd, rate * step, gamma.real, gamma.imag, meas * dw * sig
        )
        if not math.isfinite(tr) or tr <= 0.0 or abs(tr - 1.0) > 0.5:
            raise TrajectoryAbort(f"trace diverged at step {i} (pre-norm trace {tr})")
        rho, out = out, rho
        increments[i] = meas * sig * step + dw
        if i % 64 == 63:
            _kernels.hermitize(rho)
        if i in checkpoints:
            snap = rho.copy()
            _kernels.hermitize(snap)
            record.checkpoints.append((checkpoints[i], snap))
    _kernels.hermitize(rho)
    _final_trajectory_checks(rho)
    record.final_rho = rho


def _sme_loop_dense(rho, monitored, h, steps, noise, increments, checkpoints, record):
    ops = []
    for rate, op, phase, eta in monitored:
        op = linalg.as_cmatrix(op)
        ops.append((rate, op, op.conj().T @ op, complex(np.exp(-1j * phase)), eta))
    for i, step in enumerate(steps):
        drho = np.zeros_like(rho)
        if h is not None:
            drho += -1j * (h @ rho - rho @ h) * step
        for c, (rate, op, k, eiph, eta) in enumerate(ops):
            dw = noise[i, c] * math.sqrt(step)
            lr = op @ rho
            drho += rate * step * (lr @ op.conj().T - 0.5 * (k @ rho + rho @ k))
            o_rho = eiph * lr
            back = o_rho + o_rho.conj().T
            sig = float(np.trace(back).real)
            meas = math.sqrt(eta * rate)
            drho += meas * dw * (back - sig * rho)
            increments[i, c] = meas * sig * step + dw
        rho += drho
        tr = float(np.trace(rho).real)
        if not math.isfinite(tr) or tr <= 0.0 or abs(tr - 1.0) > 0.5:
            raise TrajectoryAbort(f"trace diverged at step {i} (pre-norm trace {tr})")
        rho /= tr
        if i % 64 == 63:
            rho = linalg.hermitianize(rho)
        if i in checkpoints:
            record.checkpoints.append((checkpoints[i], linalg.hermitianize(rho)))
    rho = linalg.hermitianize(rho)
    _final_trajectory_checks(rho)
    record.final_rho = rho


def _final_trajectory_checks(rho: np.ndarray) -> None:
    try:
        check_density_matrix(
            rho, herm_tol=1e-8, trace_tol=1e-6, eig_floor=TRAJECTORY_POSITIVITY_ABORT
        )
    except (ValueError, FloatingPointError) as exc:
        raise TrajectoryAbort(f"final state invalid: {exc}") from exc


# --- protocol-shaped trajectory runners ----------------------------------------


def run_sme_two_photon(
    rho0: np.ndarray,
    layout: SpaceLayout,
    params: ProtocolParams,
    seed,
    t_end: float | None = None,
    checkpoint_times=(),
    record_increments: bool = False,
) -> TrajectoryRecord:
    """Density-matrix SME trajectory for the monitored two-photon channel."""
    ab = ladder_monomial(
        layout.dims, [(layout.axis("a"), "lower"), (layout.axis("b"), "lower")]
    )
    rec = evolve_sme_homodyne(
        rho0,
        [(params.kappa_2ph, ab, params.theta_c, params.eta)],
        t_end=t_end if t_end is not None else params.t_end(),
        dt=sme_dt(params, params.kappa_2ph * float(ab.norm_diag().max())),
        seed=seed,
        checkpoint_times=checkpoint_times,
        record_increments=record_increments,
    )
    return rec


def run_sse_pure_two_photon(
    psi0: np.ndarray,
    layout: SpaceLayout,
    params: ProtocolParams,
    seed,
    t_end: float | None = None,
    checkpoint_times=(),
    record_increments: bool = False,
) -> TrajectoryRecord:
    """Pure-state trajectory of the perfectly monitored two-photon channel.

    Valid only at eta = 1, where the homodyne conditional state of a pure
    initial state stays pure; evolves the normalized linear filter
    d|u> = (-kappa/2 L^dag L dt + sqrt(kappa) e^{-i theta} L dJ)|u>
    which is an equally weak-order discretization of the SME and is
    orders of magnitude cheaper than the density-matrix path.
    """
    if params.eta != 1.0:
        raise ValueError("pure-state trajectory path requires eta = 1")
    kappa = params.kappa_2ph
    theta = params.theta_c
    t_end = t_end if t_end is not None else params.t_end()
    ax_a, ax_b = layout.axis("a"), layout.axis("b")
    if (ax_a, ax_b) != (len(layout.dims) - 2, len(layout.dims) - 1):
        raise ValueError("pure path expects modes a, b as the trailing factors")
    n_a, n_b = layout.dim_of("a"), layout.dim_of("b")
    m = n_a * n_b
    q = layout.dim // m
    u = np.ascontiguousarray(psi0, dtype=np.complex128).reshape(q, m).copy()

    mono = ladder_monomial((n_a, n_b), [(0, "lower"), (1, "lower")])
    w, src = mono.w, mono.src
    kd = mono.norm_diag()
    dt = sme_dt(params, kappa * float(kd.max()))
    eiph = complex(math.cos(theta), -math.sin(theta))
    sqk = math.sqrt(kappa)

    steps = _steps_for(t_end, dt)
    rng = make_rng(seed)
    noise = _draw_noise(rng, len(steps), 1)[:, 0]
    increments = np.zeros(len(steps))
    checkpoint_steps = _checkpoint_steps(checkpoint_times, steps)
    record = TrajectoryRecord(seed=seed)

    for i, step in enumerate(steps):
        dw = noise[i] * math.sqrt(step)
        lu = w * u[:, src]
        expect = complex(np.sum(u.conj() * lu))
        sig = 2.0 * (eiph * expect).real
        dj = sqk * sig * step + dw
        u = u - (0.5 * kappa * step) * (kd * u) + (sqk * eiph * dj) * lu
        norm = np.linalg.norm(u)
        if not math.isfinite(norm) or norm <= 0.0:
            raise TrajectoryAbort(f"pure-state norm diverged at step {i}")
        u /= norm
        increments[i] = dj
        if i in checkpoint_steps:
            record.checkpoints.append((checkpoint_steps[i], u.reshape(-1).copy()))
    record.final_state = u.reshape(-1)
    record.x_c = float(increments.sum())
    if record_increments:
        record.increments = increments
    return record
