"""Quadrature projections on modes a and b, ideal and with finite efficiency.

Outcomes live on the continuous (xi_a, xi_b) plane; quadrature
eigenvectors are delta-normalized, so every reported probability is a
density.  Finite efficiency is modeled as a beam-splitter loss channel
of transmissivity eta on each mode followed by ideal projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import linalg
from .hilbert import SpaceLayout, hermite_functions
from .shiftops import factor_shift

DEFAULT_WINDOW = 6.0
GRID_STEP = 0.1
SAMPLING_STEP = 0.01
DENSITY_FLOOR = 1e-300

_THETA = {"X": 0.0, "Y": math.pi / 2}


@dataclass(frozen=True)
class QuadratureOutcome:
    """One homodyne outcome pair with its probability density."""

    xi_a: float
    xi_b: float
    quadrature: str
    density: float


def quadrature_axis(window: float = DEFAULT_WINDOW, step: float = GRID_STEP) -> np.ndarray:
    n = int(round(2 * window / step)) + 1
    return np.linspace(-window, window, n)


def wavefunction_matrix(xi, levels: int, quadrature: str) -> np.ndarray:
    """Rows <n|xi>_theta = e^{i n theta} psi_n(xi) over an axis of outcomes."""
    theta = _THETA[quadrature]
    psi = hermite_functions(np.atleast_1d(xi), levels)
    phases = np.exp(1j * theta * np.arange(levels))
    return psi.astype(np.complex128) * phases[None, :]


def _mode_eigvec(xi: float, levels: int, quadrature: str) -> np.ndarray:
    return wavefunction_matrix(np.array([xi]), levels, quadrature)[0]


def project_quadratures(
    rho: np.ndarray, layout: SpaceLayout, quadrature: str, xi_a: float, xi_b: float
) -> tuple[np.ndarray, float]:
    """Project both modes onto quadrature eigenvectors |xi_a, xi_b>.

    Returns the normalized post-measurement state over qubits x modes
    (modes collapsed onto the measured eigenvector) and the joint
    outcome density P(xi_a, xi_b) = Tr[M rho M^dag] for delta-normalized
    M = |xi_a, xi_b><xi_a, xi_b|.
    """
    window = max(abs(xi_a), abs(xi_b))
    m = layout.dim_of("a") * layout.dim_of("b")
    q = layout.dim // m
    rho4 = rho.reshape(q, m, q, m)
    ea = _mode_eigvec(xi_a, layout.dim_of("a"), quadrature)
    eb = _mode_eigvec(xi_b, layout.dim_of("b"), quadrature)
    e = np.kron(ea, eb)
    rho_q = np.einsum("m,imjn,n->ij", e.conj(), rho4, e)
    density = float(np.trace(rho_q).real)
    if density < DENSITY_FLOOR:
        raise ZeroDensityError(
            f"outcome ({xi_a}, {xi_b}) has zero probability density"
        )
    mode_proj = np.outer(e, e.conj())
    mode_proj /= np.vdot(e, e).real
    rho_post = np.kron(rho_q / density, mode_proj)
    return rho_post, density


class ZeroDensityError(ValueError):
    """Outcome density underflowed to numerically zero."""


def post_measurement_qubit_state(rho_post: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """Two-qubit state after tracing out the measured modes."""
    keep = (layout.axis("qA"), layout.axis("qB"))
    rho_q = linalg.partial_trace(rho_post, layout.dims, keep)
    return linalg.hermitianize(rho_q)


# --- finite-efficiency detection --------------------------------------------


def loss_kraus_weights(levels: int, eta: float) -> list[np.ndarray]:
    """Weights of the k-photon-loss Kraus operators K_k = sum_n w[n] |n><n+k|.

    w[n] = sqrt(C(n+k, k) eta^n (1-eta)^k); the set is exactly
    trace-preserving on the truncated space.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"transmissivity must lie in (0, 1], got {eta}")
    ns = np.arange(levels, dtype=np.float64)
    out = []
    for k in range(levels):
        if eta == 1.0 and k > 0:
            break
        logc = gammaln(ns + k + 1) - gammaln(ns + 1) - gammaln(k + 1)
        w = np.exp(0.5 * (logc + ns * math.log(eta) + (k * math.log(1 - eta) if k else 0.0)))
        out.append(w)
    return out


def apply_loss(
    rho: np.ndarray, layout: SpaceLayout, eta: float, labels=("a", "b")
) -> np.ndarray:
    """Beam-splitter loss of transmissivity eta on each listed mode."""
    if eta == 1.0:
        return rho
    out = np.ascontiguousarray(rho, dtype=np.complex128)
    for label in labels:
        ax = layout.axis(label)
        levels = layout.dim_of(label)
        acc = np.zeros_like(out)
        for k, w in enumerate(loss_kraus_weights(levels, eta)):
            op = factor_shift(layout.dims, ax, k, w)
            acc += op.sandwich(out)
        out = acc
    return out


def lossy_homodyne(
    rho: np.ndarray,
    layout: SpaceLayout,
    quadrature: str,
    xi_a: float,
    xi_b: float,
    eta: float,
) -> tuple[np.ndarray, float]:
    """Loss channel of transmissivity eta on each mode, then ideal projection."""
    return project_quadratures(apply_loss(rho, layout, eta), layout, quadrature, xi_a, xi_b)


# --- grids and sampling -------------------------------------------------------


def qubit_state_grid(
    rho: np.ndarray, layout: SpaceLayout, quadrature: str, axis: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized conditional qubit states over an outcome grid.

    Returns (density, rho_q) with density of shape (len(axis), len(axis))
    and rho_q of shape (len(axis), len(axis), Q, Q); dividing each cell's
    rho_q by its density gives the normalized post-measurement qubit
    state at that outcome.
    """
    n_a, n_b = layout.dim_of("a"), layout.dim_of("b")
    q = layout.dim // (n_a * n_b)
    rho6 = rho.reshape(q, n_a, n_b, q, n_a, n_b)
    phi_a = wavefunction_matrix(axis, n_a, quadrature)
    phi_b = wavefunction_matrix(axis, n_b, quadrature)
    # contract mode-a bra/ket, then mode-b bra/ket
    t1 = np.einsum("gn,inmjpq->igmjpq", phi_a.conj(), rho6, optimize=True)
    t2 = np.einsum("gp,igmjpq->igmjq", phi_a, t1, optimize=True)
    t3 = np.einsum("hm,igmjq->ighjq", phi_b.conj(), t2, optimize=True)
    t4 = np.einsum("hq,ighjq->ighj", phi_b, t3, optimize=True)
    rho_q = np.moveaxis(t4, (1, 2), (0, 1))  # (G, G, Q, Q)
    density = np.real(np.trace(rho_q, axis1=2, axis2=3))
    return density, rho_q


def _cdf_sample(axis: np.ndarray, density: np.ndarray, u: float) -> float:
    """Inverse-CDF draw with linear interpolation inside grid cells."""
    d = np.clip(density, 0.0, None)
    cdf = np.concatenate(([0.0], np.cumsum((d[1:] + d[:-1]) / 2 * np.diff(axis))))
    total = cdf[-1]
    if total <= 0.0:
        raise ZeroDensityError("sampling density vanished on the grid")
    target = u * total
    idx = int(np.searchsorted(cdf, target, side="right") - 1)
    idx = min(max(idx, 0), len(axis) - 2)
    span = cdf[idx + 1] - cdf[idx]
    frac = 0.0 if span <= 0 else (target - cdf[idx]) / span
    return float(axis[idx] + frac * (axis[idx + 1] - axis[idx]))


def sample_quadrature_pair(
    rho: np.ndarray,
    layout: SpaceLayout,
    quadrature: str,
    rng: np.random.Generator,
    window: float = DEFAULT_WINDOW,
    step: float = SAMPLING_STEP,
) -> tuple[QuadratureOutcome, np.ndarray]:
    """Draw (xi_a, xi_b) from the exact outcome density of ``rho``.

    Inverse-CDF on a fine grid: first the xi_a marginal (mode b traced
    out), then the conditional xi_b density at the sampled xi_a.
    Returns the outcome and the normalized conditional qubit state.
    """
    n_a, n_b = layout.dim_of("a"), layout.dim_of("b")
    q = layout.dim // (n_a * n_b)
    rho6 = rho.reshape(q, n_a, n_b, q, n_a, n_b)
    axis = quadrature_axis(window, step)
    phi_a = wavefunction_matrix(axis, n_a, quadrature)
    phi_b = wavefunction_matrix(axis, n_b, quadrature)

    # marginal over xi_a: qubits and mode b traced out
    red_a = np.einsum("inmipm->np", rho6, optimize=True)
    pa = np.einsum("gn,np,gp->g", phi_a.conj(), red_a, phi_a, optimize=True).real
    xi_a = _cdf_sample(axis, pa, float(rng.random()))

    ea = _mode_eigvec(xi_a, n_a, quadrature)
    tau_b = np.einsum("n,inmipq,p->mq", ea.conj(), rho6, ea, optimize=True)
    pb = np.einsum("gm,mq,gq->g", phi_b.conj(), tau_b, phi_b, optimize=True).real
    xi_b = _cdf_sample(axis, pb, float(rng.random()))

    eb = _mode_eigvec(xi_b, n_b, quadrature)
    e = np.kron(ea, eb)
    rho4 = rho6.reshape(q, n_a * n_b, q, n_a * n_b)
    rho_q = np.einsum("m,imjn,n->ij", e.conj(), rho4, e)
    density = float(np.trace(rho_q).real)
    if density < DENSITY_FLOOR:
        raise ZeroDensityError("sampled outcome has vanishing density")
    rho_q = linalg.hermitianize(rho_q / density)
    return QuadratureOutcome(xi_a, xi_b, quadrature, density), rho_q


def sample_quadrature_pair_pure(
    psi: np.ndarray,
    layout: SpaceLayout,
    quadrature: str,
    rng: np.random.Generator,
    window: float = DEFAULT_WINDOW,
    step: float = SAMPLING_STEP,
) -> tuple[QuadratureOutcome, np.ndarray]:
    """Pure-state fast path of :func:`sample_quadrature_pair`."""
    n_a, n_b = layout.dim_of("a"), layout.dim_of("b")
    q = layout.dim // (n_a * n_b)
    u = psi.reshape(q, n_a, n_b)
    axis = quadrature_axis(window, step)
    phi_a = wavefunction_matrix(axis, n_a, quadrature)
    phi_b = wavefunction_matrix(axis, n_b, quadrature)

    va = np.einsum("gn,inm->igm", phi_a.conj(), u, optimize=True)
    pa = np.einsum("igm,igm->g", va.conj(), va, optimize=True).real
    xi_a = _cdf_sample(axis, pa, float(rng.random()))

    ea = _mode_eigvec(xi_a, n_a, quadrature)
    rows = np.einsum("n,inm->im", ea.conj(), u)
    vb = rows @ phi_b.conj().T          # (Q, G) amplitudes over xi_b
    pb = np.einsum("ig,ig->g", vb.conj(), vb).real
    xi_b = _cdf_sample(axis, pb, float(rng.random()))

    eb = _mode_eigvec(xi_b, n_b, quadrature)
    amps = rows @ eb.conj()
    density = float(np.vdot(amps, amps).real)
    if density < DENSITY_FLOOR:
        raise ZeroDensityError("sampled outcome has vanishing density")
    rho_q = np.outer(amps, amps.conj()) / density
    return QuadratureOutcome(xi_a, xi_b, quadrature, density), rho_q
