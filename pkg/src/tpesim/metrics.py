"""Entanglement and fidelity diagnostics for two-qubit states and outcome grids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg

# two-qubit basis order (qA, qB): |gg>, |ge>, |eg>, |ee>
GG, GE, EG, EE = 0, 1, 2, 3

_SY2 = np.array(
    [
        [0, 0, 0, -1],
        [0, 0, 1, 0],
        [0, 1, 0, 0],
        [-1, 0, 0, 0],
    ],
    dtype=np.complex128,
)  # sigma_y (x) sigma_y


def bell_state(name: str) -> np.ndarray:
    """Named Bell states: phi+/- = (|ee> +/- |gg>)/sqrt2, psi+/- on |eg>,|ge>."""
    v = np.zeros(4, dtype=np.complex128)
    s = 1.0 / math.sqrt(2)
    if name in ("phi+", "phi-"):
        v[EE] = s
        v[GG] = s if name == "phi+" else -s
    elif name in ("psi+", "psi-"):
        v[EG] = s
        v[GE] = s if name == "psi+" else -s
    else:
        raise ValueError(f"unknown Bell state {name!r}")
    return v


def bell_state_phase(phi: float, sector: str = "even") -> np.ndarray:
    """(|ee> + e^{i phi}|gg>)/sqrt2, or the |eg>,|ge> analogue for the odd sector."""
    v = np.zeros(4, dtype=np.complex128)
    s = 1.0 / math.sqrt(2)
    if sector == "even":
        v[EE] = s
        v[GG] = s * np.exp(1j * phi)
    elif sector == "odd":
        v[EG] = s
        v[GE] = s * np.exp(1j * phi)
    else:
        raise ValueError(f"sector must be 'even' or 'odd', got {sector!r}")
    return v


def bell_overlap(rho_q: np.ndarray, target) -> float:
    """<target|rho_q|target> for a named Bell state or an explicit 4-vector."""
    t = bell_state(target) if isinstance(target, str) else np.asarray(target, dtype=np.complex128)
    rho_q = linalg.as_cmatrix(rho_q)
    val = float(np.real(np.vdot(t, rho_q @ t)))
    return val


def sector_weights(rho_q: np.ndarray) -> tuple[float, float]:
    """(even, odd) joint-parity populations of a two-qubit state."""
    d = np.real(np.diagonal(rho_q))
    return float(d[GG] + d[EE]), float(d[GE] + d[EG])


def extract_bell_phase(rho_q: np.ndarray, min_coherence: float = 1e-6) -> float:
    """Relative phase phi of the Bell state best matching rho_q.

    The state must sit predominantly (weight > 0.9) in one parity
    sector; phi is the phase maximizing <Phi^phi|rho|Phi^phi> (even
    sector; the |eg>,|ge> analogue for odd).
    """
    even_w, odd_w = sector_weights(rho_q)
    if max(even_w, odd_w) <= 0.9:
        raise ValueError(
            f"state is not supported on one parity manifold "
            f"(even {even_w:.3f}, odd {odd_w:.3f})"
        )
    coh = rho_q[GG, EE] if even_w >= odd_w else rho_q[GE, EG]
    if abs(coh) < min_coherence:
        raise ValueError(f"coherence magnitude {abs(coh):.2e} too small to define a phase")
    return float(np.angle(coh))


def max_bell_overlap(rho_q: np.ndarray, sector: str) -> tuple[float, float]:
    """(max_phi <Phi^phi|rho|Phi^phi>, maximizing phi) for one sector.

    Equals (rho_ee,ee + rho_gg,gg)/2 + |rho_gg,ee| in the even sector.
    """
    if sector == "even":
        pops = rho_q[EE, EE].real + rho_q[GG, GG].real
        coh = rho_q[GG, EE]
    elif sector == "odd":
        pops = rho_q[EG, EG].real + rho_q[GE, GE].real
        coh = rho_q[GE, EG]
    else:
        raise ValueError(f"sector must be 'even' or 'odd', got {sector!r}")
    return float(pops / 2 + abs(coh)), float(np.angle(coh))


def concurrence(rho_q: np.ndarray) -> float:
    """Two-qubit concurrence (eigenvalue form of the spin-flipped product)."""
    return float(concurrence_batch(np.asarray(rho_q, dtype=np.complex128)[None, ...])[0])


def concurrence_batch(rhos: np.ndarray) -> np.ndarray:
    """Concurrence over a (..., 4, 4) stack of two-qubit states."""
    r = rhos @ _SY2 @ rhos.conj() @ _SY2
    ev = np.linalg.eigvals(r)
    ev = np.clip(ev.real, 0.0, None)  # tiny negatives from rounding
    lam = np.sqrt(np.sort(ev, axis=-1)[..., ::-1])
    c = lam[..., 0] - lam[..., 1] - lam[..., 2] - lam[..., 3]
    return np.maximum(c, 0.0)


def purity(rho_q: np.ndarray) -> float:
    return float(np.real(np.trace(rho_q @ rho_q)))


def overlap_gradient(values: np.ndarray, step: float) -> np.ndarray:
    """|grad F| on a uniform grid: central differences inside, one-sided edges."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or min(v.shape) < 3:
        raise ValueError("gradient needs a 2-d grid with at least 3 points per axis")
    ga, gb = np.gradient(v, step, edge_order=2)
    return np.sqrt(ga * ga + gb * gb)


@dataclass
class OutcomeGrid:
    """Per-cell diagnostics over the (xi_a, xi_b) outcome plane."""

    quadrature: str
    sector: str
    xi_a: np.ndarray
    xi_b: np.ndarray
    density: np.ndarray
    overlap: np.ndarray
    concurrence: np.ndarray
    grad_overlap: np.ndarray
    purity: np.ndarray | None = None
    bell_phase: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("xi_a", "xi_b"):
            ax = getattr(self, name)
            d = np.diff(ax)
            if not (np.all(d > 0) and np.allclose(d, d[0], rtol=1e-9)):
                raise ValueError(f"{name} axis must be strictly increasing and uniform")
        if np.any(self.density < 0):
            raise ValueError("negative outcome density")
        for name, arr in (("overlap", self.overlap), ("concurrence", self.concurrence)):
            if np.any(arr < -1e-8) or np.any(arr > 1 + 1e-8):
                raise ValueError(f"{name} outside [0, 1]")

    @property
    def step(self) -> float:
        return float(self.xi_a[1] - self.xi_a[0])

    def cell_weights(self) -> np.ndarray:
        """Probability mass per cell (density x cell area, normalized)."""
        w = self.density * self.step**2
        return w / w.sum()


def diagonal_profile(grid: OutcomeGrid, anti: bool = False):
    """Values along xi_b = xi_a (or xi_b = -xi_a): (s, density, F, phase)."""
    n = len(grid.xi_a)
    idx = np.arange(n)
    jdx = idx[::-1] if anti else idx
    phase = grid.bell_phase[idx, jdx] if grid.bell_phase is not None else None
    return (
        grid.xi_a,
        grid.density[idx, jdx],
        grid.overlap[idx, jdx],
        phase,
    )


def quadrant_stats(grid: OutcomeGrid) -> dict:
    """Probability masses and weighted centers of the two main quadrants.

    Quadrant (+,+) collects cells with xi_a > 0 and xi_b > 0; (-,-) the
    mirror.  Returns masses (fractions of total grid mass), the
    probability-weighted centroid of each, and the concurrence at the
    grid cell nearest each centroid.
    """
    w = grid.cell_weights()
    xa = grid.xi_a[:, None]
    xb = grid.xi_b[None, :]
    out = {}
    for name, mask in (("pp", (xa > 0) & (xb > 0)), ("mm", (xa < 0) & (xb < 0))):
        mass = float(w[mask].sum())
        if mass > 0:
            ca = float((w * xa)[mask].sum() / mass)
            cb = float((w * xb)[mask].sum() / mass)
            ia = int(np.argmin(np.abs(grid.xi_a - ca)))
            ib = int(np.argmin(np.abs(grid.xi_b - cb)))
            conc = float(grid.concurrence[ia, ib])
        else:
            ca = cb = conc = math.nan
        out[name] = {"mass": mass, "centroid": (ca, cb), "concurrence": conc}
    out["quadrant_mass"] = out["pp"]["mass"] + out["mm"]["mass"]
    return out


def count_fringes(values: np.ndarray, mask: np.ndarray) -> int:
    """Full oscillation periods of a 1-d profile inside a mask.

    Counted as min(#maxima, #minima) of the masked profile, using strict
    local extrema.
    """
    v = values[mask]
    if v.size < 5:
        return 0
    interior = v[1:-1]
    n_max = int(np.sum((interior > v[:-2]) & (interior > v[2:])))
    n_min = int(np.sum((interior < v[:-2]) & (interior < v[2:])))
    return min(n_max, n_min)
