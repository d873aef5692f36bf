"""States and operators of the protocol's composite Hilbert space.

Conventions (fixed globally):

* qubit basis |g> = index 0, |e> = index 1;
* factor order (qubit_A, qubit_B, mode_a, mode_b[, mode_c]);
* quadratures X = (a + a^dag)/sqrt(2), Y = (a - a^dag)/(i sqrt(2)),
  so a coherent state of real amplitude alpha has <X> = sqrt(2) alpha
  and vacuum variance 1/2;
* quadrature eigenvectors are delta-normalized (kept unnormalized in the
  truncated basis); every probability over outcomes is a density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg

GROUND = 0
EXCITED = 1

# guards for the Hermite-function recursion
MAX_QUADRATURE_ABS = 40.0
MAX_HERMITE_LEVELS = 4096


class TruncationError(ValueError):
    """Fock truncation too small for the requested amplitude."""


class ZeroProbabilityError(ValueError):
    """Projection onto a sector that carries no weight."""


@dataclass(frozen=True)
class ModeSpec:
    """Numerical basis size for one bosonic mode."""

    label: str
    levels: int

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"mode {self.label!r} needs at least 2 Fock levels")


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered tensor factors of the composite space."""

    labels: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.dims) or len(set(self.labels)) != len(self.labels):
            raise ValueError("labels/dims mismatch")

    @classmethod
    def protocol(cls, n_a: int, n_b: int, n_c: int | None = None) -> "SpaceLayout":
        """Standard layout (qubit_A, qubit_B, mode_a, mode_b[, mode_c])."""
        labels = ["qA", "qB", "a", "b"]
        dims = [2, 2, int(n_a), int(n_b)]
        if n_c is not None:
            labels.append("c")
            dims.append(int(n_c))
        return cls(labels=tuple(labels), dims=tuple(dims))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def axis(self, label: str) -> int:
        return self.labels.index(label)

    def dim_of(self, label: str) -> int:
        return self.dims[self.axis(label)]

    @property
    def mode_labels(self) -> tuple[str, ...]:
        return tuple(l for l in self.labels if not l.startswith("q"))

    def embed(self, op: np.ndarray, label: str) -> np.ndarray:
        """Lift a single-factor operator to the full space (dense)."""
        mats = []
        for l, d in zip(self.labels, self.dims):
            mats.append(op if l == label else np.eye(d, dtype=np.complex128))
        return linalg.kron_all(*mats)


# --- single-mode constructions ---------------------------------------------


def fock(levels: int, n: int) -> np.ndarray:
    v = np.zeros(levels, dtype=np.complex128)
    v[n] = 1.0
    return v


def coherent_tail(alpha: complex, levels: int) -> float:
    """Probability mass of |alpha> above the truncation (Poisson tail)."""
    nbar = abs(alpha) ** 2
    if nbar == 0.0:
        return 0.0
    terms = np.empty(levels)
    terms[0] = math.exp(-nbar)
    for k in range(1, levels):
        terms[k] = terms[k - 1] * nbar / k
    return max(0.0, 1.0 - float(terms.sum()))


def coherent_state(alpha: complex, levels: int, tail_tol: float = 1e-10) -> np.ndarray:
    """Truncated coherent state, renormalized after truncation.

    Raises TruncationError when the discarded Poisson tail exceeds
    ``tail_tol``.
    """
    tail = coherent_tail(alpha, levels)
    if tail > tail_tol:
        raise TruncationError(
            f"coherent amplitude {alpha} needs more than {levels} levels "
            f"(tail {tail:.2e} > {tail_tol:.0e})"
        )
    n = np.arange(levels)
    # amplitudes alpha^n / sqrt(n!) assembled in log space for stability
    logfact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, levels)))))
    if alpha == 0:
        return fock(levels, 0)
    mag = np.exp(n * math.log(abs(alpha)) - logfact / 2)
    phase = np.exp(1j * n * np.angle(alpha))
    v = mag * phase
    return v / np.linalg.norm(v)


def annihilation_op(levels: int) -> np.ndarray:
    """a|n> = sqrt(n)|n-1> on the truncated space."""
    a = np.zeros((levels, levels), dtype=np.complex128)
    ns = np.arange(1, levels)
    a[ns - 1, ns] = np.sqrt(ns)
    return a


def number_op(levels: int) -> np.ndarray:
    return np.diag(np.arange(levels, dtype=np.complex128))


def quadrature_ops(levels: int) -> tuple[np.ndarray, np.ndarray]:
    """(X, Y) with X = (a + a^dag)/sqrt(2), Y = (a - a^dag)/(i sqrt(2))."""
    a = annihilation_op(levels)
    ad = a.conj().T
    x = (a + ad) / math.sqrt(2)
    y = (a - ad) / (1j * math.sqrt(2))
    return x, y


def hermite_functions(xi, levels: int) -> np.ndarray:
    """Orthonormal Hermite functions psi_n(xi), n < levels.

    Stable two-term recursion on the normalized functions; returns an
    array of shape (len(xi), levels) (or (levels,) for scalar xi).
    """
    scalar = np.isscalar(xi)
    x = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    if np.any(np.abs(x) > MAX_QUADRATURE_ABS) or levels > MAX_HERMITE_LEVELS:
        raise ValueError(
            f"quadrature recursion guard: |xi| <= {MAX_QUADRATURE_ABS}, "
            f"levels <= {MAX_HERMITE_LEVELS}"
        )
    out = np.empty((x.size, levels))
    out[:, 0] = np.pi ** (-0.25) * np.exp(-x * x / 2)
    if levels > 1:
        out[:, 1] = math.sqrt(2.0) * x * out[:, 0]
    for n in range(2, levels):
        out[:, n] = (
            math.sqrt(2.0 / n) * x * out[:, n - 1]
            - math.sqrt((n - 1.0) / n) * out[:, n - 2]
        )
    return out[0] if scalar else out


def quadrature_eigenvector(xi: float, theta: float, levels: int) -> np.ndarray:
    """Delta-normalized quadrature eigenvector <n|xi>_theta = e^{i n theta} psi_n(xi).

    theta = 0 gives X eigenvectors, theta = pi/2 gives Y.
    """
    psi = hermite_functions(float(xi), levels)
    phases = np.exp(1j * theta * np.arange(levels))
    return (psi * phases).astype(np.complex128)


# --- composite states -------------------------------------------------------


def qubit_state(which: str) -> np.ndarray:
    v = np.zeros(2, dtype=np.complex128)
    v[EXCITED if which == "e" else GROUND] = 1.0
    return v


def kron_vectors(*vs: np.ndarray) -> np.ndarray:
    out = np.asarray(vs[0], dtype=np.complex128)
    for v in vs[1:]:
        out = np.kron(out, np.asarray(v, dtype=np.complex128))
    return out


def step1_joint_state(
    alpha: float, beta: float, layout: SpaceLayout, tail_tol: float = 1e-10
) -> np.ndarray:
    """Joint qubit-photon state after the conditional-displacement step.

    Equal-weight superposition of the four sign branches
    (|ee,+a,+b> + |gg,-a,-b> + |eg,+a,-b> + |ge,-a,+b>)/2, i.e. the
    product of two local qubit/mode entangled pairs reordered to the
    global factor order.  Modes beyond a and b (if present) start in
    vacuum.
    """
    for lbl in ("qA", "qB", "a", "b"):
        if lbl not in layout.labels:
            raise ValueError("layout must contain both qubits and modes a, b")
    n_a, n_b = layout.dim_of("a"), layout.dim_of("b")
    coh_a = {s: coherent_state(s * alpha, n_a, tail_tol) for s in (+1, -1)}
    coh_b = {s: coherent_state(s * beta, n_b, tail_tol) for s in (+1, -1)}
    extra = [fock(layout.dim_of(l), 0) for l in layout.labels[4:]]
    psi = np.zeros(layout.dim, dtype=np.complex128)
    for sa, qa in ((+1, "e"), (-1, "g")):
        for sb, qb in ((+1, "e"), (-1, "g")):
            psi += 0.5 * kron_vectors(
                qubit_state(qa), qubit_state(qb), coh_a[sa], coh_b[sb], *extra
            )
    return psi


def qubit_parity_mask(layout: SpaceLayout, sector: str) -> np.ndarray:
    """Boolean mask over the full basis selecting one joint-parity sector."""
    if sector not in ("even", "odd"):
        raise ValueError(f"sector must be 'even' or 'odd', got {sector!r}")
    shape = layout.dims
    ia = np.arange(layout.dim) // int(np.prod(shape[1:]))
    rest = np.arange(layout.dim) % int(np.prod(shape[1:]))
    ib = rest // int(np.prod(shape[2:]))
    same = ia == ib
    return same if sector == "even" else ~same


def parity_project(psi: np.ndarray, layout: SpaceLayout, sector: str) -> tuple[np.ndarray, float]:
    """Project onto one joint qubit-parity sector; returns (state, probability)."""
    mask = qubit_parity_mask(layout, sector)
    proj = np.where(mask, psi, 0.0)
    prob = float(np.vdot(proj, proj).real)
    if prob < 1e-14:
        raise ZeroProbabilityError(f"{sector} parity sector has zero probability")
    return proj / math.sqrt(prob), prob


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    return np.outer(psi, psi.conj())


# --- validation --------------------------------------------------------------


def check_state_vector(v: np.ndarray, tol: float = 1e-10) -> None:
    n = np.linalg.norm(v)
    if abs(n - 1.0) > tol:
        raise ValueError(f"state vector norm {n} deviates from 1 beyond {tol}")


def check_density_matrix(
    rho: np.ndarray,
    herm_tol: float = 1e-10,
    trace_tol: float = 1e-9,
    eig_floor: float = -1e-8,
    normalized: bool = True,
) -> None:
    """Validate Hermiticity, trace and positivity of a density matrix."""
    rho = linalg.as_cmatrix(rho)
    linalg.check_finite(rho, "density matrix")
    defect = linalg.hermiticity_defect(rho)
    if defect > herm_tol:
        raise ValueError(f"density matrix Hermiticity defect {defect:.2e} > {herm_tol}")
    if normalized:
        tr = np.trace(rho).real
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {tr} deviates from 1 beyond {trace_tol}")
    wmin = float(np.linalg.eigvalsh(linalg.hermitianize(rho)).min())
    if wmin < eig_floor:
        raise ValueError(f"density matrix min eigenvalue {wmin:.2e} < {eig_floor}")
