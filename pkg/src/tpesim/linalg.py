"""Dense complex linear algebra shared by every other module.

All operators and states are plain ``numpy.ndarray`` of dtype complex128.
Eigendecomposition and the matrix exponential are delegated to
numpy/scipy; this module adds the validation, size capping and
vectorization helpers the rest of the simulator relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections.abc import Sequence

import numpy as np
import scipy.linalg

# Hard cap on entries per dense matrix.  Protects composite-space
# products (kron chains, superoperators) from accidental blowup.
MAX_MATRIX_ENTRIES = 2**22


class MatrixSizeError(ValueError):
    """A requested dense matrix would exceed ``MAX_MATRIX_ENTRIES``."""


def require_matrix_size(rows: int, cols: int) -> None:
    if rows * cols > MAX_MATRIX_ENTRIES:
        raise MatrixSizeError(
            f"dense {rows}x{cols} matrix has {rows * cols} entries "
            f"(cap {MAX_MATRIX_ENTRIES})"
        )


def as_cmatrix(a) -> np.ndarray:
    """Coerce to a 2-d complex128 array (no copy when already one)."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got array of shape {m.shape}")
    return m


def check_finite(m: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
        raise FloatingPointError(f"{name} contains non-finite entries")


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def hermitianize(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^dag)/2."""
    return (a + a.conj().T) / 2


def hermiticity_defect(a: np.ndarray) -> float:
    """Relative Frobenius distance from A to its Hermitian part."""
    n = frobenius(a)
    if n == 0.0:
        return 0.0
    return frobenius(a - a.conj().T) / n


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the composite-size cap enforced."""
    a = as_cmatrix(a)
    b = as_cmatrix(b)
    require_matrix_size(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])
    out = np.kron(a, b)
    check_finite(out, "kron result")
    return out


def kron_all(*mats: np.ndarray) -> np.ndarray:
    out = as_cmatrix(mats[0])
    for m in mats[1:]:
        out = kron(out, m)
    return out


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out all tensor factors except those in ``keep``.

    ``dims`` lists the factor dimensions in order; ``rho`` must be square
    with dimension prod(dims).  The trace is preserved:
    Tr[result] = Tr[rho].
    """
    rho = as_cmatrix(rho)
    dims = tuple(int(d) for d in dims)
    nfac = len(dims)
    keep = tuple(sorted(set(int(k) for k in keep)))
    if any(k < 0 or k >= nfac for k in keep):
        raise IndexError(f"keep indices {keep} out of range for {nfac} factors")
    d = int(np.prod(dims))
    if rho.shape != (d, d):
        raise ValueError(f"rho shape {rho.shape} inconsistent with dims {dims}")
    if 2 * nfac > len(_LETTERS):
        raise ValueError("too many tensor factors")

    t = rho.reshape(dims + dims)
    row = [_LETTERS[i] for i in range(nfac)]
    col = [row[i] if i not in keep else _LETTERS[nfac + i] for i in range(nfac)]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    reduced = np.einsum(f"{''.join(row)}{''.join(col)}->{''.join(out)}", t)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return np.ascontiguousarray(reduced.reshape(dk, dk))


@dataclass(frozen=True)
class HermitianEigenDecomposition:
    """Ascending eigenvalues and the unitary of eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def eig_hermitian(a: np.ndarray, herm_tol: float = 1e-10) -> HermitianEigenDecomposition:
    """Eigendecomposition of a Hermitian matrix (rejects non-Hermitian input)."""
    a = as_cmatrix(a)
    check_finite(a, "eig_hermitian input")
    if hermiticity_defect(a) > herm_tol:
        raise ValueError(
            f"matrix is not Hermitian (relative defect {hermiticity_defect(a):.2e})"
        )
    w, v = np.linalg.eigh(a)
    return HermitianEigenDecomposition(eigenvalues=w, eigenvectors=v)


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential (scipy scaling-and-squaring)."""
    a = as_cmatrix(a)
    check_finite(a, "expm input")
    require_matrix_size(*a.shape)
    out = scipy.linalg.expm(a)
    check_finite(out, "expm result")
    return np.ascontiguousarray(out, dtype=np.complex128)


# --- vectorization (row-major: vec(A X B) = (A kron B^T) vec(X)) ----------


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.complex128).reshape(-1)


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of length {v.size} is not a square matrix")
    return np.asarray(v, dtype=np.complex128).reshape(d, d)


def left_superop(a: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X."""
    a = as_cmatrix(a)
    d = a.shape[0]
    return kron(a, np.eye(d))


def right_superop(b: np.ndarray) -> np.ndarray:
    """Superoperator of X -> X B."""
    b = as_cmatrix(b)
    d = b.shape[0]
    return kron(np.eye(d), b.T)


def lindblad_superoperator(jumps, h: np.ndarray | None = None) -> np.ndarray:
    """Dense superoperator of rho -> -i[H,rho] + sum_k rate_k D(L_k)rho.

    Only usable at small dimension (d^2 x d^2 entries); serves as the
    brute-force propagation oracle for the time-stepping integrators.
    """
    if h is None and not jumps:
        raise ValueError("need a Hamiltonian or at least one jump operator")
    if h is not None:
        d = as_cmatrix(h).shape[0]
    else:
        d = as_cmatrix(jumps[0][1]).shape[0]
    require_matrix_size(d * d, d * d)
    s = np.zeros((d * d, d * d), dtype=np.complex128)
    if h is not None:
        s += -1j * (left_superop(h) - right_superop(h))
    for rate, op in jumps:
        op = as_cmatrix(op)
        k = op.conj().T @ op
        s += rate * (
            kron(op, op.conj())
            - 0.5 * left_superop(k)
            - 0.5 * right_superop(k)
        )
    return s
