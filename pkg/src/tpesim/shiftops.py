"""Shift-table representation of ladder-monomial operators.

Every operator the protocol evolves under (ab, c, a b c^dag, per-mode
loss Kraus operators) has at most one nonzero entry per matrix row:
O[i, src[i]] = w[i].  Storing (w, src) makes left/right application an
O(D^2) gather instead of an O(D^3) matmul, which is what keeps the
trajectory ensembles within their runtime budgets on one core.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShiftOp:
    """Operator with at most one nonzero per row: O[i, src[i]] = w[i].

    Rows with w[i] == 0 are absent (src[i] is then an arbitrary valid
    index).  ``dims`` records the tensor-factor shape for bookkeeping.
    """

    dims: tuple[int, ...]
    w: np.ndarray       # float64, shape (D,)
    src: np.ndarray     # int64, shape (D,)

    @property
    def dim(self) -> int:
        return self.w.size

    def dense(self) -> np.ndarray:
        d = self.dim
        m = np.zeros((d, d), dtype=np.complex128)
        rows = np.nonzero(self.w)[0]
        m[rows, self.src[rows]] = self.w[rows]
        return m

    def dagger(self) -> "ShiftOp":
        """O^dag is again single-nonzero-per-row (src is injective on support)."""
        d = self.dim
        w = np.zeros(d)
        src = np.zeros(d, dtype=np.int64)
        rows = np.nonzero(self.w)[0]
        w[self.src[rows]] = self.w[rows]
        src[self.src[rows]] = rows
        return ShiftOp(dims=self.dims, w=w, src=src)

    def norm_diag(self) -> np.ndarray:
        """Diagonal of O^dag O (it is always diagonal for these tables)."""
        d = self.dim
        k = np.zeros(d)
        rows = np.nonzero(self.w)[0]
        np.add.at(k, self.src[rows], self.w[rows] ** 2)
        return k

    # --- dense-equivalent applications (numpy reference paths) ----------

    def apply_left(self, rho: np.ndarray) -> np.ndarray:
        """O @ rho for matrices, O @ v for vectors."""
        if rho.ndim == 1:
            return self.w * rho[self.src]
        return self.w[:, None] * rho[self.src, :]

    def apply_right_dag(self, rho: np.ndarray) -> np.ndarray:
        """rho @ O^dag."""
        return rho[:, self.src] * self.w[None, :]

    def sandwich(self, rho: np.ndarray) -> np.ndarray:
        """O @ rho @ O^dag."""
        return (self.w[:, None] * rho[np.ix_(self.src, self.src)]) * self.w[None, :]

    def expectation(self, rho: np.ndarray) -> complex:
        """Tr[O rho] (or <v|O|v> for a vector)."""
        if rho.ndim == 1:
            return complex(np.vdot(rho, self.apply_left(rho)))
        d = self.dim
        return complex(np.sum(self.w * rho[self.src, np.arange(d)]))


def _digits(dims: tuple[int, ...]) -> np.ndarray:
    """Array (nfactors, D) of per-factor basis indices in row-major order."""
    grids = np.indices(dims)
    return grids.reshape(len(dims), -1)


def ladder_monomial(dims, terms) -> ShiftOp:
    """Product of single-factor ladder operators.

    ``terms`` is a list of (factor_index, 'lower' | 'raise'); e.g. the
    two-photon jump on factors (2, 3) is [(2, 'lower'), (3, 'lower')]
    and the three-wave term a b c^dag is that plus (4, 'raise').
    """
    dims = tuple(int(d) for d in dims)
    d = int(np.prod(dims))
    strides = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    digits = _digits(dims)
    w = np.ones(d)
    shift = np.zeros(d, dtype=np.int64)
    valid = np.ones(d, dtype=bool)
    for f, kind in terms:
        n = digits[f]
        if kind == "lower":
            # row n sources from n+1 with weight sqrt(n+1)
            valid &= n + 1 < dims[f]
            w *= np.sqrt(n + 1.0)
            shift += strides[f]
        elif kind == "raise":
            # row n sources from n-1 with weight sqrt(n)
            valid &= n >= 1
            w *= np.sqrt(np.maximum(n, 1).astype(float))
            shift -= strides[f]
        else:
            raise ValueError(f"unknown ladder kind {kind!r}")
    w = np.where(valid, w, 0.0)
    src = np.where(valid, np.arange(d, dtype=np.int64) + shift, 0)
    return ShiftOp(dims=dims, w=w, src=src)


def factor_shift(dims, factor: int, k: int, weights: np.ndarray) -> ShiftOp:
    """Operator sum_n weights[n] |n><n+k| acting on one factor.

    Used for the photon-loss Kraus operators; ``weights`` must have one
    entry per level of the factor (rows with n+k outside the truncation
    are dropped).
    """
    dims = tuple(int(d) for d in dims)
    d = int(np.prod(dims))
    strides = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != dims[factor]:
        raise ValueError("need one weight per level of the shifted factor")
    n = _digits(dims)[factor]
    valid = n + k < dims[factor]
    w = np.where(valid, weights[n], 0.0)
    src = np.where(valid, np.arange(d, dtype=np.int64) + k * strides[factor], 0)
    return ShiftOp(dims=dims, w=w, src=src)
