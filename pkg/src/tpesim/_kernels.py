"""Numba-fused inner loops for the evolution engines.

Each kernel is the element-wise fusion of shift-table operator
applications that the numpy reference paths in ``dynamics`` perform as
separate array passes.  Arithmetic is kept in the same grouping as the
reference expressions so the two paths agree to rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sme_step(rho, out, w, src, kd, a1, g_re, g_im, s_term):
    """One Euler-Maruyama step of the single-channel homodyne SME.

    out = rho + a1*(L rho L^dag - {L^dag L, rho}/2)
              + gamma*(L rho) + conj(gamma)*(rho L^dag) - s_term*rho
    with L given by tables (w, src), kd = diag(L^dag L), a1 = rate*dt,
    gamma = sqrt(eta*rate)*dW*e^{-i theta} = (g_re, g_im), and
    s_term = sqrt(eta*rate)*dW*Tr[(L e^{-i theta} + h.c.) rho].
    The result is renormalized in place; returns the pre-normalization trace.
    """
    d = rho.shape[0]
    g = complex(g_re, g_im)
    gc = complex(g_re, -g_im)
    for i in range(d):
        wi = w[i]
        si = src[i]
        ki = kd[i]
        for j in range(d):
            acc = rho[i, j] * (1.0 - 0.5 * a1 * (ki + kd[j]) - s_term)
            acc = acc + a1 * (wi * (w[j] * rho[si, src[j]]))
            acc = acc + g * (wi * rho[si, j])
            acc = acc + gc * (w[j] * rho[i, src[j]])
            out[i, j] = acc
    tr = 0.0
    for i in range(d):
        tr += out[i, i].real
    inv = 1.0 / tr
    for i in range(d):
        for j in range(d):
            out[i, j] = out[i, j] * inv
    return tr


@njit(cache=True)
def dissipator_rhs(rho, out, w, src, kd, rate):
    """out = rate * (L rho L^dag - {L^dag L, rho}/2) for a shift-table L."""
    d = rho.shape[0]
    for i in range(d):
        wi = w[i]
        si = src[i]
        ki = kd[i]
        for j in range(d):
            out[i, j] = rate * (
                wi * (w[j] * rho[si, src[j]]) - 0.5 * (ki + kd[j]) * rho[i, j]
            )


@njit(cache=True)
def three_mode_rhs(rho, out, wp, sp, wq, sq, g, wc, sc, kdc, kappa_c):
    """RHS of the three-wave-mixing model for Hermitian rho.

    H = i g (P - P^dag) with P = a b c^dag given by tables (wp, sp) and
    P^dag by (wq, sq); plus kappa_c D(c) with c tables (wc, sc).
    Uses rho's Hermiticity to express right-multiplications as gathers.
    """
    d = rho.shape[0]
    for i in range(d):
        wpi = wp[i]
        spi = sp[i]
        wqi = wq[i]
        sqi = sq[i]
        wci = wc[i]
        sci = sc[i]
        ki = kdc[i]
        for j in range(d):
            comm = (
                wpi * rho[spi, j]
                - wqi * rho[sqi, j]
                - wq[j] * rho[i, sq[j]]
                + wp[j] * rho[i, sp[j]]
            )
            diss = wci * (wc[j] * rho[sci, sc[j]]) - 0.5 * (ki + kdc[j]) * rho[i, j]
            out[i, j] = g * comm + kappa_c * diss


@njit(cache=True)
def axpy(out, x, y, c):
    """out = x + c*y (element-wise, complex)."""
    d = out.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = x[i, j] + c * y[i, j]


@njit(cache=True)
def hermitize(rho):
    """rho <- (rho + rho^dag)/2, in place."""
    d = rho.shape[0]
    for i in range(d):
        rho[i, i] = complex(rho[i, i].real, 0.0)
        for j in range(i + 1, d):
            v = 0.5 * (rho[i, j] + np.conj(rho[j, i]))
            rho[i, j] = v
            rho[j, i] = np.conj(v)


@njit(cache=True)
def rk4_combine(rho, k1, k2, k3, k4, h):
    """rho += h/6 * (k1 + 2 k2 + 2 k3 + k4), in place."""
    d = rho.shape[0]
    c = h / 6.0
    for i in range(d):
        for j in range(d):
            rho[i, j] = rho[i, j] + c * (
                k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j]
            )
