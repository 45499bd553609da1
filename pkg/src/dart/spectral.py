"""Frequency-domain radiance solver with damped (outside the unit circle) sampling.

Signals of length ``T`` are multiplied by ``gamma ** (n / T)`` before the
real FFT, which is the same as sampling their z-transform on a circle of
radius ``gamma ** (-1 / T)``.  Content that would wrap around from beyond
``T`` is thereby attenuated by at least a factor ``gamma``.

Complex arrays have shape ``(n_radiance, T // 2 + 1)``.  Gradients of
complex quantities use the convention ``dL/dRe + 1j * dL/dIm``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .precompute import fractional_taps

__all__ = [
    "SolverConfig",
    "damping_window",
    "damped_forward_transform",
    "damped_inverse_transform",
    "delay_spectrum",
    "series_solve",
    "series_adjoint",
    "to_time",
    "to_time_adjoint",
    "rfft_adjoint",
    "irfft_adjoint",
    "NegativeRadianceError",
]


class NegativeRadianceError(RuntimeError):
    """Recovered time signal is negative beyond round-off."""


@dataclass(frozen=True)
class SolverConfig:
    T: int = 320
    gamma: float = 1e-3
    n_order: int = 40
    dt: float = 1e-3

    def __post_init__(self):
        if self.T < 2 or self.T % 2:
            raise ValueError("T must be even and >= 2")
        # gamma = 1 is plain unit-circle sampling (kept for aliasing comparisons)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_order < 0:
            raise ValueError("n_order must be >= 0")

    @property
    def n_freq(self) -> int:
        return self.T // 2 + 1


def damping_window(T: int, gamma: float) -> np.ndarray:
    return gamma ** (np.arange(T) / T)


def _bin_scale(T: int) -> np.ndarray:
    c = np.full(T // 2 + 1, 2.0)
    c[0] = 1.0
    if T % 2 == 0:
        c[-1] = 1.0
    return c


def damped_forward_transform(x, gamma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[-1]
    return np.fft.rfft(x * damping_window(T, gamma), axis=-1)


def damped_inverse_transform(X, gamma: float, T: int) -> np.ndarray:
    return np.fft.irfft(X, n=T, axis=-1) / damping_window(T, gamma)


def rfft_adjoint(Xbar, T: int) -> np.ndarray:
    return T * np.fft.irfft(Xbar / _bin_scale(T), n=T, axis=-1)


def irfft_adjoint(xbar, T: int) -> np.ndarray:
    return _bin_scale(T) * np.fft.rfft(xbar, axis=-1) / T


def delay_spectrum(delay, gamma: float, T: int) -> np.ndarray:
    """Damped spectra of two-tap linear fractional delays, one row per delay."""
    delay = np.asarray(delay, dtype=np.float64)
    if np.any(delay < 0):
        raise ValueError("delays must be nonnegative")
    shape = delay.shape
    n0, w0, n1, w1 = fractional_taps(delay.ravel())
    if np.any(n1 >= T):
        raise ValueError(f"delay of {delay.max():.3f} samples does not fit in T={T}")
    f = np.arange(T // 2 + 1)
    out = ((w0 * gamma ** (n0 / T))[:, None] * np.exp(-2j * np.pi * np.outer(n0, f) / T)
           + (w1 * gamma ** (n1 / T))[:, None] * np.exp(-2j * np.pi * np.outer(n1, f) / T))
    return out.reshape(shape + f.shape)


def _spmm(A: sp.csr_matrix, X: np.ndarray) -> np.ndarray:
    """Real sparse matrix times complex dense matrix via a float view."""
    X = np.ascontiguousarray(X)
    out = A @ X.view(np.float64)
    return np.ascontiguousarray(out).view(np.complex128)


def series_solve(L0, D, V, M, n_order: int, keep_terms: bool = False):
    """Truncated Neumann series ``sum_k L_k`` with ``L_k = M V (D * L_{k-1})``.

    ``V`` and ``M`` are real sparse operators acting on radiance indices,
    applied one after another.  With ``keep_terms`` the intermediate
    products ``Y_k = V (D * L_{k-1})`` are returned for the adjoint.
    """
    L0 = np.asarray(L0, dtype=np.complex128)
    if D.shape != L0.shape:
        raise ValueError(f"delay spectra {D.shape} do not match radiance {L0.shape}")
    n = L0.shape[0]
    if V.shape != (n, n) or M.shape != (n, n):
        raise ValueError("operator dimensions do not match the radiance count")
    V = sp.csr_matrix(V)
    M = sp.csr_matrix(M)
    total = L0.copy()
    L = L0
    terms = []
    for _ in range(n_order):
        Y = _spmm(V, D * L)
        L = _spmm(M, Y)
        total += L
        if keep_terms:
            terms.append(Y)
    return (total, terms) if keep_terms else total


def series_adjoint(Sbar, D, V, M, terms, m_rows, m_cols):
    """Reverse pass of :func:`series_solve`.

    Returns the gradient w.r.t. ``L0`` and w.r.t. the material operator
    entries at ``(m_rows, m_cols)``.
    """
    V = sp.csr_matrix(V)
    M = sp.csr_matrix(M)
    Vt = V.T.tocsr()
    Mt = M.T.tocsr()
    Sbar = np.asarray(Sbar, dtype=np.complex128)
    mgrad = np.zeros(len(m_rows))
    G = Sbar
    Dc = np.conj(D)
    for Y in reversed(terms):
        mgrad += entry_products(G, Y, m_rows, m_cols)
        Ybar = _spmm(Mt, G)
        G = Sbar + Dc * _spmm(Vt, Ybar)
    return G, mgrad


def entry_products(G, Y, rows, cols, chunk: int = 1 << 16) -> np.ndarray:
    """``sum_f Re(G[rows, f] * conj(Y[cols, f]))`` for each listed entry."""
    Gr = np.ascontiguousarray(G).view(np.float64)
    Yr = np.ascontiguousarray(Y).view(np.float64)
    out = np.empty(len(rows))
    for s in range(0, len(rows), chunk):
        r = rows[s:s + chunk]
        c = cols[s:s + chunk]
        out[s:s + chunk] = np.einsum("ij,ij->i", Gr[r], Yr[c])
    return out


def to_time(S, gamma: float, T: int, rtol: float = 1e-6):
    """Back to the time domain; round-off negatives are clamped to zero.

    Returns ``(signals, mask)`` where ``mask`` marks samples that were kept.
    A negative value below ``-rtol * peak`` raises :class:`NegativeRadianceError`.
    """
    x = damped_inverse_transform(S, gamma, T)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    low = float(x.min()) if x.size else 0.0
    if low < -rtol * peak:
        raise NegativeRadianceError(f"negative radiance {low:.3e} (peak {peak:.3e})")
    mask = x > 0.0
    return np.where(mask, x, 0.0), mask


def to_time_adjoint(xbar, mask, gamma: float, T: int) -> np.ndarray:
    return irfft_adjoint(np.where(mask, xbar, 0.0) / damping_window(T, gamma), T)
