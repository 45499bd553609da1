"""Brute-force time-domain reference solver.

The radiance recursion is evaluated sample by sample (or order by order)
with explicit delay taps over a horizon several times longer than the
echogram, using the same operators as :mod:`dart.transport`.  It is slow
and meant for verification only.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .materials import MaterialModel
from .precompute import Precomputed, fractional_taps
from .spectral import SolverConfig
from .transport import ReceiverConfig, Renderer, RenderResult, SourceConfig, detect, tap_signal, trace_pair

MAX_ORACLE_RADIANCE = 2000


class OracleSizeError(ValueError):
    pass


def _delayed(L, n0, w0, n1, w1):
    """Apply per-row two-tap delays to time signals ``L`` (rows x samples)."""
    R, H = L.shape
    out = np.zeros_like(L)
    for n, w in ((n0, w0), (n1, w1)):
        for shift in np.unique(n):
            rows = np.flatnonzero(n == shift)
            if shift >= H:
                continue
            out[rows, shift:] += w[rows, None] * L[rows, :H - shift]
    return out


def time_domain_solve(L0, V, M, delay, n_order: int | None) -> np.ndarray:
    """Radiance time signals from initial radiance ``L0``.

    With an integer ``n_order`` the reflection series is truncated exactly
    like the frequency-domain solver.  With ``None`` the full causal
    recursion ``L[n] = L0[n] + M V (D * L)[n]`` is run sample by sample,
    which requires every delay to be at least one sample.
    """
    L0 = np.asarray(L0, dtype=np.float64)
    S = (sp.csr_matrix(M) @ sp.csr_matrix(V)).tocsr()
    n0, w0, n1, w1 = fractional_taps(delay)
    if n_order is not None:
        total = L0.copy()
        L = L0
        for _ in range(n_order):
            L = S @ _delayed(L, n0, w0, n1, w1)
            total += L
        return total
    used = np.zeros(L0.shape[0], dtype=bool)
    used[S.indices] = True
    if np.any(n0[used] < 1) or np.any((n1[used] < 1) & (w1[used] > 0)):
        raise ValueError("instantaneous kernel entry: every delay must be >= 1 sample")
    R, H = L0.shape
    L = np.zeros_like(L0)
    rows = np.arange(R)
    for n in range(H):
        a = n - n0
        b = n - n1
        v = np.where(a >= 0, w0 * L[rows, np.maximum(a, 0)], 0.0)
        v += np.where(b >= 0, w1 * L[rows, np.maximum(b, 0)], 0.0)
        L[:, n] = L0[:, n] + S @ v
    return L


def echogram_oracle(pre: Precomputed, model: MaterialModel, src: SourceConfig,
                    rcv: ReceiverConfig, config: SolverConfig = SolverConfig(), seed: int = 0,
                    n_order="config", horizon: int | None = None, key: int = 0,
                    full: bool = False) -> RenderResult:
    """Reference echogram with the same rays and operators as :func:`render`.

    ``n_order="config"`` truncates at ``config.n_order``; ``None`` runs the
    untruncated recursion.  The horizon defaults to ``4 * T``; with
    ``full=True`` the whole horizon is returned instead of the first ``T``.
    """
    T = config.T
    H = 4 * T if horizon is None else int(horizon)
    order = config.n_order if n_order == "config" else n_order
    tr = trace_pair(pre, src, rcv, seed, key, model.params["kappa"].size)
    rend = Renderer(pre, model.pattern(), [tr], config, reduced=True)
    if rend.n_rad > MAX_ORACLE_RADIANCE:
        raise OracleSizeError(f"{rend.n_rad} radiances exceed the oracle limit "
                              f"{MAX_ORACLE_RADIANCE}")
    kappa = model.params["kappa"]
    M = rend.material_operator(model.realize())
    rows, usig = rend.incident_signals(tr, kappa, H)
    U = np.zeros((rend.n_rad, H))
    U[rows] = usig
    L0 = M @ U
    L = time_domain_solve(L0, rend.V, M, rend.delay, order)
    e_l = detect(L, tr.detection, rend._rows(tr.detection.index), H)
    e_d = float(tr.direct.weights @ kappa) * tr.direct.energy * tap_signal(tr.direct.delay, H)
    g = float(np.exp(model.params["log_gain"]))
    n = H if full else T
    return RenderResult(g * (e_d + e_l)[:n], g * e_d[:n], g * e_l[:n], g)
