"""Source injection, receiver detection, direct sound and echogram rendering.

The rendering pipeline for one source/receiver pair is::

    source rays -> incident power per (patch, bin) -> / integrated geometry
      -> material matrix -> damped FFT -> truncated series -> time domain
      -> receiver-weighted delayed sum + direct sound -> gain

:class:`Renderer` keeps the reduced operators for a set of pairs and
provides both the forward pass and its hand-written reverse pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .materials import DIRECTIVITY_TEMPERATURE, N_DIRECTIVITY, MaterialModel, directivity_weights
from .precompute import Precomputed, ReductionMap, fractional_taps, reduce
from .raytrace import make_rng, sample_directions_stratified, trace, visible
from .spectral import (
    SolverConfig,
    damping_window,
    delay_spectrum,
    entry_products,
    rfft_adjoint,
    series_adjoint,
    series_solve,
    to_time,
    to_time_adjoint,
)

STREAM_SOURCE = 11
STREAM_RECEIVER = 12


class PositionError(ValueError):
    """Source or receiver position is not usable."""


@dataclass(frozen=True)
class SourceConfig:
    position: tuple
    orientation: tuple = (0.0, 0.0, 1.0)
    n_ray: int = 10000


@dataclass(frozen=True)
class ReceiverConfig:
    position: tuple
    orientation: tuple = (0.0, 0.0, 1.0)
    n_ray: int = 10000
    kappa: tuple | None = None  # fixed receiver directivity; None is omnidirectional


def orthonormal_frame(axis) -> np.ndarray:
    """Rows ``(t1, t2, axis)`` of a right-handed frame around ``axis``."""
    n = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("orientation must be nonzero")
    n = n / norm
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    return np.stack([t1, np.cross(n, t1), n])


def check_interior(pre: Precomputed, position, what: str) -> np.ndarray:
    p = np.asarray(position, dtype=np.float64).reshape(3)
    lo, hi = pre.patches.bounds()
    if not np.all(np.isfinite(p)) or np.any(p <= lo) or np.any(p >= hi):
        raise PositionError(f"{what} position {p.tolist()} is outside the scene")
    return p


@dataclass(frozen=True)
class Injection:
    index: np.ndarray  # full radiance indices (patch * n_dir + incident bin)
    basis: np.ndarray  # (S, K): incident power fraction = basis @ kappa
    delay: np.ndarray  # (S,) samples


@dataclass(frozen=True)
class Detection:
    index: np.ndarray  # full radiance indices (patch * n_dir + outgoing bin)
    weight: np.ndarray  # solid-angle weights, summing to 4 pi in a closed scene
    delay: np.ndarray


@dataclass(frozen=True)
class DirectPath:
    delay: float
    energy: float  # 1 / (4 pi d^2) times receiver gain, zero when occluded
    weights: np.ndarray  # directivity interpolation weights of the source


@dataclass(frozen=True)
class PairTrace:
    injection: Injection
    detection: Detection
    direct: DirectPath


def _shoot(pre: Precomputed, position, orientation, n_ray, stream, key, seed):
    frame = orthonormal_frame(orientation)
    rng = make_rng(seed, stream, key)
    dirs, bins = sample_directions_stratified(pre.grid, n_ray, rng, frame)
    counts = np.bincount(bins, minlength=pre.grid.n_dir)
    weight = 1.0 / (pre.grid.n_dir * counts[bins])  # stratum share of the sphere
    origins = np.broadcast_to(position, dirs.shape)
    h, t = trace(origins, dirs, pre.patches)
    hit = h >= 0
    h, t, d, weight = h[hit], t[hit], dirs[hit], weight[hit]
    local = np.einsum("rab,rb->ra", pre.patches.frames[h], -d)
    b = pre.grid.classify_local(local)
    return h * pre.grid.n_dir + b, t, d, weight, frame[2]


def _scatter(index, weight, dist, pre):
    uniq, inv = np.unique(index, return_inverse=True)
    wsum = np.bincount(inv, weight, minlength=uniq.size)
    dsum = np.bincount(inv, weight * dist, minlength=uniq.size)
    delay = dsum / wsum / (pre.c * pre.dt)
    return uniq, inv, delay


def trace_source(pre: Precomputed, src: SourceConfig, seed: int, key: int = 0,
                 n_kappa: int = N_DIRECTIVITY) -> Injection:
    p = check_interior(pre, src.position, "source")
    idx, dist, dirs, weight, axis = _shoot(pre, p, src.orientation, src.n_ray,
                                           STREAM_SOURCE, key, seed)
    uniq, inv, delay = _scatter(idx, weight, dist, pre)
    wdir = directivity_weights(dirs @ axis, n_kappa, DIRECTIVITY_TEMPERATURE)
    agg = sp.csr_matrix((weight, (inv, np.arange(inv.size))), shape=(uniq.size, inv.size))
    basis = np.asarray(agg @ wdir)
    return Injection(uniq, basis, delay)


def trace_receiver(pre: Precomputed, rcv: ReceiverConfig, seed: int, key: int = 0) -> Detection:
    p = check_interior(pre, rcv.position, "receiver")
    idx, dist, dirs, weight, axis = _shoot(pre, p, rcv.orientation, rcv.n_ray,
                                           STREAM_RECEIVER, key, seed)
    weight = 4.0 * np.pi * weight
    if rcv.kappa is not None:
        kappa = np.asarray(rcv.kappa, dtype=np.float64)
        weight = weight * (directivity_weights(dirs @ axis, kappa.size) @ kappa)
    uniq, inv, delay = _scatter(idx, weight, dist, pre)
    return Detection(uniq, np.bincount(inv, weight, minlength=uniq.size), delay)


def direct_path(pre: Precomputed, src: SourceConfig, rcv: ReceiverConfig,
                n_kappa: int = N_DIRECTIVITY) -> DirectPath:
    xs = np.asarray(src.position, dtype=np.float64)
    xr = np.asarray(rcv.position, dtype=np.float64)
    seg = xr - xs
    d = float(np.linalg.norm(seg))
    if d < 1e-9:
        raise PositionError("source and receiver coincide")
    direction = seg / d
    o = np.asarray(src.orientation, dtype=np.float64)
    w = directivity_weights(direction @ (o / np.linalg.norm(o)), n_kappa)
    energy = 0.0
    if pre.patches.n_patches == 0 or visible(xs, xr, pre.patches):
        energy = 1.0 / (4.0 * np.pi * d * d)
        if rcv.kappa is not None:
            ko = np.asarray(rcv.orientation, dtype=np.float64)
            kappa = np.asarray(rcv.kappa, dtype=np.float64)
            energy *= float(directivity_weights(-direction @ (ko / np.linalg.norm(ko)), kappa.size) @ kappa)
    return DirectPath(d / (pre.c * pre.dt), energy, w)


def trace_pair(pre: Precomputed, src: SourceConfig, rcv: ReceiverConfig, seed: int,
               key: int = 0, n_kappa: int = N_DIRECTIVITY) -> PairTrace:
    """All Monte Carlo quantities of one pair (constant during fitting)."""
    return PairTrace(trace_source(pre, src, seed, key, n_kappa),
                     trace_receiver(pre, rcv, seed, key),
                     direct_path(pre, src, rcv, n_kappa))


def tap_signal(delay: float, T: int) -> np.ndarray:
    """Length-``T`` two-tap fractional delay; taps past the end are dropped."""
    out = np.zeros(T)
    n0, w0, n1, w1 = fractional_taps(delay)
    if n0 < T:
        out[n0] += w0
    if n1 < T:
        out[n1] += w1
    return out


def direct_arrival(pre: Precomputed, src: SourceConfig, rcv: ReceiverConfig, T: int,
                   kappa=None) -> np.ndarray:
    """Direct sound ``gain_s * gain_r / (4 pi d^2)`` at delay ``d / (c dt)``."""
    path = direct_path(pre, src, rcv)
    gain = 1.0 if kappa is None else float(path.weights @ np.asarray(kappa, dtype=np.float64))
    return gain * path.energy * tap_signal(path.delay, T)


def detect(signals, detection: Detection, rows, T: int) -> np.ndarray:
    """Weighted, delayed sum of radiance time signals ``signals[rows]``."""
    rows = np.asarray(rows)
    ok = rows >= 0
    L = np.asarray(signals)[rows[ok]]
    n0, w0, n1, w1 = fractional_taps(detection.delay[ok])
    w = detection.weight[ok]
    n = L.shape[1] if L.ndim == 2 else T
    m = np.arange(n)
    idx = np.concatenate([(n0[:, None] + m).ravel(), (n1[:, None] + m).ravel()])
    val = np.concatenate([((w * w0)[:, None] * L).ravel(), ((w * w1)[:, None] * L).ravel()])
    keep = idx < T
    return np.bincount(idx[keep], val[keep], minlength=T)[:T]


def detect_adjoint(ebar, detection: Detection, rows, n_rows: int, n: int) -> np.ndarray:
    rows = np.asarray(rows)
    ok = rows >= 0
    n0, w0, n1, w1 = fractional_taps(detection.delay[ok])
    w = detection.weight[ok]
    pad = np.concatenate([ebar, np.zeros(n + int(n1.max(initial=0)) + 1)])
    m = np.arange(n)
    out = np.zeros((n_rows, n))
    out[rows[ok]] = (w * w0)[:, None] * pad[n0[:, None] + m] + (w * w1)[:, None] * pad[n1[:, None] + m]
    return out


# --------------------------------------------------------------------------


@dataclass
class RenderResult:
    energy: np.ndarray
    direct: np.ndarray
    reflected: np.ndarray
    gain: float
    cache: dict | None = None


class Renderer:
    """Reduced operators for a fixed scene, material pattern and set of pairs."""

    def __init__(self, pre: Precomputed, pattern, traces, config: SolverConfig,
                 reduced: bool = True):
        self.pre = pre
        self.config = config
        self.traces = list(traces)
        nd = pre.grid.n_dir
        self.pattern = np.asarray(pattern, dtype=bool)
        if reduced:
            inj = np.concatenate([t.injection.index for t in self.traces] or [np.zeros(0, int)])
            det = np.concatenate([t.detection.index for t in self.traces] or [np.zeros(0, int)])
            self.reduction = reduce(pre.visibility, inj, det, self.pattern, nd)
        else:
            self.reduction = ReductionMap.identity(pre.n_rad)
        keep = self.reduction.keep
        # incident (i, l) <- source (h, j): transpose of the stored visibility
        vt = pre.visibility.csr().T.tocsr()
        self.V = vt[keep][:, keep].tocsr()
        self.delay = pre.delays.delay[keep]
        self.D = delay_spectrum(self.delay, config.gamma, config.T)
        self.G = pre.geometry.ravel()
        self._build_material_structure()

    def _build_material_structure(self):
        nd = self.pre.grid.n_dir
        keep = self.reduction.keep
        rows, cols, pats, ls, ks = [], [], [], [], []
        for p, sl in self.reduction.patch_slices(nd).items():
            bins = keep[sl] - p * nd
            sub = self.pattern[np.ix_(bins, bins)]  # [incident, outgoing]
            li, ki = np.nonzero(sub)
            rows.append(sl.start + ki)
            cols.append(sl.start + li)
            pats.append(np.full(li.size, p))
            ls.append(bins[li])
            ks.append(bins[ki])
        cat = (lambda a: np.concatenate(a) if a else np.zeros(0, dtype=np.int64))
        rows, cols, pats, ls, ks = map(cat, (rows, cols, pats, ls, ks))
        order = np.lexsort((cols, rows))
        self.m_rows, self.m_cols = rows[order], cols[order]
        self.m_patch, self.m_l, self.m_k = pats[order], ls[order], ks[order]
        n = self.reduction.n_reduced
        self.m_indptr = np.searchsorted(self.m_rows, np.arange(n + 1)).astype(np.int64)

    @property
    def n_rad(self) -> int:
        return self.reduction.n_reduced

    def material_operator(self, mhat) -> sp.csr_matrix:
        data = np.asarray(mhat)[self.m_patch, self.m_l, self.m_k]
        n = self.n_rad
        return sp.csr_matrix((data, self.m_cols, self.m_indptr), shape=(n, n))

    def _rows(self, index):
        return self.reduction.full_to_reduced[index]

    def incident_signals(self, trace: PairTrace, kappa, T: int):
        """Incident radiance time signals of the injection, with reduced rows."""
        inj = trace.injection
        rows = self._rows(inj.index)
        ok = rows >= 0
        p = inj.basis[ok] @ np.asarray(kappa, dtype=np.float64)
        u = p / self.G[inj.index[ok]]
        n0, w0, n1, w1 = fractional_taps(inj.delay[ok])
        sig = np.zeros((u.size, T))
        r = np.arange(u.size)
        m0, m1 = n0 < T, n1 < T
        np.add.at(sig, (r[m0], n0[m0]), (u * w0)[m0])
        np.add.at(sig, (r[m1], n1[m1]), (u * w1)[m1])
        return rows[ok], sig

    def forward(self, model: MaterialModel, pair: int, mhat=None, keep: bool = False) -> RenderResult:
        cfg = self.config
        T = cfg.T
        tr = self.traces[pair]
        kappa = model.params["kappa"]
        if mhat is None:
            mhat = model.realize()
        M = self.material_operator(mhat)
        rows, usig = self.incident_signals(tr, kappa, T)
        w = damping_window(T, cfg.gamma)
        U = np.zeros((self.n_rad, T // 2 + 1), dtype=np.complex128)
        U[rows] = np.fft.rfft(usig * w, axis=-1)
        L0 = np.ascontiguousarray((M @ U.view(np.float64))).view(np.complex128)
        S, terms = series_solve(L0, self.D, self.V, M, cfg.n_order, keep_terms=True) if keep \
            else (series_solve(L0, self.D, self.V, M, cfg.n_order), None)
        Lt, mask = to_time(S, cfg.gamma, T)
        drows = self._rows(tr.detection.index)
        e_l = detect(Lt, tr.detection, drows, T)
        direct0 = tr.direct.energy * tap_signal(tr.direct.delay, T)
        src_gain = float(tr.direct.weights @ kappa)
        e_d = src_gain * direct0
        g = float(np.exp(model.params["log_gain"]))
        energy = g * (e_d + e_l)
        cache = None
        if keep:
            cache = dict(M=M, U=U, terms=terms, mask=mask, rows=rows, drows=drows,
                         direct0=direct0, pair=pair)
        return RenderResult(energy, g * e_d, g * e_l, g, cache)

    def backward(self, model: MaterialModel, result: RenderResult, ebar) -> dict:
        """Parameter gradients given ``d loss / d energy``."""
        cfg = self.config
        T = cfg.T
        c = result.cache
        tr = self.traces[c["pair"]]
        ebar = np.asarray(ebar, dtype=np.float64)
        g = result.gain
        grads = {"log_gain": np.asarray(float(ebar @ result.energy))}
        sbar = g * ebar
        kbar = tr.direct.weights * float(sbar @ c["direct0"])
        Lbar = detect_adjoint(sbar, tr.detection, c["drows"], self.n_rad, T)
        Sbar = to_time_adjoint(Lbar, c["mask"], cfg.gamma, T)
        M = c["M"]
        G0, mgrad = series_adjoint(Sbar, self.D, self.V, M, c["terms"], self.m_rows, self.m_cols)
        mgrad += entry_products(G0, c["U"], self.m_rows, self.m_cols)
        Ubar = np.ascontiguousarray(M.T.tocsr() @ G0.view(np.float64)).view(np.complex128)
        rows = c["rows"]
        ubar = rfft_adjoint(Ubar[rows], T) * damping_window(T, cfg.gamma)
        inj = tr.injection
        ok = self._rows(inj.index) >= 0
        n0, w0, n1, w1 = fractional_taps(inj.delay[ok])
        pad = np.concatenate([ubar, np.zeros((ubar.shape[0], 2))], axis=1)
        n0c, n1c = np.minimum(n0, T), np.minimum(n1, T)  # index T reads the zero pad
        r = np.arange(ubar.shape[0])
        tap_bar = w0 * pad[r, n0c] + w1 * pad[r, n1c]
        pbar = tap_bar / self.G[inj.index[ok]]
        kbar = kbar + inj.basis[ok].T @ pbar
        mhat_bar = np.zeros((model.n_pat, self.pre.grid.n_dir, self.pre.grid.n_dir))
        mhat_bar[self.m_patch, self.m_l, self.m_k] = mgrad
        grads.update(model.realize_backward(mhat_bar))
        grads["kappa"] = kbar
        return grads


def render(pre: Precomputed, model: MaterialModel, src: SourceConfig, rcv: ReceiverConfig,
           config: SolverConfig = SolverConfig(), seed: int = 0, reduced: bool = True,
           key: int = 0) -> RenderResult:
    """Echogram of one source/receiver pair."""
    tr = trace_pair(pre, src, rcv, seed, key, model.params["kappa"].size)
    return Renderer(pre, model.pattern(), [tr], config, reduced).forward(model, 0)
