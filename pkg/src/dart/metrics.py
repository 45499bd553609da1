"""Echograms from impulse responses and room-acoustic parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IR_RATE = 16000
ECHOGRAM_RATE = 1000
BLOCK = IR_RATE // ECHOGRAM_RATE


def echogram_from_ir(ir, T: int | None = None, block: int = BLOCK) -> np.ndarray:
    """Energy per block of ``block`` samples (16 kHz -> 1 kHz by default)."""
    ir = np.asarray(ir, dtype=np.float64).ravel()
    if ir.size == 0:
        raise ValueError("empty impulse response")
    pad = (-ir.size) % block
    e = np.square(np.concatenate([ir, np.zeros(pad)])).reshape(-1, block).sum(axis=1)
    if T is not None:
        e = e[:T] if e.size >= T else np.concatenate([e, np.zeros(T - e.size)])
    return e


def edc(e) -> np.ndarray:
    """Energy decay curve: suffix sums of the echogram."""
    return np.cumsum(np.asarray(e, dtype=np.float64)[::-1])[::-1]


def edc_db(e) -> np.ndarray:
    d = edc(e)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(d / d[0])


def _decay_fit(e, hi_db, lo_db, dt):
    curve = edc_db(e)
    t = np.arange(curve.size) * dt
    sel = (curve <= hi_db) & (curve >= lo_db)
    if np.count_nonzero(curve <= lo_db) == 0 or np.count_nonzero(sel) < 2:
        return math.nan
    slope, _ = np.polyfit(t[sel], curve[sel], 1)
    if slope >= 0:
        return math.nan
    return -60.0 / slope


def _check(e):
    e = np.asarray(e, dtype=np.float64)
    if e.size == 0 or not np.any(e > 0):
        raise ValueError("echogram has no energy")
    return e


def t60(e, dt: float = 1.0 / ECHOGRAM_RATE, window=(-5.0, -35.0), fallback=(-5.0, -25.0)) -> float:
    """Reverberation time from a line fit of the decay curve (NaN if undefined)."""
    e = _check(e)
    out = _decay_fit(e, window[0], window[1], dt)
    if math.isnan(out) and fallback is not None:
        out = _decay_fit(e, fallback[0], fallback[1], dt)
    return out


def edt(e, dt: float = 1.0 / ECHOGRAM_RATE) -> float:
    """Early decay time from the first 10 dB of decay, scaled to 60 dB."""
    return _decay_fit(_check(e), 0.0, -10.0, dt)


def c50(e, boundary: int = 50) -> float:
    """Clarity: early (``n <= boundary``) to late energy ratio in dB."""
    e = _check(e)
    early = float(e[:boundary + 1].sum())
    late = float(e[boundary + 1:].sum())
    if late <= 0:
        return math.inf
    if early <= 0:
        return -math.inf
    return 10.0 * math.log10(early / late)


@dataclass(frozen=True)
class MetricDistances:
    l1: float
    t60_pct: float
    edt_s: float
    c50_db: float

    def as_row(self):
        return (self.l1, self.t60_pct, self.edt_s, self.c50_db)


def compare(pred, truth) -> MetricDistances:
    """L1 distance and parameter errors; undefined parameters give NaN."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("echograms differ in length")
    l1 = float(np.abs(pred - truth).sum())

    def safe(f, x):
        try:
            return f(x)
        except ValueError:
            return math.nan

    t_p, t_t = safe(t60, pred), safe(t60, truth)
    t60_pct = abs(t_p - t_t) / t_t * 100.0 if np.isfinite(t_p) and np.isfinite(t_t) and t_t > 0 else math.nan
    e_p, e_t = safe(edt, pred), safe(edt, truth)
    edt_s = abs(e_p - e_t) if np.isfinite(e_p) and np.isfinite(e_t) else math.nan
    c_p, c_t = safe(c50, pred), safe(c50, truth)
    c50_db = abs(c_p - c_t) if np.isfinite(c_p) and np.isfinite(c_t) else math.nan
    if np.array_equal(pred, truth):
        # identical inputs agree even where a parameter is undefined
        t60_pct = 0.0 if np.isfinite(t_t) else t60_pct
        edt_s = 0.0 if np.isfinite(e_t) else edt_s
        c50_db = 0.0 if c_t == c_p else c50_db
    return MetricDistances(l1, t60_pct, edt_s, c50_db)


def average(rows):
    """Column means ignoring NaNs, plus per-column count of excluded rows."""
    arr = np.array([r.as_row() if isinstance(r, MetricDistances) else r for r in rows], dtype=float)
    if arr.size == 0:
        return np.full(4, math.nan), np.zeros(4, dtype=int)
    bad = ~np.isfinite(arr)
    with np.errstate(invalid="ignore"):
        means = np.array([arr[~bad[:, j], j].mean() if np.any(~bad[:, j]) else math.nan
                          for j in range(arr.shape[1])])
    return means, bad.sum(axis=0)
