"""Geometry-only transport operators.

Everything here depends on the room and the direction grid but not on the
materials, so it is computed once and cached:

* the mean-visibility matrix, stored with rows ``(h, j)`` (hit patch,
  bin of the returning direction in its frame) and columns ``(i, l)``
  (ray-origin patch and bin), so every column of a closed scene sums to one;
* per-radiance propagation delays measured on the same rays;
* integrated geometry (area times projected solid angle of a bin);
* the four analytic material templates;
* the reduction of the radiance index set to entries that can matter.

Radiance index ``r = patch * n_dir + bin`` is used throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DirectionGrid, PatchSet
from .raytrace import EPS, make_rng, sample_directions_stratified, sample_patch_points, trace

SPEED_OF_SOUND = 343.0
DT = 1e-3

COMPONENT_NAMES = (
    "diffuse_reflection",
    "diffuse_transmission",
    "specular_reflection",
    "specular_transmission",
)

# seed streams
STREAM_POINTS = 1
STREAM_DIRS = 2
STREAM_GEOMETRY = 3


@dataclass(frozen=True)
class SparseOperator:
    """Coordinate-list sparse matrix with unique, row-major sorted entries."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_coo(cls, shape, rows, cols, vals) -> "SparseOperator":
        m = sp.coo_matrix((np.asarray(vals, dtype=np.float64),
                           (np.asarray(rows), np.asarray(cols))), shape=shape).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        c = m.tocoo()
        return cls(tuple(int(s) for s in shape), c.row.astype(np.int64),
                   c.col.astype(np.int64), c.data.astype(np.float64))

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, self.vals, minlength=self.shape[1])

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, self.vals, minlength=self.shape[0])


@dataclass(frozen=True)
class DelayBank:
    """Fractional delays in samples; ``valid`` marks entries backed by rays."""

    delay: np.ndarray
    valid: np.ndarray

    def taps(self):
        return fractional_taps(self.delay)


def fractional_taps(d):
    """Linear fractional delay taps ``(n0, w0, n1, w1)``.

    ``w0 = ceil(d) - d`` sits at ``floor(d)`` and ``w1 = 1 - w0`` at
    ``ceil(d)``; an integer delay puts all weight on one sample.
    """
    d = np.asarray(d, dtype=np.float64)
    n0 = np.floor(d).astype(np.int64)
    n1 = np.ceil(d).astype(np.int64)
    w0 = n1 - d
    return n0, w0, n1, 1.0 - w0


def distance_to_delay(dist, c: float = SPEED_OF_SOUND, dt: float = DT):
    return np.asarray(dist, dtype=np.float64) / (c * dt)


@dataclass(frozen=True)
class Precomputed:
    """Bundle of everything geometry-dependent for one scene."""

    patches: PatchSet
    grid: DirectionGrid
    visibility: SparseOperator
    delays: DelayBank
    geometry: np.ndarray  # (n_pat, n_dir) integrated geometry
    K: int
    M: int
    M_geometry: int
    seed: int
    c: float = SPEED_OF_SOUND
    dt: float = DT

    @property
    def n_rad(self) -> int:
        return self.patches.n_patches * self.grid.n_dir

    def components(self, names=COMPONENT_NAMES) -> np.ndarray:
        mats = bsdf_material_matrices(self.grid)
        return np.stack([mats[n] for n in names])


def _f32(x):
    # operators are cached as float32; round now so cached and fresh runs agree
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _shoot_patch(patches: PatchSet, grid: DirectionGrid, i: int, K: int, M: int, seed: int):
    tri = patches.triangles[i]
    frame = patches.frames[i]
    normal = frame[2]
    pts = sample_patch_points(tri, K, make_rng(seed, STREAM_POINTS, i))
    rng = make_rng(seed, STREAM_DIRS, i)
    dirs, bins = [], []
    for _ in range(pts.shape[0]):
        d, b = sample_directions_stratified(grid, M, rng, frame)
        dirs.append(d)
        bins.append(b)
    dirs = np.concatenate(dirs)
    bins = np.concatenate(bins)
    origins = np.repeat(pts, M, axis=0)
    side = np.where(dirs @ normal >= 0.0, 1.0, -1.0)
    origins = origins + (EPS * side)[:, None] * normal[None, :]
    return origins, dirs, bins


def visibility_and_delays(patches: PatchSet, grid: DirectionGrid, K: int, M: int, seed: int,
                          c: float = SPEED_OF_SOUND, dt: float = DT):
    """One shared ray pass producing the mean-visibility matrix and delay bank."""
    if K < 1 or M < 1:
        raise ValueError("K and M must be >= 1")
    nd = grid.n_dir
    n_rad = patches.n_patches * nd
    keys, counts = [], []
    dist_sum = np.zeros(n_rad)
    hit_count = np.zeros(n_rad)
    denom = np.zeros(n_rad)
    for i in range(patches.n_patches):
        origins, dirs, bins = _shoot_patch(patches, grid, i, K, M, seed)
        denom[i * nd:(i + 1) * nd] += np.bincount(bins, minlength=nd)
        h, t = trace(origins, dirs, patches)
        hit = h >= 0
        if not np.any(hit):
            continue
        h, t, dh, l = h[hit], t[hit], dirs[hit], bins[hit]
        # bin of the returning direction in the frame of the hit patch
        local = np.einsum("rab,rb->ra", patches.frames[h], -dh)
        j = grid.classify_local(local)
        src = h * nd + j
        dst = i * nd + l
        key = src * n_rad + dst
        u, cnt = np.unique(key, return_counts=True)
        keys.append(u)
        counts.append(cnt)
        dist_sum += np.bincount(src, t, minlength=n_rad)
        hit_count += np.bincount(src, minlength=n_rad)
    if keys:
        key = np.concatenate(keys)
        cnt = np.concatenate(counts).astype(np.float64)
        rows, cols = key // n_rad, key % n_rad
        vals = cnt / denom[cols]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    vis = SparseOperator.from_coo((n_rad, n_rad), rows, cols, _f32(vals))
    valid = hit_count > 0
    mean = np.where(valid, dist_sum / np.maximum(hit_count, 1), 0.0)
    # a reflection is never instantaneous: at least one sample of delay
    delay = np.where(valid, np.maximum(distance_to_delay(mean, c, dt), 1.0), 1.0)
    return vis, DelayBank(_f32(delay), valid)


def mean_visibility(patches, grid, K, M, seed) -> SparseOperator:
    return visibility_and_delays(patches, grid, K, M, seed)[0]


def propagation_delays(patches, grid, K, M, seed) -> DelayBank:
    return visibility_and_delays(patches, grid, K, M, seed)[1]


def integrated_geometry(grid: DirectionGrid, patch_areas, M: int, seed: int) -> np.ndarray:
    """Patch area times the projected solid angle of each bin, by stratified Monte Carlo.

    Every patch shares the same bin layout in its own frame, so the
    per-unit-area values are estimated once and scaled by area.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    local, bins = sample_directions_stratified(grid, M, make_rng(seed, STREAM_GEOMETRY, 0))
    counts = np.bincount(bins, minlength=grid.n_dir)
    sums = np.bincount(bins, np.abs(local[:, 2]), minlength=grid.n_dir)
    per_area = np.where(counts > 0, grid.solid_angles() * sums / np.maximum(counts, 1), 0.0)
    return _f32(np.asarray(patch_areas, dtype=np.float64)[:, None] * per_area[None, :])


def bsdf_material_matrices(grid: DirectionGrid) -> dict:
    """Four lossless material templates in ``[incident l, outgoing k]`` layout.

    Incident bins point back toward where the energy came from, so a
    reflection keeps the incident side and a transmission changes it.
    Diffuse entries weight each incident bin by its projected solid angle
    over pi, which makes every outgoing column sum to one.
    """
    if grid.n_ele % 2 or grid.n_azi % 2:
        raise ValueError("analytic material matrices need even n_ele and n_azi")
    nd, na, ne = grid.n_dir, grid.n_azi, grid.n_ele
    front = grid.front()
    same = front[:, None] == front[None, :]
    weight = (grid.projected_solid_angles() / np.pi)[:, None]
    ke, ka = grid.split(np.arange(nd))
    spec_r = np.zeros((nd, nd))
    spec_r[np.arange(nd), ke * na + (ka + na // 2) % na] = 1.0
    spec_t = np.zeros((nd, nd))
    spec_t[np.arange(nd), (ne - 1 - ke) * na + (ka + na // 2) % na] = 1.0
    return {
        "diffuse_reflection": np.where(same, weight, 0.0),
        "diffuse_transmission": np.where(~same, weight, 0.0),
        "specular_reflection": spec_r,
        "specular_transmission": spec_t,
    }


def precompute(patches: PatchSet, grid: DirectionGrid, K: int = 100, M: int = 4096,
               M_geometry: int = 10000, seed: int = 0,
               c: float = SPEED_OF_SOUND, dt: float = DT) -> Precomputed:
    vis, delays = visibility_and_delays(patches, grid, K, M, seed, c, dt)
    geo = integrated_geometry(grid, patches.areas, M_geometry, seed)
    return Precomputed(patches, grid, vis, delays, geo, K, M, M_geometry, seed, c, dt)


# --------------------------------------------------------------------------
# reduction


@dataclass(frozen=True)
class ReductionMap:
    """Retained radiance indices (sorted) and the inverse lookup."""

    keep: np.ndarray
    full_to_reduced: np.ndarray

    @property
    def n_reduced(self) -> int:
        return int(self.keep.size)

    @property
    def n_full(self) -> int:
        return int(self.full_to_reduced.size)

    @property
    def retained_fraction(self) -> float:
        return self.n_reduced / max(self.n_full, 1)

    @classmethod
    def identity(cls, n: int) -> "ReductionMap":
        return cls(np.arange(n), np.arange(n))

    def patch_slices(self, n_dir: int) -> dict:
        """Contiguous reduced-index range of every patch that keeps anything."""
        patch = self.keep // n_dir
        starts = np.flatnonzero(np.r_[True, patch[1:] != patch[:-1]]) if patch.size else []
        out = {}
        for s in starts:
            p = int(patch[s])
            e = s + int(np.count_nonzero(patch[s:] == p))
            out[p] = slice(int(s), int(e))
        return out


def reduce(visibility: SparseOperator, injection_support, detection_support,
           pattern, n_dir: int) -> ReductionMap:
    """Drop radiance indices that can never carry energy to the receiver.

    ``pattern`` is the ``[incident, outgoing]`` boolean support of the
    material matrix shared by all patches.  An index is kept if it is a
    useful outgoing radiance (it can receive energy and it sends energy
    somewhere that matters) or a useful incident radiance (it can receive
    energy and feeds a useful outgoing one).
    """
    n = visibility.shape[0]
    n_pat = n // n_dir
    pattern = np.asarray(pattern, dtype=bool)
    inj = np.zeros(n, dtype=bool)
    inj[np.asarray(injection_support, dtype=np.int64)] = True
    det = np.zeros(n, dtype=bool)
    det[np.asarray(detection_support, dtype=np.int64)] = True
    # visibility rows are sources (h, j), columns incident (i, l)
    sends = det.copy()
    sends[visibility.rows] = True
    receives_in = inj.copy()
    receives_in[visibility.cols] = True
    rin = receives_in.reshape(n_pat, n_dir).astype(np.float64)
    recv_out = (rin @ pattern.astype(np.float64)) > 0
    out_ok = recv_out.ravel() & sends
    feeds = (out_ok.reshape(n_pat, n_dir).astype(np.float64) @ pattern.T.astype(np.float64)) > 0
    in_ok = receives_in & feeds.ravel()
    keep = np.flatnonzero(out_ok | in_ok)
    f2r = np.full(n, -1, dtype=np.int64)
    f2r[keep] = np.arange(keep.size)
    return ReductionMap(keep, f2r)
