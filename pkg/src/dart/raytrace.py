"""Ray casting against patch sets and the seeded sampling primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import DirectionGrid, PatchSet

EPS = 1e-7  # self-intersection guard (meters)

# prefer the portable thread pools; an outdated TBB only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "EPS",
    "Hit",
    "make_rng",
    "trace",
    "intersect_first",
    "visible",
    "visible_many",
    "sample_patch_points",
    "sample_directions_stratified",
]


@dataclass(frozen=True)
class Hit:
    patch: int
    point: np.ndarray
    distance: float
    bin: int  # bin of the reversed ray direction in the hit patch's frame (-1 without a grid)


def make_rng(seed: int, stream: int, key: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream, key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(key)])))


@numba.njit(parallel=True, cache=True)
def _first_hits(orig, dirs, v0, e1, e2, tmin):
    n_ray = orig.shape[0]
    n_tri = v0.shape[0]
    idx = np.full(n_ray, -1, dtype=np.int64)
    dist = np.full(n_ray, np.inf)
    for r in numba.prange(n_ray):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = np.inf
        bi = -1
        for f in range(n_tri):
            ax, ay, az = e1[f, 0], e1[f, 1], e1[f, 2]
            bx, by, bz = e2[f, 0], e2[f, 1], e2[f, 2]
            px = dy * bz - dz * by
            py = dz * bx - dx * bz
            pz = dx * by - dy * bx
            det = ax * px + ay * py + az * pz
            if abs(det) < 1e-300:
                continue
            inv = 1.0 / det
            sx = ox - v0[f, 0]
            sy = oy - v0[f, 1]
            sz = oz - v0[f, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * az - sz * ay
            qy = sz * ax - sx * az
            qz = sx * ay - sy * ax
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (bx * qx + by * qy + bz * qz) * inv
            if t > tmin and t < best:
                best = t
                bi = f
        idx[r] = bi
        dist[r] = best
    return idx, dist


def _tri_arrays(patches: PatchSet):
    tri = patches.triangles
    v0 = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
    e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
    return v0, e1, e2


def trace(origins, directions, patches: PatchSet, tmin: float = EPS):
    """First hit of every ray.

    Returns ``(patch_index, distance)``; misses get index ``-1`` and
    distance ``inf``.  Exact distance ties go to the lower patch index.
    """
    o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    if patches.n_patches == 0 or o.shape[0] == 0:
        return np.full(o.shape[0], -1, dtype=np.int64), np.full(o.shape[0], np.inf)
    v0, e1, e2 = _tri_arrays(patches)
    return _first_hits(o, d, v0, e1, e2, float(tmin))


def intersect_first(origin, direction, patches: PatchSet, grid: DirectionGrid | None = None):
    """Nearest hit farther than :data:`EPS`, or ``None`` when the ray escapes."""
    direction = np.asarray(direction, dtype=np.float64)
    idx, dist = trace(origin, direction, patches)
    if idx[0] < 0:
        return None
    h = int(idx[0])
    point = np.asarray(origin, dtype=np.float64) + dist[0] * direction
    b = -1
    if grid is not None:
        b = int(grid.classify_local(patches.frames[h] @ (-direction)))
    return Hit(h, point, float(dist[0]), b)


def visible_many(a, b, patches: PatchSet) -> np.ndarray:
    """Vectorized :func:`visible` over matching rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    seg = b - a
    length = np.linalg.norm(seg, axis=1)
    if np.any(length <= 0):
        raise ValueError("visibility needs two distinct points")
    idx, dist = trace(a, seg / length[:, None], patches)
    return (idx < 0) | (dist >= length - EPS)


def visible(a, b, patches: PatchSet) -> bool:
    """True when no patch cuts the open segment between ``a`` and ``b``."""
    return bool(visible_many(a, b, patches)[0])


def sample_patch_points(triangle, K: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered-grid points on a triangle.

    A ``m x m`` grid (``m = ceil(sqrt(K))``) is laid over the parallelogram
    spanned by the first two edges; samples landing in the far half are
    mirrored back into the triangle.  ``K = 1`` returns the centroid.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    tri = np.asarray(triangle, dtype=np.float64)
    if K == 1:
        return tri.mean(axis=0, keepdims=True)
    m = math.ceil(math.sqrt(K))
    cells = np.arange(m * m)
    if K < m * m:
        cells = np.sort(rng.permutation(m * m)[:K])
    jitter = rng.random((K, 2))
    s = (cells // m + jitter[:, 0]) / m
    t = (cells % m + jitter[:, 1]) / m
    flip = s + t > 1.0
    s = np.where(flip, 1.0 - s, s)
    t = np.where(flip, 1.0 - t, t)
    return tri[0] + s[:, None] * (tri[1] - tri[0]) + t[:, None] * (tri[2] - tri[0])


def stratum_counts(n_dir: int, M: int, rng: np.random.Generator) -> np.ndarray:
    counts = np.full(n_dir, M // n_dir, dtype=np.int64)
    extra = M % n_dir
    if extra:
        counts[np.sort(rng.permutation(n_dir)[:extra])] += 1
    return counts


def sample_directions_stratified(grid: DirectionGrid, M: int, rng: np.random.Generator,
                                 frame=None):
    """Stratified unit vectors: ``M // N_dir`` per bin, remainder on seeded bins.

    Samples are uniform in each bin's ``(z, phi)`` rectangle, which is uniform
    in solid angle.  Returns ``(directions, bins)`` with directions in world
    coordinates when ``frame`` (rows ``t1, t2, n``) is given, local otherwise.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    counts = stratum_counts(grid.n_dir, M, rng)
    bins = np.repeat(np.arange(grid.n_dir), counts)
    ke, ka = grid.split(bins)
    # keep samples off the bin boundaries so they classify back unambiguously
    u = np.clip(rng.random((M, 2)), 1e-9, 1.0 - 1e-9)
    z = 1.0 - 2.0 * (ke + u[:, 0]) / grid.n_ele
    phi = (ka + u[:, 1]) * (2.0 * np.pi / grid.n_azi)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if frame is None:
        return local, bins
    return local @ np.asarray(frame, dtype=np.float64), bins
