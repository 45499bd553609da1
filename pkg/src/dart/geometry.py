"""Room geometry: triangle meshes, patch subdivision and direction grids.

A room is described by a :class:`TriangleMesh`.  Before any transport
computation it is cut into small triangular patches (:class:`PatchSet`),
each carrying a local orthonormal frame in which the sphere of directions
is partitioned into equal solid-angle bins (:class:`DirectionGrid`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MeshError",
    "TriangleMesh",
    "PatchSet",
    "DirectionGrid",
    "load_mesh",
    "save_mesh",
    "subdivide",
    "build_direction_grid",
    "classify_direction",
]

_AREA_EPS = 1e-14
_PLANAR_TOL = 1e-9


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh content."""


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh with an object-group id per face."""

    vertices: np.ndarray  # (V, 3) float64, meters
    faces: np.ndarray  # (F, 3) int64, zero-based
    face_group: np.ndarray  # (F,) int64
    group_names: tuple = ("default",)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        g = np.asarray(self.face_group, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "face_group", g)
        if g.shape[0] != f.shape[0]:
            raise MeshError("face_group must have one entry per face")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            bad = int(np.flatnonzero((f < 0).any(1) | (f >= v.shape[0]).any(1))[0])
            raise MeshError(f"face {bad} references a vertex index out of range "
                            f"(mesh has {v.shape[0]} vertices)")
        areas = self.face_areas()
        degenerate = np.flatnonzero(areas <= _AREA_EPS)
        if degenerate.size:
            raise MeshError(f"degenerate faces (zero area): {degenerate.tolist()}")

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(0), self.vertices.max(0)


@dataclass(frozen=True)
class PatchSet:
    """Triangular surface patches with per-patch frames and group ids.

    ``frames[i]`` stores the rows ``(t1, t2, n)``: two tangent axes and the
    unit normal of patch ``i``.  Triangles cut from the same parallelogram
    share the frame of that parallelogram.
    """

    triangles: np.ndarray  # (N, 3, 3)
    frames: np.ndarray  # (N, 3, 3)
    group: np.ndarray  # (N,)
    parent: np.ndarray  # (N,) index of the source parallelogram / triangle
    group_names: tuple = ("default",)
    areas: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)

    def __post_init__(self):
        tri = np.ascontiguousarray(self.triangles, dtype=np.float64).reshape(-1, 3, 3)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "frames", np.ascontiguousarray(self.frames, dtype=np.float64))
        object.__setattr__(self, "group", np.asarray(self.group, dtype=np.int64))
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.int64))
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        if np.any(areas <= _AREA_EPS):
            raise MeshError("patch set contains degenerate triangles")
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "normals", np.ascontiguousarray(self.frames[:, 2]))

    @classmethod
    def from_triangles(cls, triangles, group=None, group_names=None) -> "PatchSet":
        """Wrap raw triangles; each frame's first axis follows edge ``v0 -> v1``."""
        tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if np.any(0.5 * np.linalg.norm(cr, axis=1) <= _AREA_EPS):
            raise MeshError("patch set contains degenerate triangles")
        frames = np.stack([_frame_from_edges(t[1] - t[0], t[2] - t[0]) for t in tri])
        n = tri.shape[0]
        group = np.zeros(n, dtype=np.int64) if group is None else np.asarray(group)
        if group_names is None:
            group_names = tuple(f"g{k}" for k in range(int(group.max()) + 1))
        return cls(tri, frames, group, np.arange(n), tuple(group_names))

    @property
    def n_patches(self) -> int:
        return self.triangles.shape[0]

    @property
    def centroids(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    def total_area(self) -> float:
        return float(self.areas.sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.triangles.reshape(-1, 3)
        return pts.min(0), pts.max(0)

    def groups(self) -> list[np.ndarray]:
        """Patch indices of every group, in group-id order (empty groups skipped)."""
        return [np.flatnonzero(self.group == g) for g in np.unique(self.group)]


@dataclass(frozen=True)
class DirectionGrid:
    """Equal solid-angle partition of the sphere into ``n_ele * n_azi`` bins.

    Bins are indexed ``k = k_ele * n_azi + k_azi``.  In a patch's local frame
    elevation bin ``k_ele`` covers ``z = cos(theta)`` in
    ``(1 - 2 (k_ele + 1) / n_ele, 1 - 2 k_ele / n_ele]`` and azimuth bin ``k_azi``
    covers ``phi`` in ``[2 pi k_azi / n_azi, 2 pi (k_azi + 1) / n_azi)``.
    A direction lying on a boundary belongs to the bin that starts there.
    """

    n_ele: int
    n_azi: int

    def __post_init__(self):
        if self.n_ele < 1 or self.n_azi < 1:
            raise ValueError("n_ele and n_azi must be >= 1")

    @property
    def n_dir(self) -> int:
        return self.n_ele * self.n_azi

    @property
    def z_edges(self) -> np.ndarray:
        return 1.0 - 2.0 * np.arange(self.n_ele + 1) / self.n_ele

    @property
    def phi_edges(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_azi + 1) / self.n_azi

    @property
    def solid_angle(self) -> float:
        """Solid angle of every bin (they are all equal)."""
        return 4.0 * np.pi / self.n_dir

    def solid_angles(self) -> np.ndarray:
        """Per-bin solid angle computed from the bin boundaries."""
        dz = -np.diff(self.z_edges)
        dphi = np.diff(self.phi_edges)
        return np.outer(dz, dphi).ravel()

    def projected_solid_angles(self) -> np.ndarray:
        """Exact ``\\int_bin |cos theta| dOmega`` for every bin."""
        z = self.z_edges
        za, zb = z[:-1], z[1:]
        # integral of |z| dz over [zb, za]
        lo = np.abs(zb) * zb
        hi = np.abs(za) * za
        per_ele = 0.5 * (hi - lo)
        return np.repeat(per_ele * (2.0 * np.pi / self.n_azi), self.n_azi)

    def split(self, k):
        k = np.asarray(k)
        return k // self.n_azi, k % self.n_azi

    def bin_centers_local(self) -> np.ndarray:
        """Unit vectors at the (z, phi) centre of each bin, local coordinates."""
        ke, ka = self.split(np.arange(self.n_dir))
        z = 1.0 - 2.0 * (ke + 0.5) / self.n_ele
        phi = (ka + 0.5) * 2.0 * np.pi / self.n_azi
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)

    def bin_centers(self, frame) -> np.ndarray:
        """Bin-centre directions in world coordinates for a frame ``(t1, t2, n)``."""
        return self.bin_centers_local() @ np.asarray(frame)

    def classify_local(self, local) -> np.ndarray:
        """Bin index of unit vectors given in local coordinates."""
        local = np.asarray(local, dtype=np.float64)
        z = np.clip(local[..., 2], -1.0, 1.0)
        ke = np.floor((1.0 - z) * (0.5 * self.n_ele)).astype(np.int64)
        ke = np.clip(ke, 0, self.n_ele - 1)
        phi = np.arctan2(local[..., 1], local[..., 0])
        phi = np.where(phi < 0.0, phi + 2.0 * np.pi, phi)
        ka = np.floor(phi * (self.n_azi / (2.0 * np.pi))).astype(np.int64)
        ka = np.clip(ka, 0, self.n_azi - 1)
        return ke * self.n_azi + ka

    def front(self) -> np.ndarray:
        """Boolean mask of bins on the normal side (``z > 0``); needs even ``n_ele``."""
        ke, _ = self.split(np.arange(self.n_dir))
        return ke < self.n_ele // 2


def build_direction_grid(n_ele: int, n_azi: int) -> DirectionGrid:
    return DirectionGrid(int(n_ele), int(n_azi))


def classify_direction(direction, frame, grid: DirectionGrid) -> np.ndarray:
    """Bin of world-space unit vector(s) ``direction`` in a patch frame."""
    local = np.asarray(direction, dtype=np.float64) @ np.asarray(frame).T
    return grid.classify_local(local)


# --------------------------------------------------------------------------
# mesh file I/O


def load_mesh(path) -> TriangleMesh:
    """Read the line-oriented mesh format.

    ``v x y z`` declares a vertex, ``f i j k [l]`` a triangle or planar quad
    (1-based indices) and ``g name`` starts a group for the faces that
    follow.  ``#`` starts a comment.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    groups: list[int] = []
    names: dict[str, int] = {}
    current = None
    face_lines: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            try:
                if tag == "v":
                    if len(rest) != 3:
                        raise ValueError("expected 3 coordinates")
                    verts.append([float(x) for x in rest])
                elif tag == "f":
                    idx = [int(tok.split("/")[0]) for tok in rest]
                    if len(idx) not in (3, 4):
                        raise ValueError("faces must have 3 or 4 vertices")
                    if any(i < 1 for i in idx):
                        raise ValueError("vertex indices are 1-based")
                    if current is None:
                        current = names.setdefault("default", len(names))
                    idx = [i - 1 for i in idx]
                    if len(idx) == 4:
                        faces.extend([idx[:3], [idx[0], idx[2], idx[3]]])
                        groups.extend([current, current])
                        face_lines.extend([lineno, lineno])
                        _check_quad(verts, idx, lineno)
                    else:
                        faces.append(idx)
                        groups.append(current)
                        face_lines.append(lineno)
                elif tag == "g":
                    name = " ".join(rest) if rest else f"group{len(names)}"
                    current = names.setdefault(name, len(names))
                else:
                    raise ValueError(f"unknown record type {tag!r}")
            except MeshError:
                raise
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{lineno}: {exc}") from None
    nv = len(verts)
    for fi, (face, ln) in enumerate(zip(faces, face_lines)):
        if max(face) >= nv:
            raise MeshError(f"{path}:{ln}: face {fi} index {max(face) + 1} out of range "
                            f"(only {nv} vertices)")
    if not names:
        names = {"default": 0}
    ordered = tuple(sorted(names, key=names.get))
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3),
                        np.array(groups, dtype=np.int64), ordered)


def _check_quad(verts, idx, lineno):
    if max(idx) >= len(verts):
        raise MeshError(f"line {lineno}: quad index out of range")
    p = np.array([verts[i] for i in idx])
    n = np.cross(p[1] - p[0], p[2] - p[0])
    nn = np.linalg.norm(n)
    scale = max(np.ptp(p, axis=0).max(), 1.0)
    if nn <= _AREA_EPS or abs(np.dot(p[3] - p[0], n / nn)) > _PLANAR_TOL * scale:
        raise MeshError(f"line {lineno}: non-planar quad")


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write a mesh in the same text format :func:`load_mesh` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        current = None
        for f, g in zip(mesh.faces, mesh.face_group):
            if g != current:
                fh.write(f"g {mesh.group_names[g]}\n")
                current = g
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# --------------------------------------------------------------------------
# subdivision


def _frame_from_edges(u, v):
    t1 = u / np.linalg.norm(u)
    n = np.cross(u, v)
    n /= np.linalg.norm(n)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n])


def _pair_parallelograms(mesh: TriangleMesh, tol: float):
    """Greedily merge triangle pairs that form a parallelogram.

    Returns a list of ``("para", origin, u, v, group)`` and
    ``("tri", a, b, c, group)`` primitives in face order.
    """
    V, F = mesh.vertices, mesh.faces
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, f in enumerate(F):
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            edge_faces.setdefault((min(a, b), max(a, b)), []).append(fi)
    used = np.zeros(len(F), dtype=bool)
    prims = []
    for fi, f in enumerate(F):
        if used[fi]:
            continue
        n_f = np.cross(V[f[1]] - V[f[0]], V[f[2]] - V[f[0]])
        scale = max(np.ptp(V[f], axis=0).max(), 1e-12)
        partner = None
        for a, b, c in ((f[0], f[1], f[2]), (f[1], f[2], f[0]), (f[2], f[0], f[1])):
            key = (min(a, b), max(a, b))
            for gi in edge_faces[key]:
                if gi <= fi or used[gi] or mesh.face_group[gi] != mesh.face_group[fi]:
                    continue
                d = [x for x in F[gi] if x != a and x != b]
                if len(d) != 1:
                    continue
                d = d[0]
                # diagonal (a, b) is shared; c and d are the opposite corners
                if np.linalg.norm(V[a] + V[b] - V[c] - V[d]) <= tol * scale:
                    partner = (gi, c, a, b)
                    break
            if partner is not None:
                break
        if partner is None:
            prims.append(("tri", V[f[0]], V[f[1]], V[f[2]], mesh.face_group[fi]))
            used[fi] = True
            continue
        gi, c, a, b = partner
        used[fi] = used[gi] = True
        origin = V[c]
        u, v = V[a] - origin, V[b] - origin
        if np.dot(np.cross(u, v), n_f) < 0:
            u, v = v, u
        prims.append(("para", origin, u, v, mesh.face_group[fi]))
    return prims


def subdivide(mesh: TriangleMesh, max_edge: float, tol: float = 1e-9) -> PatchSet:
    """Cut a mesh into triangular patches whose grid edges do not exceed ``max_edge``.

    Triangle pairs forming a parallelogram are merged, cut into a grid of
    sub-parallelograms and every cell is split into four triangles meeting at
    its centre.  Triangles without a parallelogram partner are split into
    ``n * n`` similar triangles.  Patches keep the group of their source face.
    """
    if not max_edge > 0:
        raise ValueError("max_edge must be positive")
    tris, frames, groups, parents = [], [], [], []
    for pi, prim in enumerate(_pair_parallelograms(mesh, tol)):
        kind, p0, p1, p2, grp = prim
        if kind == "para":
            origin, u, v = p0, p1, p2
            nu = max(1, math.ceil(np.linalg.norm(u) / max_edge - 1e-9))
            nv = max(1, math.ceil(np.linalg.norm(v) / max_edge - 1e-9))
            frame = _frame_from_edges(u, v)
            du, dv = u / nu, v / nv
            for a in range(nu):
                for b in range(nv):
                    o = origin + a * du + b * dv
                    c = o + 0.5 * (du + dv)
                    corners = (o, o + du, o + du + dv, o + dv)
                    for q in range(4):
                        tris.append((corners[q], corners[(q + 1) % 4], c))
                        frames.append(frame)
                        groups.append(grp)
                        parents.append(pi)
        else:
            a, b, c = p0, p1, p2
            longest = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
            n = max(1, math.ceil(longest / max_edge - 1e-9))
            frame = _frame_from_edges(b - a, c - a)
            e1, e2 = (b - a) / n, (c - a) / n
            for s in range(n):
                for t in range(n - s):
                    o = a + s * e1 + t * e2
                    tris.append((o, o + e1, o + e2))
                    frames.append(frame)
                    groups.append(grp)
                    parents.append(pi)
                    if s + t < n - 1:
                        tris.append((o + e1, o + e1 + e2, o + e2))
                        frames.append(frame)
                        groups.append(grp)
                        parents.append(pi)
    return PatchSet(np.array(tris), np.array(frames), np.array(groups),
                    np.array(parents), tuple(mesh.group_names))
