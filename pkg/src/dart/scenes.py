"""Small procedural scenes used by tests, demos and the CLI."""
from __future__ import annotations

import numpy as np

from .geometry import PatchSet, TriangleMesh


class _Builder:
    def __init__(self):
        self.verts, self.faces, self.groups, self.names = [], [], [], {}

    def rect(self, origin, u, v, group: str):
        """Rectangle ``origin + s u + t v``; its normal is ``u x v``."""
        o, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))
        base = len(self.verts)
        self.verts += [o, o + u, o + u + v, o + v]
        g = self.names.setdefault(group, len(self.names))
        self.faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
        self.groups += [g, g]

    def mesh(self) -> TriangleMesh:
        names = tuple(sorted(self.names, key=self.names.get))
        return TriangleMesh(np.array(self.verts), np.array(self.faces), np.array(self.groups), names)


def box_mesh(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), groups: str = "wall") -> TriangleMesh:
    """Closed box with inward-facing normals.

    ``groups="wall"`` gives every face its own group, ``"single"`` puts the
    whole box in one group.
    """
    lx, ly, lz = size
    o = np.asarray(origin, dtype=np.float64)
    ex, ey, ez = np.eye(3)
    b = _Builder()
    name = (lambda s: s) if groups == "wall" else (lambda s: "room")
    b.rect(o, lx * ex, ly * ey, name("floor"))
    b.rect(o + lz * ez, ly * ey, lx * ex, name("ceiling"))
    b.rect(o, lz * ez, lx * ex, name("wall_south"))
    b.rect(o + ly * ey, lx * ex, lz * ez, name("wall_north"))
    b.rect(o, ly * ey, lz * ez, name("wall_west"))
    b.rect(o + lx * ex, lz * ez, ly * ey, name("wall_east"))
    return b.mesh()


def two_room_mesh(room_a=(3.0, 4.0), room_b=(2.0, 4.0), height=2.5,
                  door=(1.5, 2.5, 2.0)) -> TriangleMesh:
    """Two rooms side by side sharing a partition wall with a doorway.

    ``door = (y0, y1, door_height)`` cuts the opening in the partition at
    ``x = room_a[0]``.  Walls get one group each.
    """
    ax, ay = room_a
    bx, by = room_b
    if abs(ay - by) > 1e-12:
        raise ValueError("rooms must have the same depth")
    y0, y1, hd = door
    L = ax + bx
    ex, ey, ez = np.eye(3)
    h = height
    b = _Builder()
    for x0, w, tag in ((0.0, ax, "a"), (ax, bx, "b")):
        o = np.array([x0, 0.0, 0.0])
        b.rect(o, w * ex, ay * ey, f"floor_{tag}")
        b.rect(o + h * ez, ay * ey, w * ex, f"ceiling_{tag}")
        b.rect(o, h * ez, w * ex, f"wall_south_{tag}")
        b.rect(o + ay * ey, w * ex, h * ez, f"wall_north_{tag}")
    b.rect(np.zeros(3), ay * ey, h * ez, "wall_west")
    b.rect(np.array([L, 0.0, 0.0]), h * ez, ay * ey, "wall_east")
    px = np.array([ax, 0.0, 0.0])
    # partition pieces around the doorway (normal +x)
    b.rect(px, y0 * ey, h * ez, "partition")
    b.rect(px + y1 * ey, (ay - y1) * ey, h * ez, "partition")
    if hd < h:
        b.rect(px + y0 * ey + hd * ez, (y1 - y0) * ey, (h - hd) * ez, "partition")
    return b.mesh()


def facing_squares(size: float = 1.0, gap: float = 1.0) -> TriangleMesh:
    """Two parallel squares ``gap`` apart with normals pointing at each other."""
    ex, ey, ez = np.eye(3)
    b = _Builder()
    b.rect(np.zeros(3), size * ex, size * ey, "bottom")
    b.rect(gap * ez, size * ey, size * ex, "top")
    return b.mesh()


def facing_triangles(size: float = 1.0, gap: float = 1.0) -> PatchSet:
    """Two congruent triangles facing each other, each its own group."""
    lower = np.array([[0.0, 0.0, 0.0], [size, 0.0, 0.0], [0.0, size, 0.0]])
    upper = np.array([[0.0, 0.0, gap], [0.0, size, gap], [size, 0.0, gap]])
    return PatchSet.from_triangles(np.stack([lower, upper]), group=[0, 1], group_names=("lower", "upper"))
