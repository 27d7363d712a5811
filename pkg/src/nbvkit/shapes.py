"""Analytic test solids with closed-form surface area and volume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import TriangleMesh, merge_meshes


@dataclass
class AnalyticShape:
    kind: str
    params: dict
    area: float
    volume: float
    mesh: TriangleMesh = field(repr=False)

    @property
    def reach(self) -> float:
        """Largest inward offset for which the normal map stays injective."""
        if self.kind == "sphere":
            return self.params["radius"]
        if self.kind == "torus":
            return self.params["minor"]
        return self.params["edge_radius"]

    def transformed(self, rotation, offset):
        """Same solid after a rigid motion (area and volume unchanged)."""
        return AnalyticShape(self.kind, dict(self.params), self.area, self.volume,
                             self.mesh.transformed(rotation, offset))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = np.array(f, dtype=np.int64)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new, dtype=np.int64)
    return TriangleMesh(np.array(verts) * radius, faces)


def torus_mesh(major: float, minor: float, n_major: int = 96, n_minor: int = 48) -> TriangleMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], -1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i2, j2 = (i + 1) % n_major, (j + 1) % n_minor
    a, b = i * n_minor + j, i2 * n_minor + j
    c, d = i2 * n_minor + j2, i * n_minor + j2
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                            np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(verts, faces)


def _face_grid(n_flat, n_round, half, radius):
    """Coordinates along one box axis: uniform on the flat part, uniform in angle on the rounds."""
    flat = np.linspace(-half, half, n_flat + 1)
    ang = np.linspace(0, np.pi / 4, n_round + 1)[1:]
    ext = half + radius * np.tan(ang)
    return np.concatenate([-ext[::-1], flat, ext])


def rounded_cube_mesh(side: float, edge_radius: float, n_flat: int = 24, n_round: int = 8) -> TriangleMesh:
    """Cube of the given side with edges and corners rounded (cube minus-offset, plus ball)."""
    half = side / 2 - edge_radius
    coords = _face_grid(n_flat, n_round, half, edge_radius)
    outer = half + edge_radius
    n = len(coords)
    g0, g1 = np.meshgrid(coords, coords, indexing="ij")
    verts, faces = [], []
    # one grid per box face, wound outward; shared borders are welded below
    for axis in range(3):
        for sign in (-1.0, 1.0):
            p = np.empty((n, n, 3))
            a1, a2 = [k for k in range(3) if k != axis]
            p[..., axis] = sign * outer
            p[..., a1] = g0
            p[..., a2] = g1
            # clamp box-surface points onto the rounded surface
            pc = p.reshape(-1, 3)
            inner = np.clip(pc, -half, half)
            # box border points are at the outer extent on several axes
            dirv = pc - inner
            for k in range(3):
                if k != axis:
                    over = np.abs(pc[:, k]) > half
                    # extended coordinate encodes an angle on the round
                    ang = np.arctan((np.abs(pc[:, k]) - half) / edge_radius)
                    dirv[:, k] = np.where(over, np.sign(pc[:, k]) * np.tan(ang), 0.0)
            dirv[:, axis] = sign
            dirv /= np.linalg.norm(dirv, axis=1, keepdims=True)
            q = inner + edge_radius * dirv
            base = len(np.concatenate(verts)) if verts else 0
            verts.append(q)
            i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
            a = base + i * n + j
            b = base + (i + 1) * n + j
            c = base + (i + 1) * n + j + 1
            d = base + i * n + j + 1
            quads = np.stack([a, b, c, d], -1).reshape(-1, 4)
            # (a1, a2, axis) is right-handed for axis 0 and 2 with sign +1
            flip = (sign > 0) != (axis == 1)
            if flip:
                tri = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
            else:
                tri = np.concatenate([quads[:, [0, 2, 1]], quads[:, [0, 3, 2]]])
            faces.append(tri)
    v = np.concatenate(verts)
    f = np.concatenate(faces)
    key = np.round(v / (side * 1e-9)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    v = v[first]
    f = inverse.reshape(-1)[f]
    return TriangleMesh(v, f)


def make_analytic(kind: str, params: dict | None = None, resolution: int | None = None) -> AnalyticShape:
    """Build a sphere, torus or rounded cube with its exact area and volume.

    ``resolution`` scales tessellation density (icosphere subdivision level for
    spheres, ring count for the torus, flat-face cells for the rounded cube).
    """
    params = dict(params or {})
    if kind == "sphere":
        r = float(params.setdefault("radius", 1.0))
        if not r > 0:
            raise InvalidInputError("sphere radius must be > 0")
        mesh = icosphere(4 if resolution is None else int(resolution), r)
        return AnalyticShape(kind, params, 4 * math.pi * r * r, 4 / 3 * math.pi * r ** 3, mesh)
    if kind == "torus":
        R = float(params.setdefault("major", 1.0))
        r = float(params.setdefault("minor", 0.3))
        if not R > r > 0:
            raise InvalidInputError("torus needs major > minor > 0")
        n = 96 if resolution is None else int(resolution)
        mesh = torus_mesh(R, r, n, max(8, n // 2))
        return AnalyticShape(kind, params, 4 * math.pi ** 2 * R * r, 2 * math.pi ** 2 * R * r * r, mesh)
    if kind in ("rounded-cube", "rounded_cube"):
        s = float(params.setdefault("side", 1.0))
        r = float(params.setdefault("edge_radius", 0.1))
        if not (r > 0 and s > 2 * r):
            raise InvalidInputError("rounded cube needs side > 2*edge_radius > 0")
        a = s - 2 * r
        n = 24 if resolution is None else int(resolution)
        mesh = rounded_cube_mesh(s, r, n, max(4, n // 3))
        area = 6 * a * a + 6 * math.pi * a * r + 4 * math.pi * r * r
        volume = a ** 3 + 6 * a * a * r + 3 * math.pi * a * r * r + 4 / 3 * math.pi * r ** 3
        return AnalyticShape("rounded-cube", params, area, volume, mesh)
    raise InvalidInputError(f"unknown analytic shape {kind!r}")


def box_mesh(lo, hi) -> TriangleMesh:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
                  [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    f = [[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
         [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7]]
    return TriangleMesh(v, f)


def room_mesh(half: float = 2.0) -> TriangleMesh:
    """Closed empty room: a box seen from the inside (inward-facing walls).

    The solid is the complement of the box, so only points outside the
    room's walls count as occupied.
    """
    box = box_mesh([-half] * 3, [half] * 3)
    return TriangleMesh(box.vertices, box.faces[:, ::-1], orient=False)


def desk_scene() -> TriangleMesh:
    """Small tabletop scene: slab, four legs, a sphere, a torus and a rounded box.

    Components are disjoint, so the union stays a valid watertight scene.
    """
    parts = [box_mesh([-1.0, -0.6, 0.70], [1.0, 0.6, 0.76])]
    for x in (-0.9, 0.9):
        for y in (-0.5, 0.5):
            parts.append(box_mesh([x - 0.04, y - 0.04, 0.0], [x + 0.04, y + 0.04, 0.69]))
    parts.append(icosphere(3, 0.15).translated([-0.5, 0.1, 0.92]))
    parts.append(torus_mesh(0.18, 0.06, 48, 16).translated([0.35, -0.2, 0.83]))
    parts.append(rounded_cube_mesh(0.3, 0.05, 6, 3).translated([0.5, 0.3, 0.92]))
    parts.append(box_mesh([-0.15, -0.45, 0.77], [0.05, -0.25, 1.15]))
    return merge_meshes(parts)


def sample_mesh(name: str = "blob") -> TriangleMesh:
    """One of the meshes shipped with the package (regenerate with tools/make_sample_mesh.py)."""
    from importlib.resources import files
    from .geometry import load_mesh

    path = files("nbvkit") / "data" / f"{name}.obj"
    if not path.is_file():
        raise InvalidInputError(f"no shipped mesh named {name!r}")
    return load_mesh(str(path))
