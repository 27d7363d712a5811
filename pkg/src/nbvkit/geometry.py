"""Triangle meshes with BVH-accelerated ray, inside/outside and distance queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _bvh
from .errors import ContractViolation, InvalidInputError, MeshFormatError

# fixed parity direction, deliberately off every axis and diagonal
INSIDE_DIRECTION = np.array([0.5773, 0.5774, 0.5775]) / np.linalg.norm([0.5773, 0.5774, 0.5775])
JITTER_SEED = 7919
MAX_JITTER_RETRIES = 3


class _BVH:
    __slots__ = ("lo", "hi", "left", "right", "start", "count", "order", "tri")

    def __init__(self, vertices, faces):
        tri = np.ascontiguousarray(vertices[faces], dtype=np.float64)
        lo, hi, left, right, start, count, order = _bvh.build_bvh(tri)
        self.lo, self.hi, self.left, self.right = lo, hi, left, right
        self.start, self.count, self.order = start, count, order
        self.tri = np.ascontiguousarray(tri[order])

    @property
    def nodes(self):
        return (self.lo, self.hi, self.left, self.right, self.start, self.count, self.tri)


class TriangleMesh:
    """Indexed triangle mesh with outward per-face normals.

    The BVH is built lazily on the first query and the mesh is treated as
    immutable afterwards, so concurrent read-only queries are safe.
    """

    def __init__(self, vertices, faces, orient=True):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) == 0 or len(vertices) == 0:
            raise InvalidInputError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise InvalidInputError("face index out of range")
        self.vertices = vertices
        self.faces = faces
        self.watertight = _edge_census(faces)
        if orient and self.watertight and self._signed_volume() < 0:
            self.faces = np.ascontiguousarray(faces[:, ::-1])
        self.normals, self.areas = _face_normals(self.vertices, self.faces)
        self._bvh = None

    def __repr__(self):
        return (f"TriangleMesh(vertices={len(self.vertices)}, faces={len(self.faces)}, "
                f"watertight={self.watertight})")

    def _signed_volume(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    @property
    def bvh(self):
        if self._bvh is None:
            self._bvh = _BVH(self.vertices, self.faces)
        return self._bvh

    @property
    def area(self):
        return float(self.areas.sum())

    @property
    def volume(self):
        return abs(self._signed_volume())

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def scale(self):
        """Bounding-box diagonal, used to size tolerances."""
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def translated(self, offset):
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=float), self.faces, orient=False)

    def transformed(self, rotation, offset=(0.0, 0.0, 0.0)):
        v = self.vertices @ np.asarray(rotation, dtype=float).T + np.asarray(offset, dtype=float)
        return TriangleMesh(v, self.faces, orient=False)

    def normalized(self):
        """Centre the bounding box at the origin and scale it into the unit cube."""
        lo, hi = self.bounds
        extent = float((hi - lo).max())
        if extent <= 0:
            raise InvalidInputError("mesh has zero extent")
        return TriangleMesh((self.vertices - (lo + hi) / 2) / extent, self.faces, orient=False)

    # queries on the original face numbering -----------------------------

    def _face_id(self, bvh_index):
        out = np.where(bvh_index >= 0, self.bvh.order[np.maximum(bvh_index, 0)], -1)
        return out

    def intersect(self, origins, directions, t_min=0.0, t_max=np.inf):
        """Nearest hit distance and face index per ray (inf / -1 on a miss)."""
        o = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
        o, d = np.broadcast_arrays(o, d)
        n = len(o)
        tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)).copy()
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
        t, f = _bvh.intersect_first(*self.bvh.nodes, np.ascontiguousarray(o),
                                    np.ascontiguousarray(d), tmin, tmax)
        return t, self._face_id(f)

    def occluded(self, origins, directions, t_min, t_max):
        """True where a segment [t_min, t_max] along the ray touches the surface."""
        o = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
        o, d = np.broadcast_arrays(o, d)
        n = len(o)
        tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)).copy()
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
        return _bvh.intersect_any(*self.bvh.nodes, np.ascontiguousarray(o),
                                  np.ascontiguousarray(d), tmin, tmax)

    def contains(self, points):
        """Vectorised ray-parity inside test; requires a watertight mesh."""
        if not self.watertight:
            raise ContractViolation("inside/outside queries need a watertight mesh")
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        counts, grazing = _bvh.count_crossings(*self.bvh.nodes, pts, INSIDE_DIRECTION)
        inside = (counts % 2) == 1
        if grazing.any():
            idx = np.flatnonzero(grazing)
            votes = [inside[idx]]
            rng = np.random.default_rng(JITTER_SEED)
            for _ in range(MAX_JITTER_RETRIES):
                d = INSIDE_DIRECTION + rng.normal(scale=0.05, size=3)
                d /= np.linalg.norm(d)
                c, g = _bvh.count_crossings(*self.bvh.nodes, pts[idx], d)
                votes.append((c % 2) == 1)
                clean = ~g
                inside[idx[clean]] = votes[-1][clean]
                idx, votes = idx[g], [v[g] for v in votes]
                if len(idx) == 0:
                    break
            if len(idx):
                inside[idx] = np.mean(votes, axis=0) > 0.5
        return inside

    def closest(self, points, max_dist=np.inf):
        """Distance, foot point and face index of the nearest surface point.

        Points farther than ``max_dist`` from the surface get inf / nan / -1.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        dist, foot, f = _bvh.closest_points(*self.bvh.nodes, pts, float(max_dist))
        return dist, foot, self._face_id(f)

    def signed_distance(self, points, max_dist=np.inf):
        """Positive inside, negative outside; +-inf beyond ``max_dist``."""
        dist, _, _ = self.closest(points, max_dist)
        inside = self.contains(points)
        return np.where(inside, dist, -dist)


def _edge_census(faces):
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def _face_normals(vertices, faces):
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    cr = np.cross(b - a, c - a)
    norm = np.linalg.norm(cr, axis=1)
    normals = np.divide(cr, norm[:, None], out=np.zeros_like(cr), where=norm[:, None] > 0)
    return normals, 0.5 * norm


# -------------------------------------------------------------------------
# Rays


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InvalidInputError("ray direction must be a unit vector")
        if not (0.0 <= self.t_min < self.t_max):
            raise InvalidInputError("need 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, target, **kw):
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(target, dtype=float) - origin
        return cls(origin, d / np.linalg.norm(d), **kw)

    def at(self, t):
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    face_index: int
    normal: np.ndarray = field(repr=False)


def ray_intersect(mesh: TriangleMesh, ray: Ray) -> Hit | None:
    t, f = mesh.intersect(ray.origin, ray.direction, ray.t_min, ray.t_max)
    if f[0] < 0:
        return None
    return Hit(float(t[0]), ray.at(t[0]), int(f[0]), mesh.normals[f[0]].copy())


def point_inside(mesh: TriangleMesh, x) -> bool:
    return bool(mesh.contains(np.asarray(x, dtype=float).reshape(1, 3))[0])


def signed_distance(mesh: TriangleMesh, x) -> float:
    return float(mesh.signed_distance(np.asarray(x, dtype=float).reshape(1, 3))[0])


def sample_surface(mesh: TriangleMesh, n: int, seed: int | np.random.Generator):
    """Area-weighted uniform surface samples with *inward* unit normals.

    Returns ``(points, normals, face_ids)``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    total = mesh.areas.sum()
    if not total > 0:
        raise InvalidInputError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_ids = rng.choice(len(mesh.faces), size=n, p=mesh.areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.faces[face_ids, k]] for k in range(3))
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, -mesh.normals[face_ids], face_ids


# -------------------------------------------------------------------------
# File IO


def load_mesh(path, normalize: bool = False) -> TriangleMesh:
    """Read an OBJ or PLY (ascii / binary) triangle mesh."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, faces = _read_obj(path)
    elif suffix == ".ply":
        vertices, faces = _read_ply(path)
    else:
        raise MeshFormatError(f"unsupported extension {suffix!r}", path=path)
    if len(vertices) == 0 or len(faces) == 0:
        raise InvalidInputError(f"{path}: empty mesh")
    mesh = TriangleMesh(vertices, faces)
    return mesh.normalized() if normalize else mesh


def _read_obj(path):
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise MeshFormatError(str(exc), lineno, path) from None
                if len(vertices[-1]) != 3:
                    raise MeshFormatError("vertex needs 3 coordinates", lineno, path)
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshFormatError(f"bad face index {tok!r}", lineno, path) from None
                    if i == 0:
                        raise MeshFormatError("face index 0 in 1-based OBJ", lineno, path)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise MeshFormatError("face needs at least 3 vertices", lineno, path)
                if max(idx) >= len(vertices) or min(idx) < 0:
                    raise MeshFormatError("face index out of range", lineno, path)
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    return np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        header = []
        lineno = 0
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError("unterminated header", lineno, path)
            line = raw.decode("ascii", errors="replace").strip()
            header.append(line)
            if line == "end_header":
                break
        body = fh.read()
    if header[0] != "ply":
        raise MeshFormatError("missing 'ply' magic", 1, path)
    fmt = None
    elements = []
    for i, line in enumerate(header[1:], 2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshFormatError("property before element", i, path)
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise MeshFormatError(f"unknown type {tok[1]!r}", i, path)
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt == "ascii":
        return _ply_ascii(body, elements, lineno, path)
    if fmt in ("binary_little_endian", "binary_big_endian"):
        return _ply_binary(body, elements, "<" if fmt.endswith("little_endian") else ">", path)
    raise MeshFormatError(f"unknown format {fmt!r}", None, path)


def _ply_ascii(body, elements, header_lines, path):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    vertices = faces = None
    for name, n, props in elements:
        rows = []
        for _ in range(n):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise MeshFormatError("unexpected end of data", header_lines + pos + 1, path)
            try:
                rows.append([float(x) for x in lines[pos].split()])
            except ValueError:
                raise MeshFormatError("non-numeric token", header_lines + pos + 1, path) from None
            pos += 1
        if name == "vertex":
            names = [p[0] for p in props]
            cols = [names.index(c) for c in "xyz"]
            vertices = np.array([[r[c] for c in cols] for r in rows], dtype=float).reshape(-1, 3)
        elif name == "face":
            tris = []
            for k, r in enumerate(rows):
                cnt = int(r[0])
                idx = [int(v) for v in r[1:1 + cnt]]
                if cnt < 3 or len(idx) != cnt:
                    raise MeshFormatError("malformed face", header_lines + pos - n + k + 1, path)
                tris.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, cnt - 1))
            faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return _require(vertices, faces, path)


def _ply_binary(body, elements, endian, path):
    off = 0
    vertices = faces = None
    for name, n, props in elements:
        if all(len(p) == 2 for p in props):
            dt = np.dtype([(p[0], endian + p[1]) for p in props])
            arr = np.frombuffer(body, dtype=dt, count=n, offset=off)
            off += dt.itemsize * n
            if name == "vertex":
                vertices = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(float)
            continue
        # list properties: assume the common single-list face layout
        tris = []
        for _ in range(n):
            for p in props:
                if len(p) == 4:
                    ct = np.dtype(endian + p[2])
                    it = np.dtype(endian + p[3])
                    cnt = int(np.frombuffer(body, ct, 1, off)[0])
                    off += ct.itemsize
                    idx = np.frombuffer(body, it, cnt, off).astype(np.int64)
                    off += it.itemsize * cnt
                    if name == "face" and p[0] in ("vertex_indices", "vertex_index"):
                        tris.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, cnt - 1))
                else:
                    off += np.dtype(p[1]).itemsize
        if name == "face":
            faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return _require(vertices, faces, path)


def _require(vertices, faces, path):
    if vertices is None:
        raise MeshFormatError("no vertex element", None, path)
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshFormatError("face index out of range", None, path)
    return vertices, faces


def save_obj(mesh: TriangleMesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def save_ply(path, points, faces=None, binary=True):
    """Write a point cloud (or mesh when ``faces`` is given) as PLY."""
    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(points)}", "property float x", "property float y",
              "property float z"]
    if faces is not None:
        faces = np.asarray(faces, dtype="<i4").reshape(-1, 3)
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(points.tobytes())
            if faces is not None:
                rec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = faces
                fh.write(rec.tobytes())
        else:
            for p in points:
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n".encode())
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode())


def merge_meshes(meshes) -> TriangleMesh:
    """Concatenate disjoint meshes into one scene mesh."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), orient=False)
