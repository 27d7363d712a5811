"""Simulated depth sensor: poses, intrinsics, ray-cast depth maps and the cell-partitioned cloud."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .geometry import TriangleMesh, save_ply

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SensorIntrinsics:
    width: int = 64
    height: int = 48
    fov_x: float = math.radians(60.0)
    fov_y: float = math.radians(45.0)
    min_range: float = 0.05
    max_range: float = 10.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be >= 1")
        for name in ("fov_x", "fov_y"):
            v = getattr(self, name)
            if not 0 < v < math.pi:
                raise InvalidInputError(f"{name} must lie in (0, pi)")
        if not 0 < self.min_range < self.max_range:
            raise InvalidInputError("need 0 < min_range < max_range")

    @classmethod
    def square(cls, size, fov_deg, min_range=0.05, max_range=10.0):
        f = math.radians(fov_deg)
        return cls(size, size, f, f, min_range, max_range)

    @cached_property
    def pixel_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame through pixel centres, shape (H*W, 3)."""
        tx = math.tan(self.fov_x / 2)
        ty = math.tan(self.fov_y / 2)
        u = ((np.arange(self.width) + 0.5) / self.width * 2 - 1) * tx
        v = ((np.arange(self.height) + 0.5) / self.height * 2 - 1) * ty
        vv, uu = np.meshgrid(v, u, indexing="ij")
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class CameraPose:
    """Camera position and rotation; rotation columns are the camera's
    right, down and forward axes expressed in world coordinates."""

    position: np.ndarray
    rotation: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise InvalidInputError("rotation must be in SO(3)")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)

    @property
    def forward(self):
        return self.rotation[:, 2]

    @classmethod
    def look_at(cls, position, target, up=WORLD_UP, roll: float = 0.0):
        position = np.asarray(position, dtype=float)
        fwd = np.asarray(target, dtype=float) - position
        fwd /= np.linalg.norm(fwd)
        return cls.from_forward(position, fwd, up, roll)

    @classmethod
    def from_forward(cls, position, forward, up=WORLD_UP, roll: float = 0.0):
        fwd = np.asarray(forward, dtype=float)
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=float)
        if abs(fwd @ up) > 1 - 1e-9:
            up = np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        if roll:
            c, s = math.cos(roll), math.sin(roll)
            right, down = c * right + s * down, -s * right + c * down
        return cls(position, np.stack([right, down, fwd], axis=1))

    @classmethod
    def from_angles(cls, position, elevation: float, azimuth: float, roll: float = 0.0):
        """Camera at ``position`` looking along the (elevation, azimuth) direction, z up."""
        fwd = np.array([math.cos(elevation) * math.cos(azimuth),
                        math.cos(elevation) * math.sin(azimuth),
                        math.sin(elevation)])
        return cls.from_forward(position, fwd, WORLD_UP, roll)

    @classmethod
    def on_sphere(cls, center, radius: float, elevation: float, azimuth: float):
        """Camera on a sphere around ``center``, looking at it."""
        center = np.asarray(center, dtype=float)
        offset = radius * np.array([math.cos(elevation) * math.cos(azimuth),
                                    math.cos(elevation) * math.sin(azimuth),
                                    math.sin(elevation)])
        return cls.look_at(center + offset, center)

    def to_camera(self, points):
        return (np.atleast_2d(points) - self.position) @ self.rotation

    def to_dict(self):
        return {"position": self.position.tolist(), "rotation": self.rotation.tolist()}


def in_frustum(pose: CameraPose, intrinsics: SensorIntrinsics, points) -> np.ndarray:
    """Pyramidal frustum membership including the sensor's range limits."""
    pc = pose.to_camera(points)
    z = pc[:, 2]
    dist = np.linalg.norm(pc, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (z > 0) & (np.abs(pc[:, 0]) <= z * math.tan(intrinsics.fov_x / 2)) \
            & (np.abs(pc[:, 1]) <= z * math.tan(intrinsics.fov_y / 2))
    return ok & (dist >= intrinsics.min_range) & (dist <= intrinsics.max_range)


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W) metres, nan = no return
    pose: CameraPose
    intrinsics: SensorIntrinsics

    @property
    def valid(self):
        return np.isfinite(self.depth)

    def world_directions(self):
        return self.intrinsics.pixel_directions @ self.pose.rotation.T

    def to_pgm(self, path):
        """16-bit binary PGM, millimetres, 0 for no return."""
        mm = np.where(self.valid, np.round(np.nan_to_num(self.depth) * 1000), 0)
        data = np.clip(mm, 0, 65535).astype(">u2")
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(data.tobytes())


def render_depth(mesh: TriangleMesh | None, pose: CameraPose, intrinsics: SensorIntrinsics) -> DepthMap:
    """One ray per pixel centre; range-limited first-hit distance."""
    h, w = intrinsics.height, intrinsics.width
    if mesh is None:
        return DepthMap(np.full((h, w), np.nan), pose, intrinsics)
    dirs = intrinsics.pixel_directions @ pose.rotation.T
    t, _ = mesh.intersect(pose.position[None, :], dirs, 0.0, intrinsics.max_range)
    t = np.where((t >= intrinsics.min_range) & (t <= intrinsics.max_range), t, np.nan)
    return DepthMap(t.reshape(h, w), pose, intrinsics)


def backproject(depth_map: DepthMap) -> np.ndarray:
    d = depth_map.depth.reshape(-1)
    ok = np.isfinite(d)
    dirs = depth_map.world_directions()[ok]
    return depth_map.pose.position + d[ok, None] * dirs


# -------------------------------------------------------------------------
# Cloud store


def default_cell_size(bbox_lo, bbox_hi, max_range: float, max_cells: int = 128) -> float:
    extent = float(np.max(np.asarray(bbox_hi) - np.asarray(bbox_lo)))
    return max(2 * max_range / 32, extent / max_cells)


def default_eps_cloud(bbox_lo, bbox_hi) -> float:
    return 0.005 * float(np.linalg.norm(np.asarray(bbox_hi) - np.asarray(bbox_lo)))


@nb.njit(cache=True)
def _greedy_keep(n, pair_i, pair_j):
    """Keep points in input order, dropping any within range of an earlier kept one."""
    removed = np.zeros(n, dtype=np.bool_)
    keep = np.zeros(n, dtype=np.bool_)
    # pairs are sorted by i
    p = 0
    m = len(pair_i)
    for i in range(n):
        while p < m and pair_i[p] < i:
            p += 1
        if removed[i]:
            while p < m and pair_i[p] == i:
                p += 1
            continue
        keep[i] = True
        while p < m and pair_i[p] == i:
            removed[pair_j[p]] = True
            p += 1
    return keep


class CloudStore:
    """Accumulated partial point cloud partitioned into cubic cells.

    A new point enters only if no point already stored in the same cell lies
    within ``eps_cloud`` of it, so duplicates across cell borders are allowed.
    """

    def __init__(self, bbox_lo, bbox_hi, cell_size: float):
        self.lo = np.asarray(bbox_lo, dtype=float)
        self.hi = np.asarray(bbox_hi, dtype=float)
        if not np.all(self.hi > self.lo):
            raise InvalidInputError("degenerate bounding box")
        if not cell_size > 0:
            raise InvalidInputError("cell size must be > 0")
        self.cell_size = float(cell_size)
        self.shape = np.maximum(1, np.ceil((self.hi - self.lo) / self.cell_size).astype(np.int64))
        self.points = np.zeros((0, 3))
        self.keys = np.zeros((0, 3), dtype=np.int64)
        self.skipped = 0
        self._tree = None
        self._scales = {}

    def __len__(self):
        return len(self.points)

    def cell_of(self, points):
        ijk = np.floor((np.atleast_2d(points) - self.lo) / self.cell_size).astype(np.int64)
        return np.clip(ijk, 0, self.shape - 1)

    def inside_bbox(self, points):
        p = np.atleast_2d(points)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def _spread(self, points, keys):
        # cells pushed apart by one extra cell, so only same-cell pairs can be closer than a cell
        return points + 2.0 * keys * self.cell_size

    @property
    def cells(self) -> dict:
        out = {}
        for k, p in zip(map(tuple, self.keys), self.points):
            out.setdefault(k, []).append(p)
        return out

    def accumulate(self, points, eps_cloud: float) -> int:
        """Insert points in order under the per-cell distance rule; returns the number inserted."""
        if not eps_cloud > 0:
            raise InvalidInputError("eps_cloud must be > 0")
        if eps_cloud > self.cell_size:
            raise InvalidInputError("eps_cloud must not exceed the cell size")
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        inb = self.inside_bbox(pts)
        self.skipped += int((~inb).sum())
        pts = pts[inb]
        if len(pts) == 0:
            return 0
        keys = self.cell_of(pts)
        spread = self._spread(pts, keys)
        if len(self.points):
            if self._tree is None:
                self._tree = cKDTree(self._spread(self.points, self.keys))
            d, _ = self._tree.query(spread, k=1)
            fresh = d > eps_cloud
            pts, keys, spread = pts[fresh], keys[fresh], spread[fresh]
        if len(pts) == 0:
            return 0
        pairs = cKDTree(spread).query_pairs(eps_cloud, output_type="ndarray")
        if len(pairs):
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
            keep = _greedy_keep(len(pts), pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64))
        else:
            keep = np.ones(len(pts), dtype=bool)
        self.points = np.concatenate([self.points, pts[keep]])
        self.keys = np.concatenate([self.keys, keys[keep]])
        self._tree = None
        self._scales = {}
        return int(keep.sum())

    def downsampled(self, scale: int, base_voxel: float):
        """Voxel-grid subsample with voxel edge base_voxel * 2**(scale-1); scale 0 is the raw cloud.

        Per voxel the point nearest the voxel centre survives (lowest index on ties).
        """
        if scale == 0:
            return self.points, self.keys
        if scale not in self._scales:
            edge = base_voxel * 2 ** (scale - 1)
            vox = np.floor((self.points - self.lo) / edge)
            centre = self.lo + (vox + 0.5) * edge
            dist = np.linalg.norm(self.points - centre, axis=1)
            order = np.lexsort((np.arange(len(dist)), dist))
            _, first = np.unique(vox[order], axis=0, return_index=True)
            idx = np.sort(order[first])
            self._scales[scale] = (self.points[idx], self.keys[idx])
        return self._scales[scale]

    def k_nearest(self, x, k: int, scale: int = 0, base_voxel: float | None = None, n_scales: int = 3):
        """k nearest stored points among the 3x3x3 cells around ``x``."""
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        if not 0 <= scale < n_scales:
            raise InvalidInputError(f"scale must lie in 0..{n_scales - 1}")
        pts, keys = self.downsampled(scale, base_voxel or self.cell_size / 4)
        if len(pts) == 0:
            return np.zeros((0, 3))
        c = self.cell_of(np.asarray(x, dtype=float))[0]
        near = np.all(np.abs(keys - c) <= 1, axis=1)
        cand = pts[near]
        d = np.linalg.norm(cand - np.asarray(x, dtype=float), axis=1)
        order = np.argsort(d, kind="stable")[:k]
        return cand[order]

    def to_ply(self, path):
        save_ply(path, self.points)
