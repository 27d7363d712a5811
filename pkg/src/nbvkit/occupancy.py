"""Occupancy probability fields and occupancy-proportional proxy point sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, InvalidInputError, SamplingFailure
from .geometry import TriangleMesh
from .sensor import CloudStore, DepthMap

UNKNOWN, FREE, SURFACE = 0, 1, 2


@dataclass
class ProxyPointSet:
    """Volume samples with occupancy probabilities and optional SH gain / history rows."""

    points: np.ndarray
    probs: np.ndarray
    gains: np.ndarray | None = None
    history: np.ndarray | None = None
    seed: int | None = None
    acceptance: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(self.points) != len(self.probs):
            raise InvalidInputError("points and probabilities differ in length")
        if np.any((self.probs < 0) | (self.probs > 1)):
            raise InvalidInputError("probabilities must lie in [0, 1]")
        for name in ("gains", "history"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != len(self.points):
                raise InvalidInputError(f"{name} length differs from point count")

    def __len__(self):
        return len(self.points)

    def with_gains(self, gains, history=None):
        return replace(self, gains=np.asarray(gains, dtype=float),
                       history=None if history is None else np.asarray(history, dtype=float))

    def subset(self, mask):
        return ProxyPointSet(self.points[mask], self.probs[mask],
                             None if self.gains is None else self.gains[mask],
                             None if self.history is None else self.history[mask], self.seed)


class OracleOccupancy:
    """Ground-truth occupancy: 1 inside the mesh, 0 outside."""

    def __init__(self, mesh: TriangleMesh | None, bbox):
        if mesh is None:
            raise ConfigError("occupancy.mesh", "the oracle field needs a ground-truth mesh")
        self.mesh = mesh
        self.bbox = _check_bbox(bbox)

    def __call__(self, points) -> np.ndarray:
        return self.mesh.contains(np.atleast_2d(points)).astype(float)


class CarvingOccupancy:
    """Space-carving stand-in for a learned occupancy predictor.

    Voxels crossed by a sensor ray before its return become free (sticky);
    voxels holding a return become surface. Query values: free voxel ->
    ``free_value``; within ``eps_cloud`` of a stored cloud point ->
    ``surface_value``; anything else -> ``prior``.
    """

    def __init__(self, bbox, store: CloudStore, eps_cloud: float, resolution: int = 64,
                 free_value: float = 0.02, surface_value: float = 0.95, prior: float = 0.5):
        self.bbox = _check_bbox(bbox)
        self.store = store
        self.eps_cloud = float(eps_cloud)
        self.resolution = int(resolution)
        self.free_value, self.surface_value, self.prior = free_value, surface_value, prior
        self.lo, self.hi = self.bbox
        self.voxel = (self.hi - self.lo) / self.resolution
        self.state = np.zeros((self.resolution,) * 3, dtype=np.int8)
        self._tree = None
        self._tree_n = -1

    def voxel_of(self, points):
        ijk = np.floor((np.atleast_2d(points) - self.lo) / self.voxel).astype(np.int64)
        return ijk

    def state_at(self, points):
        ijk = self.voxel_of(points)
        ok = np.all((ijk >= 0) & (ijk < self.resolution), axis=1)
        out = np.full(len(ijk), UNKNOWN, dtype=np.int8)
        c = ijk[ok]
        out[ok] = self.state[c[:, 0], c[:, 1], c[:, 2]]
        return out

    def update(self, depth_map: DepthMap):
        """Carve free space along every pixel ray and mark returns as surface."""
        dirs = depth_map.world_directions()
        d = depth_map.depth.reshape(-1)
        hit = np.isfinite(d)
        t_end = np.where(hit, d, depth_map.intrinsics.max_range)
        origin = depth_map.pose.position
        _carve(self.state, self.lo, self.voxel, origin, np.ascontiguousarray(dirs), t_end, hit)

    def _near_cloud(self, points):
        if len(self.store) == 0:
            return np.zeros(len(points), dtype=bool)
        if self._tree_n != len(self.store):
            self._tree = cKDTree(self.store.points)
            self._tree_n = len(self.store)
        d, _ = self._tree.query(points, k=1, distance_upper_bound=self.eps_cloud * (1 + 1e-9))
        return d <= self.eps_cloud

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        state = self.state_at(points)
        out = np.full(len(points), self.prior)
        out[self._near_cloud(points)] = self.surface_value
        out[state == FREE] = self.free_value
        return out

    def export_raw(self, path):
        """Little-endian header of three int32 dimensions, then float32 voxel probabilities (x fastest)."""
        probs = np.where(self.state == FREE, self.free_value,
                         np.where(self.state == SURFACE, self.surface_value, self.prior)).astype("<f4")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3i", *self.state.shape))
            fh.write(np.transpose(probs, (2, 1, 0)).tobytes())


@nb.njit(cache=True)
def _carve(state, lo, voxel, origin, dirs, t_end, hit):
    n = state.shape[0]
    # voxels holding a return in this scan are surface, even if another ray crosses them
    returns = np.zeros(state.shape, dtype=np.bool_)
    for r in range(dirs.shape[0]):
        if hit[r]:
            q = np.empty(3, dtype=np.int64)
            inside = True
            for k in range(3):
                p = origin[k] + t_end[r] * dirs[r, k]
                q[k] = int(np.floor((p - lo[k]) / voxel[k]))
                if q[k] < 0 or q[k] >= n:
                    inside = False
            if inside:
                returns[q[0], q[1], q[2]] = True
                if state[q[0], q[1], q[2]] != 1:
                    state[q[0], q[1], q[2]] = 2
    for r in range(dirs.shape[0]):
        d = dirs[r]
        # clip the ray to the grid box
        t0 = 0.0
        t1 = t_end[r]
        for k in range(3):
            if d[k] != 0.0:
                ta = (lo[k] - origin[k]) / d[k]
                tb = (lo[k] + n * voxel[k] - origin[k]) / d[k]
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
            elif origin[k] < lo[k] or origin[k] > lo[k] + n * voxel[k]:
                t1 = -1.0
        if t1 >= t0:
            # Amanatides-Woo traversal from the entry point
            ijk = np.empty(3, dtype=np.int64)
            step = np.empty(3, dtype=np.int64)
            t_max = np.empty(3)
            t_delta = np.empty(3)
            for k in range(3):
                p = origin[k] + t0 * d[k]
                i = int(np.floor((p - lo[k]) / voxel[k]))
                ijk[k] = min(max(i, 0), n - 1)
                if d[k] > 0:
                    step[k] = 1
                    t_max[k] = (lo[k] + (ijk[k] + 1) * voxel[k] - origin[k]) / d[k]
                    t_delta[k] = voxel[k] / d[k]
                elif d[k] < 0:
                    step[k] = -1
                    t_max[k] = (lo[k] + ijk[k] * voxel[k] - origin[k]) / d[k]
                    t_delta[k] = -voxel[k] / d[k]
                else:
                    step[k] = 0
                    t_max[k] = np.inf
                    t_delta[k] = np.inf
            while True:
                k = 0
                if t_max[1] < t_max[k]:
                    k = 1
                if t_max[2] < t_max[k]:
                    k = 2
                t_exit = t_max[k]
                # only voxels the ray fully crosses before its return are carved
                if t_exit < t_end[r]:
                    if not returns[ijk[0], ijk[1], ijk[2]]:
                        state[ijk[0], ijk[1], ijk[2]] = 1
                else:
                    break
                ijk[k] += step[k]
                if ijk[k] < 0 or ijk[k] >= n:
                    break
                t_max[k] += t_delta[k]


def _check_bbox(bbox):
    lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in bbox)
    if not np.all(hi > lo):
        raise InvalidInputError("degenerate bounding box")
    return lo, hi


def occupancy(field, x) -> float:
    return float(field(np.asarray(x, dtype=float).reshape(1, 3))[0])


def sample_proxy_points(field, n: int, seed, max_draw_factor: int = 100, batch: int | None = None) -> ProxyPointSet:
    """Rejection-sample ``n`` points in the field's box, accepting each with probability sigma(x)."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = field.bbox
    budget = max_draw_factor * n
    batch = batch or max(4 * n, 4096)
    got_p, got_s = [], []
    accepted = drawn = 0
    while accepted < n and drawn < budget:
        m = min(batch, budget - drawn)
        cand = lo + (hi - lo) * rng.random((m, 3))
        u = rng.random(m)
        s = field(cand)
        keep = u < s
        got_p.append(cand[keep])
        got_s.append(s[keep])
        accepted += int(keep.sum())
        drawn += m
    rate = accepted / max(drawn, 1)
    if accepted < n:
        raise SamplingFailure(f"only {accepted}/{n} proxy points after {drawn} draws "
                              f"(acceptance rate {rate:.2e})")
    pts = np.concatenate(got_p)[:n]
    probs = np.concatenate(got_s)[:n]
    return ProxyPointSet(pts, probs, seed=seed if isinstance(seed, int) else None, acceptance=rate)
