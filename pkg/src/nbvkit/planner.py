"""Candidate pose grids, the greedy next-best-view loop, its policies and the AUC metric."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .coverage import (DEFAULT_ETA, PoseHistory, entropy_score, estimate_gain, oracle_gain_field,
                       total_coverage_metric)
from .errors import ConfigError, InvalidInputError, SetupError
from .geometry import TriangleMesh, sample_surface
from .occupancy import CarvingOccupancy, OracleOccupancy, sample_proxy_points
from .sensor import CameraPose, CloudStore, SensorIntrinsics, backproject, default_cell_size, render_depth

POLICIES = ("scone", "entropy", "random")
MAX_START_DRAWS = 100
OBJECT_MU = 0.04  # shell depth for unit-cube objects, several cloud spacings thick


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from one trial seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())]))


# -------------------------------------------------------------------------
# pose grids


@dataclass
class PoseGrid:
    kind: str  # "sphere" or "scene5d"
    poses: list
    neighbors: list  # per pose, array of adjacent pose indices
    valid: np.ndarray = None
    shape: tuple = ()

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(len(self.poses), dtype=bool)

    def __len__(self):
        return len(self.poses)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def positions(self):
        return np.array([p.position for p in self.poses])

    def valid_neighbors(self, i):
        nb = self.neighbors[i]
        return nb[self.valid[nb]]


class _AllToAll:
    """Lazy all-to-all adjacency (every other pose)."""

    def __init__(self, n):
        self.n = n

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return np.delete(np.arange(self.n), i)


def sphere_grid(center, radius: float, n_elev: int, n_azim: int, elev_range=(-60.0, 60.0)) -> PoseGrid:
    """Poses on an elevation / azimuth lattice of a sphere, all looking at ``center``.

    Elevations are evenly spaced over ``elev_range`` (degrees); a single
    elevation ring sits on the equator. Adjacency is all-to-all.
    """
    if not radius > 0:
        raise InvalidInputError("radius must be > 0")
    if n_elev < 1 or n_azim < 1:
        raise InvalidInputError("pose counts must be >= 1")
    elev = [0.0] if n_elev == 1 else np.linspace(*elev_range, n_elev)
    az = np.arange(n_azim) * 2 * math.pi / n_azim
    poses = [CameraPose.on_sphere(center, radius, math.radians(e), a) for e in elev for a in az]
    return PoseGrid("sphere", poses, _AllToAll(len(poses)), shape=(n_elev, n_azim))


def scene5d_grid(bbox, steps, n_elev: int = 4, n_azim: int = 8, elev_range=(-60.0, 60.0),
                 occupancy=None) -> PoseGrid:
    """5D lattice of (x, y, z, elevation, azimuth) poses inside ``bbox``.

    Positions sit at cell centres of a lattice with the given step sizes.
    Neighbours differ by one step along exactly one axis, azimuth wrapping
    around. With an ``occupancy`` callable, poses whose position has
    occupancy above 0.5 are flagged invalid.
    """
    lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in bbox)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (3,))
    if not np.all(hi > lo):
        raise InvalidInputError("degenerate bounding box")
    if np.any(steps <= 0) or n_elev < 1 or n_azim < 1:
        raise InvalidInputError("step sizes and angle counts must be positive")
    counts = np.maximum(1, np.floor((hi - lo) / steps + 1e-9).astype(int))
    axes = [lo[k] + steps[k] * (np.arange(counts[k]) + 0.5) for k in range(3)]
    de = (elev_range[1] - elev_range[0]) / n_elev
    elev = np.radians(elev_range[0] + de * (np.arange(n_elev) + 0.5))
    az = np.arange(n_azim) * 2 * math.pi / n_azim
    shape = (*counts, n_elev, n_azim)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    poses = []
    for i, j, k, e, a in np.ndindex(*shape):
        poses.append(CameraPose.from_angles([axes[0][i], axes[1][j], axes[2][k]], elev[e], az[a]))
    neighbors = []
    for cell in np.ndindex(*shape):
        nb = []
        for ax in range(5):
            for s in (-1, 1):
                c = list(cell)
                c[ax] += s
                if ax == 4:
                    c[ax] %= shape[4]
                elif not 0 <= c[ax] < shape[ax]:
                    continue
                n = idx[tuple(c)]
                if n != idx[cell] and n not in nb:
                    nb.append(n)
        neighbors.append(np.array(sorted(nb), dtype=np.int64))
    valid = np.ones(len(poses), dtype=bool)
    if occupancy is not None:
        pos = np.array([p.position for p in poses])
        valid = np.asarray(occupancy(pos), dtype=float) <= 0.5
    return PoseGrid("scene5d", poses, neighbors, valid, shape)


def select_nbv(candidates, scores) -> int:
    """Index of the highest score; the lowest index wins ties."""
    scores = np.asarray(scores, dtype=float)
    if len(candidates) == 0 or len(scores) == 0:
        raise InvalidInputError("no candidates")
    if len(candidates) != len(scores):
        raise InvalidInputError("candidates and scores differ in length")
    return int(np.argmax(scores))


# -------------------------------------------------------------------------
# trajectories and curves


def auc(curve) -> float:
    """Trapezoidal mean of a coverage curve (a single point gives its value)."""
    c = np.asarray(curve, dtype=float).reshape(-1)
    if c.size == 0:
        raise InvalidInputError("empty curve")
    if c.size == 1:
        return float(c[0])
    return float((c[:-1] + c[1:]).sum() / (2 * (c.size - 1)))


@dataclass
class CoverageCurve:
    values: list

    @property
    def auc(self) -> float:
        return auc(self.values)

    def to_csv(self) -> str:
        return "step,coverage\n" + "".join(f"{i},{v:.10f}\n" for i, v in enumerate(self.values))


@dataclass
class Trajectory:
    poses: list  # grid indices
    point_counts: list
    coverage: list
    seed: int
    policy: str
    positions: list = field(default_factory=list)

    def curve(self) -> CoverageCurve:
        return CoverageCurve(list(self.coverage))

    def to_json(self) -> str:
        return json.dumps({"policy": self.policy, "seed": self.seed, "poses": self.poses,
                           "positions": self.positions, "point_counts": self.point_counts,
                           "coverage": self.coverage}, indent=1)


@dataclass
class PlannerConfig:
    intrinsics: SensorIntrinsics
    eps: float  # coverage-metric threshold
    eps_cloud: float
    mu: float
    bbox: tuple
    eta: float | None = None
    n_proxy: int = 4096
    n_reference: int = 16384
    n_dirs: int = 500
    occupancy: str | None = None  # "oracle" or "carving"; None picks per policy
    cell_size: float | None = None
    carving_resolution: int = 64

    def __post_init__(self):
        if not self.eps > 0 or not self.eps_cloud > 0 or not self.mu > 0:
            raise ConfigError("planner", "eps, eps_cloud and mu must be > 0")
        if self.occupancy not in (None, "oracle", "carving"):
            raise ConfigError("planner.occupancy", f"unknown occupancy field {self.occupancy!r}")


def _score(policy, mesh, grid, cand, history, store, carving, cfg, rng, bbox):
    if policy == "scone":
        use_oracle = (cfg.occupancy or "oracle") == "oracle"
        field_ = OracleOccupancy(mesh, bbox) if use_oracle else carving
        proxy = sample_proxy_points(field_, cfg.n_proxy, rng)
        proxy = oracle_gain_field(mesh, history, proxy, cfg.mu, cfg.n_dirs)
        return [estimate_gain(proxy, grid.poses[i], cfg.intrinsics, cfg.eta).gain for i in cand]
    if policy == "entropy":
        proxy = sample_proxy_points(carving, cfg.n_proxy, rng)
        return [entropy_score(proxy, grid.poses[i], cfg.intrinsics, cfg.eta) for i in cand]
    raise InvalidInputError(f"unknown policy {policy!r}")


def run_reconstruction(mesh: TriangleMesh, grid: PoseGrid, policy: str, steps: int, seed: int,
                       config: PlannerConfig, reference=None):
    """Greedy reconstruction: returns ``(Trajectory, CoverageCurve)``.

    Sphere grids score every unvisited pose; scene grids only score the valid
    neighbours of the current pose. ``reference`` overrides the ground-truth
    surface samples used by the coverage metric.
    """
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    if policy not in POLICIES:
        raise InvalidInputError(f"unknown policy {policy!r}")
    cfg = config
    bbox = tuple(np.asarray(b, dtype=float) for b in cfg.bbox)
    if reference is None:
        reference, _, _ = sample_surface(mesh, cfg.n_reference, stream(seed, "surface"))
    cell = cfg.cell_size or max(default_cell_size(*bbox, cfg.intrinsics.max_range), cfg.eps_cloud)
    store = CloudStore(*bbox, cell)
    carving = CarvingOccupancy(bbox, store, cfg.eps_cloud, cfg.carving_resolution)
    rng_start, rng_proxy, rng_walk = stream(seed, "start"), stream(seed, "proxy"), stream(seed, "walk")

    valid = np.flatnonzero(grid.valid)
    if len(valid) == 0:
        raise SetupError("pose grid has no valid pose")
    current, depth = None, None
    for _ in range(MAX_START_DRAWS):
        i = int(valid[rng_start.integers(len(valid))])
        dm = render_depth(mesh, grid.poses[i], cfg.intrinsics)
        if dm.valid.any():
            current, depth = i, dm
            break
    if current is None:
        raise SetupError(f"no start pose sees the scene after {MAX_START_DRAWS} draws")

    history = PoseHistory([], cfg.intrinsics)
    visited = np.zeros(len(grid), dtype=bool)
    traj = Trajectory([], [], [], int(seed), policy)
    for step in range(steps):
        pose = grid.poses[current]
        history = history.with_pose(pose)
        visited[current] = True
        if depth is None:
            depth = render_depth(mesh, pose, cfg.intrinsics)
        store.accumulate(backproject(depth), cfg.eps_cloud)
        carving.update(depth)
        depth = None
        traj.poses.append(int(current))
        traj.positions.append([round(float(v), 9) for v in pose.position])
        traj.point_counts.append(len(store))
        traj.coverage.append(total_coverage_metric(store, reference, cfg.eps))
        if step == steps - 1:
            break
        if grid.kind == "sphere":
            cand = np.flatnonzero(~visited & grid.valid)
            if len(cand) == 0:
                cand = np.flatnonzero(grid.valid)
        else:
            cand = grid.valid_neighbors(current)
            if len(cand) == 0:
                cand = np.array([current])
        if policy == "random":
            current = int(cand[rng_walk.integers(len(cand))])
        else:
            scores = _score(policy, mesh, grid, cand, history, store, carving, cfg, rng_proxy, bbox)
            current = int(cand[select_nbv(cand, scores)])
    return traj, traj.curve()


def object_config(intrinsics: SensorIntrinsics | None = None, eps: float = 0.00707, mu: float = OBJECT_MU,
                  n_proxy: int = 4096) -> PlannerConfig:
    """Defaults for single objects normalised into the unit cube."""
    intrinsics = intrinsics or SensorIntrinsics.square(200, 45.0, 0.05, 10.0)
    return PlannerConfig(intrinsics, eps, eps / 2, mu, ((-0.6,) * 3, (0.6,) * 3), None, n_proxy)


def scene_config(bbox, intrinsics: SensorIntrinsics | None = None, eps_cloud: float | None = None,
                 mu: float | None = None, eta: float = DEFAULT_ETA, n_proxy: int = 4096) -> PlannerConfig:
    """Defaults for free-moving scene exploration: coverage threshold equals eps_cloud."""
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    intrinsics = intrinsics or SensorIntrinsics(96, 72, math.radians(60), math.radians(45), 0.05, 1.5)
    eps_cloud = eps_cloud or 0.005 * float(np.linalg.norm(hi - lo))
    return PlannerConfig(intrinsics, eps_cloud, eps_cloud, mu or 2 * eps_cloud, (lo, hi), eta, n_proxy,
                         n_reference=100_000)
