"""Visibility, surface coverage and coverage gain, ground truth and Monte Carlo estimates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import log_softmax

from .errors import InvalidInputError
from .geometry import TriangleMesh
from .occupancy import ProxyPointSet
from .sensor import CameraPose, CloudStore, SensorIntrinsics, in_frustum
from .sh import N_COEFFS, Projector, history_features, sh_basis_batch

BACKOFF = 1e-4
FOOT_ANGLE_TOL = math.radians(30.0)
DEFAULT_ETA = 1.0


@dataclass
class PoseHistory:
    poses: list = field(default_factory=list)
    intrinsics: SensorIntrinsics = field(default_factory=SensorIntrinsics)

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def with_pose(self, pose):
        return PoseHistory(self.poses + [pose], self.intrinsics)

    @property
    def positions(self):
        return np.array([p.position for p in self.poses]).reshape(-1, 3)


@dataclass
class GainEstimate:
    pose: CameraPose
    gain: float
    n_samples: int
    seed: int | None = None


def _poses(camera) -> Sequence[CameraPose]:
    return [camera] if isinstance(camera, CameraPose) else list(camera)


def visible(mesh: TriangleMesh, camera, intrinsics: SensorIntrinsics, points) -> np.ndarray:
    """Frustum membership and an unoccluded open segment from the camera to each point.

    ``camera`` may be a single pose or a rig (sequence of poses, union of views).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(points), dtype=bool)
    delta = BACKOFF * mesh.scale
    for pose in _poses(camera):
        cand = np.flatnonzero(in_frustum(pose, intrinsics, points) & ~out)
        if len(cand) == 0:
            continue
        v = points[cand] - pose.position
        dist = np.linalg.norm(v, axis=1)
        blocked = mesh.occluded(pose.position[None, :], v / dist[:, None], 0.0, dist - delta)
        out[cand[~blocked]] = True
    return out


def visibility_matrix(mesh, poses, intrinsics, points) -> np.ndarray:
    """(n_poses, n_points) boolean visibility."""
    return np.array([visible(mesh, p, intrinsics, points) for p in poses]).reshape(len(poses), -1)


def knowledge_indicator(mesh, history: PoseHistory, points) -> np.ndarray:
    """1 where a point was visible from at least one pose of the history."""
    points = np.atleast_2d(points)
    if len(history) == 0:
        return np.zeros(len(points), dtype=bool)
    return visible(mesh, history.poses, history.intrinsics, points)


def _require_samples(samples):
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise InvalidInputError("no surface samples")
    return samples


def surface_coverage(mesh, camera, intrinsics, samples) -> float:
    samples = _require_samples(samples)
    return int(visible(mesh, camera, intrinsics, samples).sum()) / len(samples)


def coverage_gain_gt(mesh, history: PoseHistory, camera, samples, intrinsics=None) -> float:
    """Fraction of surface samples visible from ``camera`` and unseen by the history."""
    samples = _require_samples(samples)
    intrinsics = intrinsics or history.intrinsics
    gain = visible(mesh, camera, intrinsics, samples) & ~knowledge_indicator(mesh, history, samples)
    return int(gain.sum()) / len(samples)


def union_coverage(mesh, poses, intrinsics, samples) -> float:
    samples = _require_samples(samples)
    if len(poses) == 0:
        return 0.0
    return int(visible(mesh, list(poses), intrinsics, samples).sum()) / len(samples)


# -------------------------------------------------------------------------
# neighbourhood gain


def shell_depth(mesh: TriangleMesh, points, mu: float, inside=None, angle_tol: float = FOOT_ANGLE_TOL):
    """Depth of each point under the surface, measured to its nearest surface point.

    Returns ``(depth, foot_points)``. Depth is inf for points outside the
    volume, deeper than ``mu``, or whose displacement from the foot point is
    not along the inward normal (within ``angle_tol``).
    """
    if not mu > 0:
        raise InvalidInputError("mu must be > 0")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist, foot, face = mesh.closest(points, max_dist=mu)
    near = np.isfinite(dist)
    if inside is None:
        inside = np.zeros(len(points), dtype=bool)
        if near.any():
            inside[near] = mesh.contains(points[near])
    ok = near & (inside | (dist == 0))
    idx = np.flatnonzero(ok & (dist > 0))
    if len(idx):
        disp = (points[idx] - foot[idx]) / dist[idx, None]
        inward = -mesh.normals[face[idx]]
        cos = np.einsum("ij,ij->i", disp, inward)
        ok[idx[cos < math.cos(angle_tol)]] = False
    return np.where(ok, dist, np.inf), foot


def shell_feet(mesh: TriangleMesh, points, mu: float, inside=None, angle_tol: float = FOOT_ANGLE_TOL):
    """Points lying at depth in [0, mu) under the surface along the inward normal.

    Returns ``(mask, foot_points)``; feet are only meaningful where ``mask``.
    """
    depth, foot = shell_depth(mesh, points, mu, inside, angle_tol)
    return depth < mu, foot


def neighborhood_gain(mesh, history: PoseHistory, camera, mu: float, points, intrinsics=None,
                      inside=None) -> np.ndarray:
    """Volumetric visibility gain: 1 for points in the depth-``mu`` inner shell whose
    foot point is visible from ``camera`` and unseen by the history."""
    intrinsics = intrinsics or history.intrinsics
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mask, foot = shell_feet(mesh, points, mu, inside)
    idx = np.flatnonzero(mask)
    out = np.zeros(len(points), dtype=bool)
    if len(idx):
        f = foot[idx]
        out[idx] = visible(mesh, camera, intrinsics, f) & ~knowledge_indicator(mesh, history, f)
    return out


# -------------------------------------------------------------------------
# oracle SH gain fields and the Monte Carlo estimator


def escape_visibility(mesh: TriangleMesh, points, dirs, reach: float = np.inf) -> np.ndarray:
    """(n_points, n_dirs): 1 where a camera sitting along ``-dir`` from the point sees it.

    ``dirs`` are camera-to-point directions, matching the estimator's convention.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n, m = len(points), len(dirs)
    if n == 0:
        return np.zeros((0, m))
    delta = BACKOFF * mesh.scale
    origins = np.repeat(points, m, axis=0)
    back = np.tile(-dirs, (n, 1))
    blocked = mesh.occluded(origins, back, delta, reach)
    return (~blocked).reshape(n, m).astype(float)


def oracle_gain_field(mesh, history: PoseHistory, proxy: ProxyPointSet, mu: float,
                      n_dirs: int = 500, reach: float = np.inf, inside=None,
                      projector: Projector | None = None) -> ProxyPointSet:
    """Attach ray-cast ground-truth SH visibility gains and history features to proxy points."""
    if n_dirs < 500:
        raise InvalidInputError("n_dirs must be >= 500")
    projector = projector or Projector(n_dirs)
    gains = np.zeros((len(proxy), N_COEFFS))
    mask, foot = shell_feet(mesh, proxy.points, mu, inside)
    idx = np.flatnonzero(mask)
    if len(idx):
        unseen = ~knowledge_indicator(mesh, history, foot[idx])
        idx = idx[unseen]
    if len(idx):
        gains[idx] = projector(escape_visibility(mesh, foot[idx], projector.dirs, reach))
    return proxy.with_gains(gains, history_feature_rows(history, proxy.points))


def history_feature_rows(history: PoseHistory, points) -> np.ndarray:
    if len(history) == 0:
        return np.zeros((len(points), N_COEFFS))
    vis = np.array([in_frustum(p, history.intrinsics, points) for p in history.poses])
    return history_features(points, history.positions, vis)


def _penalised_terms(proxy: ProxyPointSet, pose: CameraPose, intrinsics, values, eta):
    mask = in_frustum(pose, intrinsics, proxy.points)
    if not mask.any():
        return 0.0
    v = values(mask)
    if eta is not None:
        d2 = np.sum((proxy.points[mask] - pose.position) ** 2, axis=1)
        v = v / (eta + d2)
    return float(v.sum()) / len(proxy)


def estimate_gain(proxy: ProxyPointSet, pose: CameraPose, intrinsics: SensorIntrinsics,
                  eta: float | None = None) -> GainEstimate:
    """Monte Carlo coverage-gain score of ``pose`` from per-point SH gains.

    Each in-frustum proxy point contributes its gain evaluated in the
    camera-to-point direction, clamped at 0 and optionally weighted by
    1 / (eta + squared distance). The sum is divided by the total proxy count.
    """
    if len(proxy) == 0:
        raise InvalidInputError("empty proxy set")
    if proxy.gains is None:
        raise InvalidInputError("proxy points carry no gains")

    def values(mask):
        d = proxy.points[mask] - pose.position
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.maximum(np.einsum("ij,ij->i", proxy.gains[mask], sh_basis_batch(d)), 0.0)

    return GainEstimate(pose, _penalised_terms(proxy, pose, intrinsics, values, eta), len(proxy), proxy.seed)


def binary_entropy(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1 - 1e-12)
    return -(p * np.log2(p) + (1 - p) * np.log2(1 - p))


def entropy_score(proxy: ProxyPointSet, pose: CameraPose, intrinsics, eta: float | None = None) -> float:
    """Sum of per-point occupancy entropy in the frustum, same normalisation as estimate_gain."""
    if len(proxy) == 0:
        raise InvalidInputError("empty proxy set")
    h = binary_entropy(proxy.probs)
    return _penalised_terms(proxy, pose, intrinsics, lambda m: h[m], eta)


# -------------------------------------------------------------------------
# evaluation metrics


def total_coverage_metric(cloud, reference, eps: float) -> float:
    """Fraction of reference points with a cloud point strictly closer than ``eps``."""
    if not eps > 0:
        raise InvalidInputError("eps must be > 0")
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    if ref.size == 0:
        raise InvalidInputError("empty reference cloud")
    pts = cloud.points if isinstance(cloud, CloudStore) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    d, _ = cKDTree(pts).query(ref, k=1, distance_upper_bound=eps * (1 + 1e-9))
    return int((d < eps).sum()) / len(ref)


def kl_gain_divergence(predicted, ground_truth) -> float:
    """KL(softmax(ground_truth) || softmax(predicted))."""
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1)
    if len(pred) != len(gt) or len(gt) < 2:
        raise InvalidInputError("need two equal-length vectors of length >= 2")
    log_s = log_softmax(gt)
    log_t = log_softmax(pred)
    return max(0.0, float(np.sum(np.exp(log_s) * (log_s - log_t))))


def write_gain_table(path, estimated, ground_truth, pose_ids=None):
    """CSV with one row per candidate pose: pose_id, I_H, gt_gain."""
    est = np.asarray(estimated, dtype=float).reshape(-1)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1)
    if len(est) != len(gt):
        raise InvalidInputError("estimate and ground-truth columns differ in length")
    ids = range(len(est)) if pose_ids is None else list(pose_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pose_id", "I_H", "gt_gain"])
        for i, a, b in zip(ids, est, gt):
            w.writerow([i, f"{a:.10g}", f"{b:.10g}"])
