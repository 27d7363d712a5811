"""Numerical check that the volume integral of the neighbourhood gain tracks the
surface coverage gain with an error of order mu squared, on analytic solids.

Volume integrals use randomized quasi Monte Carlo (scrambled Sobol points,
rejection into the solid). The noise floor comes from independent scramblings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .coverage import PoseHistory, knowledge_indicator, shell_depth, coverage_gain_gt, visible
from .errors import InvalidInputError, SamplingFailure
from .geometry import sample_surface
from .sensor import CameraPose, SensorIntrinsics
from .shapes import AnalyticShape

MIN_VOLUME_SAMPLES = 10_000
MIN_SURFACE_SAMPLES = 100_000
NOISE_SIGMAS = 3.0
MIN_SPAN = 8.0  # smallest accepted max(mu) / min(mu) ratio


@dataclass
class MuResult:
    mu: float
    integral: float
    gap: float
    sigma: float

    @property
    def resolved(self) -> bool:
        return self.gap > NOISE_SIGMAS * self.sigma


@dataclass
class OrderFit:
    slope: float | None
    intercept: float | None
    status: str  # "ok" or "inconclusive"
    note: str = ""


@dataclass
class TheoremTrial:
    shape: AnalyticShape
    camera: object  # CameraPose or list of poses (a rig)
    intrinsics: SensorIntrinsics
    mus: tuple
    history: PoseHistory | None = None
    n_volume: int = 1_000_000
    n_surface: int = 1_000_000
    replicates: int = 8
    seed: int = 0
    coverage_gain: float | None = None
    results: list = field(default_factory=list)

    def __post_init__(self):
        mus = np.asarray(self.mus, dtype=float)
        if mus.size == 0 or np.any(mus <= 0) or np.any(np.diff(mus) >= 0):
            raise InvalidInputError("mu values must be positive and strictly decreasing")
        if mus[0] > 0.5 * self.shape.reach:
            raise InvalidInputError(f"mu={mus[0]} exceeds half the reach ({self.shape.reach})")
        if self.history is None:
            self.history = PoseHistory([], self.intrinsics)

    def gaps(self):
        """(mu, gap, sigma) rows, the input expected by order_fit."""
        return [(r.mu, r.gap, r.sigma) for r in self.results]


def _solid_samples(shape: AnalyticShape, n: int, seed, qmc_points: bool = True):
    """About ``n`` points uniform in the solid: bounding-box candidates kept when inside."""
    mesh = shape.mesh
    lo, hi = mesh.bounds
    frac = shape.volume / float(np.prod(hi - lo))
    m = int(math.ceil(n / max(frac, 1e-12)))
    if qmc_points:
        m = 1 << max(0, (m - 1).bit_length())
        u = qmc.Sobol(3, scramble=True, seed=seed).random(m)
    else:
        u = np.random.default_rng(seed).random((m, 3))
    cand = lo + (hi - lo) * u
    inside = mesh.contains(cand)
    if inside.sum() < 0.5 * n:
        raise SamplingFailure(f"volume rejection kept {int(inside.sum())}/{m} candidates "
                              f"(acceptance rate {inside.mean():.2e})")
    return cand[inside]


def volume_integral_multi(shape: AnalyticShape, history: PoseHistory, camera, mus, n: int,
                          seed, intrinsics: SensorIntrinsics | None = None, qmc_points: bool = True):
    """Mean neighbourhood gain over one shared set of solid samples, for every mu.

    The foot-point gain does not depend on mu, so one closest-point pass with
    the largest mu serves all of them.
    """
    if n < MIN_VOLUME_SAMPLES:
        raise InvalidInputError(f"need at least {MIN_VOLUME_SAMPLES} volume samples")
    mus = np.asarray(mus, dtype=float)
    intrinsics = intrinsics or history.intrinsics
    pts = _solid_samples(shape, n, seed, qmc_points)
    depth, foot = shell_depth(shape.mesh, pts, float(mus.max()), inside=np.ones(len(pts), bool))
    idx = np.flatnonzero(np.isfinite(depth))
    gain = np.zeros(len(pts), dtype=bool)
    if len(idx):
        f = foot[idx]
        gain[idx] = visible(shape.mesh, camera, intrinsics, f) & ~knowledge_indicator(shape.mesh, history, f)
    return np.array([np.count_nonzero(gain & (depth < mu)) / len(pts) for mu in mus])


def volume_integral_g(shape: AnalyticShape, history: PoseHistory, camera, mu: float, n: int,
                      seed, intrinsics: SensorIntrinsics | None = None) -> float:
    """Monte Carlo estimate of the solid-averaged neighbourhood gain (plain uniform sampling)."""
    return float(volume_integral_multi(shape, history, camera, [mu], n, seed, intrinsics, qmc_points=False)[0])


def theorem_gap(integral: float, mu: float, shape: AnalyticShape, coverage_gain: float) -> float:
    """|integral - mu * area / volume * G|."""
    return abs(integral - mu * shape.area / shape.volume * coverage_gain)


def run_trial(trial: TheoremTrial) -> TheoremTrial:
    """Fill ``trial.results`` with per-mu integral, gap and one-sigma noise."""
    if trial.n_surface < MIN_SURFACE_SAMPLES:
        raise InvalidInputError(f"need at least {MIN_SURFACE_SAMPLES} surface samples")
    ss = np.random.SeedSequence(trial.seed)
    surf_seed, *rep_seeds = ss.spawn(trial.replicates + 1)
    samples, _, _ = sample_surface(trial.shape.mesh, trial.n_surface, np.random.default_rng(surf_seed))
    G = coverage_gain_gt(trial.shape.mesh, trial.history, trial.camera, samples, trial.intrinsics)
    trial.coverage_gain = G
    per_rep = max(MIN_VOLUME_SAMPLES, trial.n_volume // trial.replicates)
    reps = np.array([volume_integral_multi(trial.shape, trial.history, trial.camera, trial.mus,
                                           per_rep, np.random.default_rng(s), trial.intrinsics)
                     for s in rep_seeds])
    ratio = trial.shape.area / trial.shape.volume
    trial.results = []
    for k, mu in enumerate(trial.mus):
        integral = float(reps[:, k].mean())
        var_int = reps[:, k].var(ddof=1) / trial.replicates if trial.replicates > 1 else 0.0
        var_g = (mu * ratio) ** 2 * G * (1 - G) / trial.n_surface
        trial.results.append(MuResult(float(mu), integral, theorem_gap(integral, mu, trial.shape, G),
                                      math.sqrt(var_int + var_g)))
    return trial


def order_fit(gaps) -> OrderFit:
    """Least-squares slope of log(gap) against log(mu).

    ``gaps`` holds (mu, gap) or (mu, gap, sigma) tuples. Any gap within
    three sigma of zero (or non-positive) makes the fit inconclusive.
    """
    rows = [tuple(g) for g in gaps]
    if len(rows) < 4:
        raise InvalidInputError("need at least 4 mu values")
    mu = np.array([r[0] for r in rows], dtype=float)
    gap = np.array([r[1] for r in rows], dtype=float)
    sigma = np.array([r[2] if len(r) > 2 else 0.0 for r in rows], dtype=float)
    if np.any(mu <= 0):
        raise InvalidInputError("mu values must be positive")
    if mu.max() / mu.min() < MIN_SPAN * (1 - 1e-12):
        raise InvalidInputError(f"mu values must span a factor of at least {MIN_SPAN:g}")
    weak = (gap <= 0) | (gap <= NOISE_SIGMAS * sigma)
    if weak.any():
        return OrderFit(None, None, "inconclusive",
                        f"{int(weak.sum())} gap(s) within {NOISE_SIGMAS:g} sigma of zero")
    slope, intercept = np.polyfit(np.log(mu), np.log(gap), 1)
    return OrderFit(float(slope), float(intercept), "ok")


def panoramic_rig(center, distance: float, n: int = 6):
    """Cameras on the +-axes (n=6) or a Fibonacci shell, all looking at ``center``."""
    center = np.asarray(center, dtype=float)
    if n == 6:
        dirs = np.vstack([np.eye(3), -np.eye(3)])
    else:
        from .sh import fibonacci_sphere
        dirs = fibonacci_sphere(n)
    up = np.array([0.0, 0.0, 1.0])
    poses = []
    for d in dirs:
        u = up if abs(d @ up) < 0.9 else np.array([1.0, 0.0, 0.0])
        poses.append(CameraPose.look_at(center + distance * d, center, up=u))
    return poses
