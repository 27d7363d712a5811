"""Experiment configuration, orchestration and result files (CSV, JSON, optional SVG)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli
from scipy.spatial.transform import Rotation
from scipy.stats import ttest_rel

from . import __version__
from .errors import ConfigError, InvalidInputError
from .geometry import load_mesh, sample_surface
from .occupancy import OracleOccupancy
from .planner import OBJECT_MU, POLICIES, PlannerConfig, run_reconstruction, scene5d_grid, sphere_grid, stream
from .sensor import SensorIntrinsics, default_eps_cloud
from .shapes import desk_scene, make_analytic, sample_mesh
from .theorem import TheoremTrial, order_fit, run_trial

PROTOCOLS = ("object-sphere", "scene5d", "verify-theorem")
SLOPE_RANGE = (1.6, 2.4)


@dataclass
class ExperimentConfig:
    protocol: str = "object-sphere"
    mesh: str | None = None  # file path, or "builtin:blob" / "builtin:desk"
    shape: str | None = None  # analytic kind
    shape_params: dict = field(default_factory=dict)
    normalize: bool = True
    rotation_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    policy: str = "random"
    steps: int = 10
    seeds: list = field(default_factory=lambda: [0])
    # sensor
    width: int = 200
    height: int = 200
    fov_x_deg: float = 45.0
    fov_y_deg: float = 45.0
    min_range: float = 0.05
    max_range: float = 10.0
    # grids
    radius: float = 1.6
    n_elev: int = 5
    n_azim: int = 20
    bbox: list | None = None
    step: float = 0.4
    # estimator and metric
    eps: float = 0.00707
    eps_cloud: float | None = None
    mu: float | None = None
    eta: float | None = None
    n_proxy: int = 4096
    n_reference: int | None = None
    occupancy: str | None = None
    # theorem verification
    mus: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    camera_distance: float = 2.0
    n_volume: int = 1_000_000
    n_surface: int = 1_000_000
    replicates: int = 8
    # output
    output_dir: str = "runs"
    plots: bool = False

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.protocol in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
        need(self.policy in POLICIES, "policy", f"must be one of {POLICIES}")
        need(isinstance(self.steps, int) and self.steps >= 1, "steps", "must be an integer >= 1")
        need(len(self.seeds) > 0 and all(isinstance(s, int) for s in self.seeds), "seeds",
             "must be a non-empty list of integers")
        need(self.width >= 1 and self.height >= 1, "width", "image size must be >= 1")
        need(0 < self.fov_x_deg < 180 and 0 < self.fov_y_deg < 180, "fov_x_deg", "FOV must lie in (0, 180)")
        need(0 < self.min_range < self.max_range, "min_range", "need 0 < min_range < max_range")
        need(self.radius > 0, "radius", "must be > 0")
        need(self.n_elev >= 1 and self.n_azim >= 1, "n_elev", "pose counts must be >= 1")
        need(self.step > 0, "step", "must be > 0")
        need(self.eps > 0, "eps", "must be > 0")
        for name in ("eps_cloud", "mu"):
            v = getattr(self, name)
            need(v is None or v > 0, name, "must be > 0")
        need(self.eta is None or self.eta >= 0, "eta", "must be >= 0")
        need(self.n_proxy >= 1, "n_proxy", "must be >= 1")
        need(self.occupancy in (None, "oracle", "carving"), "occupancy", "must be oracle or carving")
        need(len(self.mus) >= 1 and all(m > 0 for m in self.mus), "mus", "must be positive")
        need(self.mesh is not None or self.shape is not None, "mesh", "give a mesh path or an analytic shape")
        if self.protocol == "scene5d":
            need(self.bbox is not None or self.mesh == "builtin:desk", "bbox", "scene5d needs a bounding box")
        return self

    @property
    def label(self) -> str:
        return self.mesh or self.shape

    def to_dict(self):
        return asdict(self)


def _coerce(value: str):
    try:
        return tomli.loads(f"v = {value}")["v"]
    except tomli.TOMLDecodeError:
        return value


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a TOML file (tables are flattened, keys must be known) and apply ``key=value`` overrides."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"no such file: {path}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError("config", str(exc)) from None
        for k, v in raw.items():
            if isinstance(v, dict) and k != "shape_params":
                data.update(v)
            else:
                data[k] = v
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = item.split("=", 1)
        data[k.strip().split(".")[-1]] = _coerce(v.strip())
    known = ExperimentConfig.__dataclass_fields__
    for k in data:
        if k not in known:
            raise ConfigError(k, "unknown configuration key")
    return ExperimentConfig(**data).validate()


# -------------------------------------------------------------------------
# scene setup


def build_mesh(cfg: ExperimentConfig):
    if cfg.mesh == "builtin:desk":
        return desk_scene()
    if cfg.mesh is not None:
        mesh = sample_mesh(cfg.mesh.split(":", 1)[1]) if cfg.mesh.startswith("builtin:") else load_mesh(cfg.mesh)
    else:
        mesh = make_analytic(cfg.shape, cfg.shape_params).mesh
    if any(cfg.rotation_deg):
        mesh = mesh.transformed(Rotation.from_euler("xyz", cfg.rotation_deg, degrees=True).as_matrix())
    if cfg.normalize and cfg.protocol == "object-sphere":
        mesh = mesh.normalized()
    return mesh


def _intrinsics(cfg):
    return SensorIntrinsics(cfg.width, cfg.height, math.radians(cfg.fov_x_deg), math.radians(cfg.fov_y_deg),
                            cfg.min_range, cfg.max_range)


def _scene_bbox(cfg, mesh):
    if cfg.bbox is not None:
        return tuple(np.asarray(b, dtype=float) for b in cfg.bbox)
    if cfg.mesh == "builtin:desk":
        return np.array([-1.6, -1.2, 0.0]), np.array([1.6, 1.2, 1.6])
    lo, hi = mesh.bounds
    return lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)


def planner_setup(cfg: ExperimentConfig, mesh):
    intr = _intrinsics(cfg)
    if cfg.protocol == "object-sphere":
        bbox = (np.full(3, -0.6), np.full(3, 0.6))
        eps_cloud = cfg.eps_cloud or cfg.eps / 2
        grid = sphere_grid([0.0, 0.0, 0.0], cfg.radius, cfg.n_elev, cfg.n_azim)
        n_ref = cfg.n_reference or 16384
        eps = cfg.eps
    else:
        bbox = _scene_bbox(cfg, mesh)
        eps_cloud = cfg.eps_cloud or default_eps_cloud(*bbox)
        grid = scene5d_grid(bbox, cfg.step, occupancy=OracleOccupancy(mesh, bbox))
        n_ref = cfg.n_reference or 100_000
        eps = eps_cloud
    eta = cfg.eta if cfg.eta is not None or cfg.protocol == "object-sphere" else 1.0
    mu = cfg.mu or (OBJECT_MU if cfg.protocol == "object-sphere" else 2 * eps_cloud)
    pc = PlannerConfig(intr, eps, eps_cloud, mu, bbox, eta, cfg.n_proxy, n_ref,
                       occupancy=cfg.occupancy)
    return grid, pc


# -------------------------------------------------------------------------
# reports


@dataclass
class SeedResult:
    seed: int
    curve: list | None = None
    auc: float | None = None
    error: str | None = None


@dataclass
class RunReport:
    config: dict
    seeds: list  # SeedResult
    mean_auc: float | None
    std_auc: float | None
    wall_time: float
    version: str = __version__

    @staticmethod
    def aggregate(aucs):
        aucs = [a for a in aucs if a is not None]
        if not aucs:
            return None, None
        return float(np.mean(aucs)), float(np.std(aucs))

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        d["seeds"] = [SeedResult(**s) for s in d["seeds"]]
        return cls(**d)

    def auc_by_seed(self):
        return {s.seed: s.auc for s in self.seeds if s.auc is not None}


def curve_csv(curve) -> str:
    return "step,coverage\n" + "".join(f"{i},{v:.10f}\n" for i, v in enumerate(curve))


def coverage_svg(curves: dict, title: str = "") -> str:
    """Minimal SVG line plot of coverage against step, one polyline per seed."""
    w, h, pad = 480, 320, 40
    n = max((len(c) for c in curves.values()), default=1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect x="{pad}" y="{pad}" width="{w - 2 * pad}" height="{h - 2 * pad}" fill="none" stroke="black"/>',
             f'<text x="{pad}" y="{pad - 10}" font-size="14">{title}</text>']
    for k, c in curves.items():
        xs = [pad + (w - 2 * pad) * (i / max(n - 1, 1)) for i in range(len(c))]
        ys = [h - pad - (h - 2 * pad) * v for v in c]
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"><title>seed {k}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _run_seed(args):
    cfg, seed = args
    try:
        mesh = build_mesh(cfg)
        grid, pc = planner_setup(cfg, mesh)
        reference, _, _ = sample_surface(mesh, pc.n_reference, stream(seed, "surface"))
        traj, curve = run_reconstruction(mesh, grid, cfg.policy, cfg.steps, seed, pc, reference)
        return SeedResult(seed, [float(v) for v in curve.values], curve.auc), traj.to_json()
    except Exception as exc:  # recorded per seed, the run carries on
        return SeedResult(seed, error=f"{type(exc).__name__}: {exc}"), None


def _workers():
    try:
        return max(1, int(os.environ.get("NBV_THREADS", "1")))
    except ValueError:
        return 1


def run(cfg: ExperimentConfig, out_dir=None) -> tuple[RunReport, Path]:
    """Run the configured planning protocol over every seed and write the result files."""
    if cfg.protocol == "verify-theorem":
        raise InvalidInputError("use verify_theorem for the theorem protocol")
    cfg.validate()
    _check_mesh_path(cfg)
    t0 = time.time()
    jobs = [(cfg, s) for s in cfg.seeds]
    if _workers() > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(_workers()) as pool:
            results = list(pool.map(_run_seed, jobs))
    else:
        results = [_run_seed(j) for j in jobs]
    seeds = [r for r, _ in results]
    mean, std = RunReport.aggregate([s.auc for s in seeds])
    report = RunReport(cfg.to_dict(), seeds, mean, std, time.time() - t0)
    out = _out_dir(cfg, out_dir)
    for s, tj in results:
        if s.curve is not None:
            (out / f"curve_seed{s.seed}.csv").write_text(curve_csv(s.curve))
            (out / f"trajectory_seed{s.seed}.json").write_text(tj)
    (out / "report.json").write_text(report.to_json())
    if cfg.plots:
        (out / "coverage.svg").write_text(coverage_svg({s.seed: s.curve for s in seeds if s.curve},
                                                       f"{cfg.label} / {cfg.policy}"))
    return report, out


def _check_mesh_path(cfg):
    if cfg.mesh is not None and not cfg.mesh.startswith("builtin:") and not Path(cfg.mesh).is_file():
        raise FileNotFoundError(cfg.mesh)


def _out_dir(cfg, out_dir):
    if out_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out_dir = Path(cfg.output_dir) / f"{cfg.protocol}-{cfg.policy}-{stamp}"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def verify_theorem(cfg: ExperimentConfig, out_dir=None):
    """Theorem trial on an analytic shape with one camera; writes a CSV table and a JSON verdict."""
    cfg.validate()
    if cfg.shape is None:
        raise ConfigError("shape", "theorem verification needs an analytic shape")
    shape = make_analytic(cfg.shape, cfg.shape_params, resolution=6 if cfg.shape == "sphere" else None)
    cam_pos = np.array([0.0, 0.0, -cfg.camera_distance])
    from .sensor import CameraPose
    cam = CameraPose.look_at(cam_pos, [0.0, 0.0, 0.0])
    trial = TheoremTrial(shape, cam, _intrinsics(cfg), tuple(sorted(cfg.mus, reverse=True)),
                         n_volume=cfg.n_volume, n_surface=cfg.n_surface, replicates=cfg.replicates,
                         seed=cfg.seeds[0])
    run_trial(trial)
    fit = order_fit(trial.gaps())
    ok = fit.status == "ok" and SLOPE_RANGE[0] <= fit.slope <= SLOPE_RANGE[1]
    verdict = {"slope": fit.slope, "status": fit.status, "note": fit.note, "pass": bool(ok),
               "coverage_gain": trial.coverage_gain}
    out = _out_dir(cfg, out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "integral", "gap", "sigma"])
    for r in trial.results:
        w.writerow([repr(r.mu), repr(r.integral), repr(r.gap), repr(r.sigma)])
    (out / "theorem.csv").write_text(buf.getvalue())
    (out / "verdict.json").write_text(json.dumps(verdict, indent=1, sort_keys=True))
    return verdict, out


def compare(paths) -> str:
    """CSV table of mean AUC +- std (rows: mesh, columns: policy) plus paired p-values."""
    if len(paths) < 2:
        raise InvalidInputError("need at least two reports")
    reports = [RunReport.from_json(Path(p).read_text()) for p in paths]
    protocols = {r.config["protocol"] for r in reports}
    if len(protocols) != 1:
        raise InvalidInputError(f"reports mix protocols: {sorted(protocols)}")
    label = lambda r: r.config.get("mesh") or r.config.get("shape")
    rows = sorted({label(r) for r in reports})
    cols = sorted({r.config["policy"] for r in reports})
    cell = {(label(r), r.config["policy"]): r for r in reports}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mesh"] + cols)
    for m in rows:
        line = [m]
        for c in cols:
            r = cell.get((m, c))
            line.append("" if r is None or r.mean_auc is None else f"{r.mean_auc:.4f} ± {r.std_auc:.4f}")
        w.writerow(line)
    w.writerow([])
    w.writerow(["mesh", "better", "worse", "mean_diff", "p_value"])
    notes = []
    for i, a in enumerate(reports):
        for b in reports[i + 1:]:
            if label(a) != label(b):
                continue
            sa, sb = a.auc_by_seed(), b.auc_by_seed()
            if set(sa) != set(sb) or not sa:
                notes.append(f"{label(a)}: {a.config['policy']} vs {b.config['policy']}: "
                             "p-values omitted, seed lists differ")
                continue
            keys = sorted(sa)
            xa, xb = np.array([sa[k] for k in keys]), np.array([sb[k] for k in keys])
            if xa.mean() < xb.mean():
                a, b, xa, xb = b, a, xb, xa
            p = paired_p_value(xa, xb)
            w.writerow([label(a), a.config["policy"], b.config["policy"], f"{xa.mean() - xb.mean():.6f}", f"{p:.6g}"])
    for n in notes:
        w.writerow([f"# {n}"])
    return buf.getvalue()


def paired_p_value(a, b) -> float:
    """One-sided paired t-test p for mean(a) > mean(b); identical samples give 1."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if len(d) < 2 or np.all(d == 0):
        return 1.0
    if np.ptp(d) <= 1e-12 * max(1.0, float(np.abs(d).max())):  # constant shift, no spread
        return 0.0 if d.mean() > 0 else 1.0
    return float(ttest_rel(a, b, alternative="greater").pvalue)
