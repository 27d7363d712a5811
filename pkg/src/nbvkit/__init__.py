"""Next-best-view planning toolkit: ray-cast depth simulation, occupancy fields,
spherical-harmonic visibility gains, Monte Carlo coverage-gain estimation and
greedy view planning."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractViolation, InvalidInputError, MeshFormatError,  # noqa: E402
                     RankDeficiencyError, SamplingFailure, SetupError)
from .geometry import (Hit, Ray, TriangleMesh, load_mesh, point_inside, ray_intersect,  # noqa: E402
                       sample_surface, signed_distance)
from .sensor import CameraPose, CloudStore, DepthMap, SensorIntrinsics, backproject, render_depth  # noqa: E402
from .shapes import AnalyticShape, make_analytic, sample_mesh  # noqa: E402

__all__ = [
    "AnalyticShape", "CameraPose", "CloudStore", "ConfigError", "ContractViolation", "DepthMap", "Hit",
    "InvalidInputError", "MeshFormatError", "RankDeficiencyError", "Ray", "SamplingFailure", "SensorIntrinsics",
    "SetupError", "TriangleMesh", "backproject", "load_mesh", "make_analytic", "point_inside", "ray_intersect",
    "render_depth", "sample_mesh", "sample_surface", "signed_distance",
]
