import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nbvkit.coverage import (PoseHistory, coverage_gain_gt, escape_visibility, estimate_gain,
                             kl_gain_divergence, knowledge_indicator, neighborhood_gain, oracle_gain_field,
                             surface_coverage, total_coverage_metric, union_coverage, visible, write_gain_table)
from nbvkit.errors import InvalidInputError
from nbvkit.geometry import sample_surface
from nbvkit.occupancy import OracleOccupancy, ProxyPointSet, sample_proxy_points
from nbvkit.sensor import CameraPose, SensorIntrinsics
from nbvkit.sh import N_COEFFS, Projector, eval_many, sh_eval
from nbvkit.shapes import box_mesh, room_mesh

INTR = SensorIntrinsics.square(64, 60.0, 0.05, 10.0)
WIDE = SensorIntrinsics.square(64, 120.0, 0.01, 100.0)


def front():
    return CameraPose.look_at([0, 0, -3], [0, 0, 0])


def ring(n, radius=3.0, el=0.0):
    return [CameraPose.on_sphere([0, 0, 0], radius, el, 2 * math.pi * k / n) for k in range(n)]


@pytest.fixture(scope="module")
def sphere_samples(unit_sphere):
    return sample_surface(unit_sphere, 16384, 0)[0]


# ---------------------------------------------------------------- visibility

def test_visible_examples(unit_sphere):
    pts = [[0, 0, -1], [0, 0, 1], [0, 0, -4]]
    np.testing.assert_array_equal(visible(unit_sphere, front(), INTR, pts), [True, False, False])


def test_knowledge_indicator_examples(unit_sphere, sphere_samples):
    assert not knowledge_indicator(unit_sphere, PoseHistory([], INTR), sphere_samples).any()
    h = PoseHistory([front()], INTR)
    assert knowledge_indicator(unit_sphere, h, [[0, 0, -1]])[0]


def test_knowledge_indicator_monotone(unit_sphere, sphere_samples):
    poses = ring(5, el=0.4)
    last = np.zeros(len(sphere_samples), dtype=bool)
    for k in range(1, 6):
        cur = knowledge_indicator(unit_sphere, PoseHistory(poses[:k], INTR), sphere_samples)
        assert np.all(cur >= last)
        last = cur


@pytest.mark.parametrize("d", [1.5, 2.0, 4.0])
def test_spherical_cap_fraction(unit_sphere, sphere_samples, d):
    # the whole visible cap fits in a 120 degree frustum for every d >= 1.5
    cam = CameraPose.look_at([0, 0, -d], [0, 0, 0])
    assert surface_coverage(unit_sphere, cam, WIDE, sphere_samples) == pytest.approx((1 - 1 / d) / 2, abs=0.02)


def test_room_panorama_covers_walls():
    room = room_mesh(2.0)
    samples = sample_surface(room, 16384, 1)[0]
    intr = SensorIntrinsics.square(32, 100.0, 0.01, 10.0)
    axes = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    rig = [CameraPose.look_at([0, 0, 0], a) for a in axes]
    assert union_coverage(room, rig, intr, samples) >= 0.99


def test_tiny_fov_sees_nothing(unit_sphere, sphere_samples):
    tiny = SensorIntrinsics(8, 8, 1e-9, 1e-9, 0.05, 10.0)
    assert surface_coverage(unit_sphere, front(), tiny, sphere_samples) == 0.0


def test_empty_samples_rejected(unit_sphere):
    with pytest.raises(InvalidInputError):
        surface_coverage(unit_sphere, front(), INTR, np.zeros((0, 3)))


# ---------------------------------------------------------------- coverage gain

def test_gain_with_empty_history_is_coverage(unit_sphere, sphere_samples):
    h = PoseHistory([], INTR)
    for cam in ring(4, el=0.3):
        assert coverage_gain_gt(unit_sphere, h, cam, sphere_samples) == \
            surface_coverage(unit_sphere, cam, INTR, sphere_samples)


def test_revisit_has_no_gain(unit_sphere, sphere_samples):
    cam = front()
    assert coverage_gain_gt(unit_sphere, PoseHistory([cam], INTR), cam, sphere_samples) == 0.0


def test_gain_additivity(unit_sphere, sphere_samples):
    poses = ring(6, el=-0.2)
    h = PoseHistory(poses[:3], INTR)
    for cam in poses[3:]:
        before = union_coverage(unit_sphere, h.poses, INTR, sphere_samples)
        gain = coverage_gain_gt(unit_sphere, h, cam, sphere_samples)
        after = union_coverage(unit_sphere, h.poses + [cam], INTR, sphere_samples)
        n = len(sphere_samples)
        assert round(after * n) == round(before * n) + round(gain * n)
        h = h.with_pose(cam)


# ---------------------------------------------------------------- neighbourhood gain

def test_neighborhood_gain_examples(unit_sphere):
    h = PoseHistory([], INTR)
    v = unit_sphere.vertices[np.argmin(unit_sphere.vertices[:, 2])]  # front pole vertex, on the surface
    mu = 0.05
    got = neighborhood_gain(unit_sphere, h, front(), mu, [v, [0, 0, -1.5], [0, 0, -1 + 2 * mu]])
    np.testing.assert_array_equal(got, [True, False, False])


def test_neighborhood_gain_respects_history(unit_sphere):
    p = [[0, 0, -0.98]]
    assert neighborhood_gain(unit_sphere, PoseHistory([], INTR), front(), 0.05, p)[0]
    assert not neighborhood_gain(unit_sphere, PoseHistory([front()], INTR), front(), 0.05, p)[0]


@settings(max_examples=25)
@given(st.floats(0.01, 0.2), st.floats(0.01, 0.2), st.integers(0, 2 ** 16))
def test_neighborhood_gain_monotone_in_mu(coarse_sphere, m1, m2, seed):
    lo, hi = sorted((m1, m2))
    pts = np.random.default_rng(seed).uniform(-1, 1, (300, 3))
    h = PoseHistory([], INTR)
    a = neighborhood_gain(coarse_sphere, h, front(), lo, pts)
    b = neighborhood_gain(coarse_sphere, h, front(), hi, pts)
    assert np.all(a <= b)


# ---------------------------------------------------------------- oracle SH gains

def test_free_point_projects_to_constant():
    # nothing lies within reach of the point, so it escapes in all directions
    proj = Projector(1000)
    c = proj(escape_visibility(box_mesh([5, 5, 5], [6, 6, 6]), [[0, 0, 0]], proj.dirs, reach=4.0)[0])
    assert c[0] == pytest.approx(2 * math.sqrt(math.pi), abs=1e-6)
    assert np.abs(c[1:]).max() < 1e-6


def test_wall_suppresses_gain_from_its_side():
    # point sits on the +z side of a large wall; cameras below it cannot see it
    wall = box_mesh([-3, -3, -0.6], [3, 3, -0.5])
    proj = Projector(500)
    c = proj(escape_visibility(wall, [[0, 0, 0]], proj.dirs)[0])
    up, down = np.array([0, 0, 1.0]), np.array([0, 0, -1.0])
    # directions are camera-to-point: (0,0,1) means a camera below the point
    assert sh_eval(c, up) < sh_eval(c, down)
    assert sh_eval(c, up) < 0.2 and sh_eval(c, down) > 0.8


@pytest.fixture(scope="module")
def sphere_proxy(coarse_sphere):
    return sample_proxy_points(OracleOccupancy(coarse_sphere, ([-1] * 3, [1] * 3)), 2000, 3)


def test_oracle_field_zero_when_covered(coarse_sphere, sphere_proxy):
    mu = 0.1
    fresh = oracle_gain_field(coarse_sphere, PoseHistory([], INTR), sphere_proxy, mu)
    rig = [CameraPose.look_at(np.array(a) * 3.0, [0, 0, 0]) for a in
           ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1])]
    seen = oracle_gain_field(coarse_sphere, PoseHistory(rig, WIDE), sphere_proxy, mu)
    shell = np.linalg.norm(fresh.gains, axis=1) > 0
    assert shell.sum() > 100
    ratio = np.linalg.norm(seen.gains[shell], axis=1) / np.linalg.norm(fresh.gains[shell], axis=1)
    assert ratio.max() < 1e-2
    assert seen.history.shape == (len(sphere_proxy), N_COEFFS)


def test_oracle_field_points_outward(coarse_sphere, sphere_proxy):
    g = oracle_gain_field(coarse_sphere, PoseHistory([], INTR), sphere_proxy, 0.1)
    idx = np.flatnonzero(np.linalg.norm(g.gains, axis=1) > 0)[:50]
    for i in idx:
        x = sphere_proxy.points[i]
        n = x / np.linalg.norm(x)
        # looking at the point from outside along its normal beats looking through the body
        assert sh_eval(g.gains[i], -n) > sh_eval(g.gains[i], n)


# ---------------------------------------------------------------- estimator

def synthetic_proxy(n, seed, value=1.0):
    rng = np.random.default_rng(seed)
    gains = np.zeros((n, N_COEFFS))
    gains[:, 0] = value
    return ProxyPointSet(rng.uniform(-1, 1, (n, 3)), np.ones(n), gains)


def test_estimate_empty_frustum():
    away = CameraPose.look_at([0, 0, -3], [0, 0, -6])
    assert estimate_gain(synthetic_proxy(100, 0), away, INTR).gain == 0.0


def test_estimate_zero_gains():
    assert estimate_gain(synthetic_proxy(100, 0, 0.0), front(), INTR).gain == 0.0


def test_estimate_errors():
    with pytest.raises(InvalidInputError):
        estimate_gain(ProxyPointSet(np.zeros((0, 3)), np.zeros(0), np.zeros((0, N_COEFFS))), front(), INTR)
    with pytest.raises(InvalidInputError):
        estimate_gain(ProxyPointSet(np.zeros((3, 3)), np.ones(3)), front(), INTR)


def test_negative_gains_clamped():
    p = synthetic_proxy(50, 1, -1.0)
    assert estimate_gain(p, front(), INTR).gain == 0.0


def test_distance_penalty():
    p = synthetic_proxy(400, 2)
    plain = estimate_gain(p, front(), INTR).gain
    pen = estimate_gain(p, front(), INTR, eta=1.0).gain
    # camera-to-point distances lie in [2, 4.8], so weights lie in [1/24, 1/5]
    assert plain / 24 < pen < plain / 5


@pytest.fixture(scope="module")
def gain_pool(coarse_sphere):
    proxy = sample_proxy_points(OracleOccupancy(coarse_sphere, ([-1] * 3, [1] * 3)), 8192, 11)
    return oracle_gain_field(coarse_sphere, PoseHistory([], INTR), proxy, 0.2)


def test_estimate_permutation_invariant(gain_pool):
    perm = np.random.default_rng(5).permutation(len(gain_pool))
    a = estimate_gain(gain_pool, front(), INTR).gain
    b = estimate_gain(gain_pool.subset(perm), front(), INTR).gain
    assert a == pytest.approx(b, rel=1e-12, abs=0)


def test_estimate_standard_error_scaling(gain_pool):
    # quadrupling the proxy count halves the standard error across seeds
    rng = np.random.default_rng(17)
    cam = CameraPose.on_sphere([0, 0, 0], 2.5, 0.3, 1.1)

    def spread(n):
        vals = [estimate_gain(gain_pool.subset(rng.choice(len(gain_pool), n, replace=False)), cam, INTR).gain
                for _ in range(300)]
        return np.std(vals, ddof=1)

    assert spread(1024) / spread(256) == pytest.approx(0.5, rel=0.3)


def test_gain_table_csv(tmp_path):
    p = tmp_path / "gains.csv"
    write_gain_table(p, [0.5, 0.25], [0.4, 0.1], pose_ids=[7, 9])
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["pose_id", "I_H", "gt_gain"]
    assert rows[1] == ["7", "0.5", "0.4"]
    with pytest.raises(InvalidInputError):
        write_gain_table(p, [1.0], [1.0, 2.0])


# ---------------------------------------------------------------- metrics

def test_total_coverage_examples(rng):
    ref = rng.uniform(-1, 1, (500, 3))
    assert total_coverage_metric(ref, ref, 0.00707) == 1.0
    assert total_coverage_metric(np.zeros((0, 3)), ref, 0.00707) == 0.0
    with pytest.raises(InvalidInputError):
        total_coverage_metric(ref, np.zeros((0, 3)), 0.01)


def test_total_coverage_strict_threshold():
    ref = np.array([[0.0, 0, 0]])
    assert total_coverage_metric([[0.01, 0, 0]], ref, 0.01) == 0.0
    assert total_coverage_metric([[0.0099, 0, 0]], ref, 0.01) == 1.0


def test_kl_examples():
    gt = np.array([1.0, 2.0, 3.0])
    assert kl_gain_divergence(gt, gt) == 0.0
    assert kl_gain_divergence(gt + 4.2, gt) == pytest.approx(0.0, abs=1e-12)
    z = math.exp(1) + math.exp(2) + math.exp(3)
    s = [math.exp(k) / z for k in (1, 2, 3)]
    t = s[::-1]
    hand = sum(si * math.log(si / ti) for si, ti in zip(s, t))
    assert kl_gain_divergence(gt[::-1], gt) == pytest.approx(hand, rel=1e-12)
    assert hand > 0
    with pytest.raises(InvalidInputError):
        kl_gain_divergence([1.0, 2.0], [1.0, 2.0, 3.0])


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=30), st.floats(-50, 50))
def test_kl_nonnegative_and_shift_invariant(v, shift):
    v = np.array(v)
    pred = v[::-1]
    assert kl_gain_divergence(pred, v) >= 0
    assert kl_gain_divergence(pred + shift, v) == pytest.approx(kl_gain_divergence(pred, v), abs=1e-9)


def test_history_eval_shapes(gain_pool):
    vals = eval_many(gain_pool.gains[0], np.eye(3))
    assert vals.shape == (3,)
