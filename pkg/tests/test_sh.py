import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import sph_harm_y
from scipy.stats import qmc
from scipy.spatial.transform import Rotation

from nbvkit.errors import ContractViolation, RankDeficiencyError
from nbvkit.sh import (N_COEFFS, Projector, camera_history_feature, eval_many, fibonacci_sphere, project,
                       sh_basis, sh_basis_batch, sh_eval, sh_index)

unit_dirs = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


def lebedev_like(n_theta=48, n_phi=96):
    """Gauss-Legendre in cos(theta) times a uniform azimuth grid: exact for degree < 2*48."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st_ = np.sqrt(1 - ct ** 2)
    dirs = np.stack([st_ * np.cos(ph), st_ * np.sin(ph), ct], -1).reshape(-1, 3)
    weights = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    return dirs, weights


def scipy_real_sh(l, m, dirs):
    """Real SH without the Condon-Shortley phase, from scipy's complex harmonics."""
    theta = np.arccos(np.clip(dirs[:, 2], -1, 1))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    y = sph_harm_y(l, abs(m), theta, phi) * (-1) ** abs(m)
    if m == 0:
        return y.real
    if m > 0:
        return math.sqrt(2) * y.real
    return math.sqrt(2) * y.imag


def test_basis_examples():
    d = np.array([0.0, 0.0, 1.0])
    b = sh_basis(d)
    assert len(b) == N_COEFFS == 64
    assert b[0] == pytest.approx(1 / (2 * math.sqrt(math.pi)))
    assert b[sh_index(1, 0)] == pytest.approx(math.sqrt(3 / (4 * math.pi)))
    m_nonzero = [sh_index(l, m) for l in range(8) for m in range(-l, l + 1) if m != 0]
    np.testing.assert_allclose(b[m_nonzero], 0.0, atol=1e-15)


def test_matches_scipy(rng):
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ours = sh_basis_batch(dirs)
    for l in range(8):
        for m in range(-l, l + 1):
            np.testing.assert_allclose(ours[:, sh_index(l, m)], scipy_real_sh(l, m, dirs), atol=1e-12)


def test_non_unit_rejected():
    with pytest.raises(ContractViolation):
        sh_basis([0, 0, 2.0])
    with pytest.raises(ContractViolation):
        project(np.array([[0, 0, 2.0]] * 100), np.ones(100))


def test_gram_matrix_identity():
    dirs, w = lebedev_like()
    y = sh_basis_batch(dirs)
    gram = (y * w[:, None]).T @ y
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() < 1e-3
    assert np.abs(np.diag(gram) - 1).max() < 1e-3


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gram_matrix_randomized_qmc(seed):
    # 1e5 scrambled Sobol points mapped area-preservingly onto the sphere
    u = qmc.Sobol(2, scramble=True, seed=seed).random(2 ** 17)[:100_000]
    z = 1 - 2 * u[:, 0]
    r = np.sqrt(1 - z * z)
    d = np.stack([r * np.cos(2 * np.pi * u[:, 1]), r * np.sin(2 * np.pi * u[:, 1]), z], 1)
    y = sh_basis_batch(d)
    gram = y.T @ y * (4 * math.pi / len(d))
    assert np.abs(gram - np.eye(64)).max() < 1e-2


def test_eval_examples():
    e00 = np.zeros(64)
    e00[0] = 1.0
    for d in fibonacci_sphere(20):
        assert sh_eval(e00, d) == pytest.approx(1 / (2 * math.sqrt(math.pi)))
        assert sh_eval(np.zeros(64), d) == 0.0


def test_delta_kernel_peaks_at_its_axis():
    d0 = np.array([0.3, -0.5, 0.8])
    d0 /= np.linalg.norm(d0)
    grid = np.vstack([fibonacci_sphere(642), d0])
    vals = eval_many(sh_basis(d0), grid)
    assert np.argmax(vals) == len(grid) - 1


@given(unit_dirs, st.floats(-5, 5), st.floats(-5, 5))
def test_eval_linear(d, a, b):
    rng = np.random.default_rng(0)
    c1, c2 = rng.normal(size=64), rng.normal(size=64)
    assert sh_eval(a * c1 + b * c2, d) == pytest.approx(a * sh_eval(c1, d) + b * sh_eval(c2, d), abs=1e-9)


def test_project_constant():
    dirs = fibonacci_sphere(1000)
    c = project(dirs, np.ones(1000))
    assert c[0] == pytest.approx(2 * math.sqrt(math.pi), abs=1e-6)
    np.testing.assert_allclose(c[1:], 0, atol=1e-6)


def test_project_single_harmonic():
    dirs = fibonacci_sphere(1000)
    c = project(dirs, sh_basis_batch(dirs)[:, sh_index(2, 1)])
    expect = np.zeros(64)
    expect[sh_index(2, 1)] = 1
    np.testing.assert_allclose(c, expect, atol=1e-3)


def test_project_hemisphere_against_funk_hecke():
    dirs = fibonacci_sphere(200_000)
    c = project(dirs, (dirs[:, 2] > 0).astype(float))
    assert c[0] == pytest.approx(math.sqrt(math.pi), abs=2e-3)
    assert c[sh_index(1, 0)] == pytest.approx(math.sqrt(3 * math.pi) / 2, abs=2e-3)


def test_band_limited_round_trip(rng):
    coeffs = rng.normal(size=64)
    dirs = fibonacci_sphere(500)
    back = project(dirs, sh_basis_batch(dirs) @ coeffs)
    test = fibonacci_sphere(777)
    assert np.abs(eval_many(back, test) - eval_many(coeffs, test)).max() < 1e-3


def test_rank_deficiency():
    with pytest.raises(RankDeficiencyError):
        project(fibonacci_sphere(40), np.ones(40))
    cap = fibonacci_sphere(2000)
    cap = cap[cap[:, 2] > 0.95]  # a small cap cannot pin down 64 harmonics
    with pytest.raises(RankDeficiencyError):
        project(cap, np.ones(len(cap)))


def test_rotation_covariance(rng):
    coeffs = rng.normal(size=64)
    rot = Rotation.from_euler("zyx", [40, 25, -70], degrees=True).as_matrix()
    proj = Projector(1000)
    f = lambda d: eval_many(coeffs, d)
    # sample f(R d) and project; evaluating at d must equal f evaluated at R d
    g_coeffs = proj(f(proj.dirs @ rot.T))
    test = fibonacci_sphere(300)
    np.testing.assert_allclose(eval_many(g_coeffs, test), f(test @ rot.T), atol=1e-3)


# ---------------------------------------------------------------- history feature

def test_history_empty():
    np.testing.assert_array_equal(camera_history_feature([0, 0, 0], np.zeros((0, 3))), np.zeros(64))


def test_history_peaks_towards_camera():
    h = camera_history_feature([0, 0, 0], [[0, 0, 2.0]])
    grid = fibonacci_sphere(642)
    grid = np.vstack([grid, [0, 0, 1.0]])
    assert np.argmax(eval_many(h, grid)) == len(grid) - 1


def test_history_antipodal_symmetry():
    h = camera_history_feature([0, 0, 0], [[0, 0, 2.0], [0, 0, -3.0]])
    grid = fibonacci_sphere(400)
    np.testing.assert_allclose(eval_many(h, grid), eval_many(h, -grid), atol=1e-6)


def test_history_respects_visibility_mask():
    h = camera_history_feature([0, 0, 0], [[0, 0, 2.0], [2.0, 0, 0]], visible_mask=[False, True])
    ref = camera_history_feature([0, 0, 0], [[2.0, 0, 0]])
    np.testing.assert_allclose(h, ref)
    none = camera_history_feature([0, 0, 0], [[0, 0, 2.0]], visible_mask=[False])
    np.testing.assert_array_equal(none, 0)


def test_history_matches_kernel_least_squares():
    # exact degree-7 projection agrees with a dense least-squares fit of the smooth lobe
    u = np.array([0.0, 0.6, 0.8])
    h = camera_history_feature([0, 0, 0], [u * 3])
    dirs = fibonacci_sphere(4000)
    ls = project(dirs, np.exp(10 * (dirs @ u - 1)))
    np.testing.assert_allclose(h, ls, atol=2e-3)
