import numpy as np
import pytest
from hypothesis import given
from scipy.optimize import brentq

from cryorient import so3
from cryorient.errors import InvalidArgument

from strategies import random_quats, unit_quats

I = np.array([1.0, 0, 0, 0])


def test_distance_identity_and_orthogonal():
    assert so3.geodesic_distance(I, I) == 0.0
    assert so3.geodesic_distance(I, [0, 0, 0, 1.0]) == pytest.approx(np.pi, abs=1e-12)


def test_distance_axis_angle():
    q = [np.cos(np.pi / 4), np.sin(np.pi / 4), 0, 0]
    assert so3.geodesic_distance(I, q) == pytest.approx(np.pi / 2, abs=1e-12)


def test_distance_rejects_non_unit():
    with pytest.raises(InvalidArgument):
        so3.geodesic_distance(I, [1.0, 0.01, 0, 0])


def test_distance_matches_arccos_form(rng):
    a, b = random_quats(rng, 1000), random_quats(rng, 1000)
    ref = 2 * np.arccos(np.clip(np.abs(np.sum(a * b, 1)), -1, 1))
    assert np.allclose(so3.geodesic_distance(a, b), ref, atol=1e-7)


@given(unit_quats(), unit_quats())
def test_distance_symmetric_and_sign_invariant(a, b):
    d = so3.geodesic_distance(a, b)
    assert d == so3.geodesic_distance(b, a)
    assert d == so3.geodesic_distance(a, -b)
    assert 0.0 <= d <= np.pi


@given(unit_quats())
def test_distance_zero_on_double_cover(a):
    assert so3.geodesic_distance(a, -a) == 0.0


def test_triangle_inequality(rng):
    a, b, c = (random_quats(rng, 10_000) for _ in range(3))
    d = so3.geodesic_distance
    assert np.all(d(a, c) <= d(a, b) + d(b, c) + 1e-9)


def test_distance_equals_relative_rotation_angle(rng):
    a, b = random_quats(rng, 500), random_quats(rng, 500)
    Ra, Rb = so3.quat_to_rotmat(a), so3.quat_to_rotmat(b)
    ang = so3.rotation_angle(np.swapaxes(Ra, 1, 2) @ Rb)
    assert np.allclose(so3.geodesic_distance(a, b), ang, atol=1e-7)


def test_left_invariance(rng):
    g, a, b = (random_quats(rng, 1000) for _ in range(3))
    d0 = so3.geodesic_distance(a, b)
    d1 = so3.geodesic_distance(so3.multiply(g, a), so3.multiply(g, b))
    assert np.allclose(d0, d1, atol=1e-9)


# -- conversions ---------------------------------------------------------------

def test_euler_identity():
    assert np.allclose(so3.euler_zyz_to_quat([0, 0, 0]), I)


def test_euler_single_axis():
    q = so3.euler_zyz_to_quat([0, np.pi / 2, 0])
    ref = [np.cos(np.pi / 4), 0, np.sin(np.pi / 4), 0]
    assert so3.geodesic_distance(q, ref) < 1e-9


def _independent_matrix_to_quat(R):
    # trace-based conversion, w branch only (fine for the generic angles used here)
    w = np.sqrt(1 + np.trace(R)) / 2
    return np.array([w, (R[2, 1] - R[1, 2]) / (4 * w), (R[0, 2] - R[2, 0]) / (4 * w), (R[1, 0] - R[0, 1]) / (4 * w)])


def test_euler_matches_matrix_composition():
    psi, theta, phi = np.pi / 3, np.pi / 4, np.pi / 5

    def rz(a):
        return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])

    def ry(a):
        return np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])

    ref = _independent_matrix_to_quat(rz(psi) @ ry(theta) @ rz(phi))
    q = so3.euler_zyz_to_quat([psi, theta, phi])
    assert so3.geodesic_distance(q, ref) < 1e-9


def test_euler_round_trip(rng):
    e = np.column_stack([rng.uniform(0, 2 * np.pi, 500), rng.uniform(0, np.pi, 500), rng.uniform(0, 2 * np.pi, 500)])
    q = so3.euler_zyz_to_quat(e)
    back = so3.quat_to_euler_zyz(q)
    assert np.all(so3.geodesic_distance(so3.euler_zyz_to_quat(back), q) < 1e-9)
    assert np.all(back >= 0) and np.all(back[:, [0, 2]] < 2 * np.pi)


@pytest.mark.parametrize("theta", [0.0, np.pi])
def test_euler_gimbal_preserves_rotation(theta):
    q = so3.euler_zyz_to_quat([0.7, theta, 1.1])
    back = so3.quat_to_euler_zyz(q)
    assert so3.geodesic_distance(so3.euler_zyz_to_quat(back), q) < 1e-9


def test_rotmat_examples():
    assert np.allclose(so3.quat_to_rotmat(I), np.eye(3))
    assert np.allclose(so3.quat_to_rotmat([0, 1.0, 0, 0]), np.diag([1, -1, -1]))


def test_rotmat_is_rotation(rng):
    R = so3.quat_to_rotmat(random_quats(rng, 1000))
    assert np.allclose(np.swapaxes(R, 1, 2) @ R, np.eye(3), atol=1e-9)
    assert np.allclose(np.linalg.det(R), 1.0, atol=1e-9)


@given(unit_quats())
def test_rotmat_sign_invariant(q):
    assert np.allclose(so3.quat_to_rotmat(q), so3.quat_to_rotmat(-q), atol=1e-15)


def test_rotmat_round_trip(rng):
    q = random_quats(rng, 1000)
    back = so3.rotmat_to_quat(so3.quat_to_rotmat(q))
    assert np.all(so3.geodesic_distance(q, back) < 1e-9)


def test_rotmat_rejects_non_unit():
    with pytest.raises(InvalidArgument):
        so3.quat_to_rotmat([2.0, 0, 0, 0])


def test_product_matches_matrix_product(rng):
    a, b = random_quats(rng, 100), random_quats(rng, 100)
    lhs = so3.quat_to_rotmat(so3.multiply(a, b))
    assert np.allclose(lhs, so3.quat_to_rotmat(a) @ so3.quat_to_rotmat(b), atol=1e-12)


def test_canonical_sign():
    q = so3.canonical_sign(np.array([[0.0, -0.6, 0.8, 0.0], [-1.0, 0, 0, 0]]))
    assert np.allclose(q, [[0, 0.6, -0.8, 0], [1, 0, 0, 0]])


# -- uniform sampling ------------------------------------------------------------

def test_sample_uniform_unit_and_deterministic():
    q = so3.sample_uniform(3)
    assert abs(np.linalg.norm(q) - 1) < 1e-12
    assert np.array_equal(so3.sample_uniform(3, 50), so3.sample_uniform(3, 50))


def test_sample_uniform_mean_distance():
    # angle density (1 - cos t) / pi on [0, pi] has mean pi/2 + 2/pi
    q = so3.sample_uniform(11, 100_000)
    ref = np.pi / 2 + 2 / np.pi
    assert ref == pytest.approx(2.21, abs=0.005)
    assert np.mean(so3.geodesic_distance(q, I)) == pytest.approx(ref, abs=0.02)


def test_sample_uniform_median_pair_distance():
    # CDF (t - sin t) / pi, so the median solves t - sin t = pi / 2
    ref = brentq(lambda t: t - np.sin(t) - np.pi / 2, 0, np.pi)
    assert ref == pytest.approx(2.31, abs=0.005)
    a, b = so3.sample_uniform(12, 100_000), so3.sample_uniform(13, 100_000)
    assert np.median(so3.geodesic_distance(a, b)) == pytest.approx(ref, abs=0.02)


# -- symmetry --------------------------------------------------------------------

def test_group_closure():
    for g in (so3.C1, so3.D2):
        els = g.elements
        assert any(np.allclose(e, I) for e in els)
        for a in els:
            for b in els:
                p = so3.multiply(a, b)
                assert min(so3.geodesic_distance(p, e) for e in els) < 1e-12


def test_symmetric_distance_c1_equals_plain(rng):
    a, b = random_quats(rng, 100), random_quats(rng, 100)
    assert np.array_equal(so3.symmetric_distance(a, b, so3.C1), so3.geodesic_distance(a, b))


def test_symmetric_distance_d2_group_element(rng):
    q = random_quats(rng, 20)
    for s in so3.D2.elements:
        assert np.all(so3.symmetric_distance(q, so3.multiply(q, s), so3.D2) < 1e-12)


def test_symmetric_distance_brute_force(rng):
    a, b = random_quats(rng, 300), random_quats(rng, 300)
    brute = np.min([2 * np.arccos(np.clip(np.abs(np.sum(a * so3.multiply(b, s), 1)), 0, 1))
                    for s in so3.D2.elements], axis=0)
    d = so3.symmetric_distance(a, b, so3.D2)
    assert np.allclose(d, brute, atol=1e-7)
    assert np.all(d <= so3.geodesic_distance(a, b) + 1e-15)
    # under D2 no two orientations are farther apart than 2*pi/3
    assert d.max() <= 2 * np.pi / 3 + 1e-9


def test_symmetric_distance_empty_group():
    empty = so3.SymmetryGroup("none", np.zeros((0, 4)))
    with pytest.raises(InvalidArgument):
        so3.symmetric_distance(I, I, empty)


def test_unknown_group():
    with pytest.raises(InvalidArgument):
        so3.symmetry_group("D7")


def _d2_dist(e1, e2):
    return so3.symmetric_distance(so3.euler_zyz_to_quat(e1), so3.euler_zyz_to_quat(e2), so3.D2)


def test_canonicalize_in_range_unchanged():
    e = np.array([0.1, 0.2, 0.3])
    assert np.allclose(so3.canonicalize_d2(e), e, atol=1e-12)


@pytest.mark.parametrize("e", [(0.1, 3 * np.pi / 4, 0.3), (0.1, 0.2, 3 * np.pi / 2)])
def test_canonicalize_examples(e):
    c = so3.canonicalize_d2(e)
    assert c[1] <= np.pi / 2 and 0 <= c[2] < np.pi
    assert _d2_dist(c, e) < 1e-9


def test_canonicalize_random(rng):
    e = np.column_stack([rng.uniform(0, 2 * np.pi, 2000), rng.uniform(0, np.pi, 2000), rng.uniform(0, 2 * np.pi, 2000)])
    c = so3.canonicalize_d2(e)
    assert np.all((c[:, 0] >= 0) & (c[:, 0] < 2 * np.pi))
    assert np.all((c[:, 1] >= 0) & (c[:, 1] <= np.pi / 2))
    assert np.all((c[:, 2] >= 0) & (c[:, 2] < np.pi))
    assert np.all(_d2_dist(c, e) < 1e-9)


def test_canonicalize_boundary_stays_in_lower_cell():
    c = so3.canonicalize_d2([0.4, np.pi / 2, 0.5])
    assert c[1] == pytest.approx(np.pi / 2)
    assert c[2] == pytest.approx(0.5)
