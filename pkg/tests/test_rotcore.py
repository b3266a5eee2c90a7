import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prom.errors import InvalidInputError
from prom.ortho import finite_difference_jacobian
from prom.rotcore import (
    axis_angle_to_matrix,
    euler_jacobian,
    euler_to_matrix,
    flatten,
    geodesic_angle,
    is_rotation,
    matrix_to_axis_angle,
    matrix_to_euler,
    matrix_to_quat,
    perturb_rotation,
    quat_jacobian,
    quat_to_matrix,
    rotvec_jacobian,
    rotvec_to_matrix,
    sample_rotation,
    sample_rotations,
    skew,
    unflatten,
    vee,
)

unit = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(unit, unit, unit).map(np.array).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_flatten_is_column_major():
    m = np.arange(9.0).reshape(3, 3)
    assert flatten(m).tolist() == [0, 3, 6, 1, 4, 7, 2, 5, 8]
    assert np.array_equal(unflatten(flatten(m)), m)


def test_skew_matches_cross_and_vee_inverts_it():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b))
    assert np.allclose(vee(skew(a)), 2 * a)


def test_quarter_turn_about_z():
    r = axis_angle_to_matrix([0, 0, 1], np.pi / 2)
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0])


def test_non_unit_axis_rejected():
    with pytest.raises(InvalidInputError):
        axis_angle_to_matrix([0, 0, 2], 0.3)


@settings(max_examples=200, deadline=None)
@given(vec3, st.floats(0.0, np.pi - 1e-3))
def test_axis_angle_round_trip(axis, angle):
    axis = axis / np.linalg.norm(axis)
    r = axis_angle_to_matrix(axis, angle)
    back = matrix_to_axis_angle(r)
    assert np.allclose(axis_angle_to_matrix(back.axis, back.angle), r, atol=1e-9)
    assert abs(back.angle - angle) < 1e-7


def test_axis_angle_at_pi_uses_positive_sum_convention():
    axis = np.array([-1.0, -2.0, 0.5]) / np.linalg.norm([-1.0, -2.0, 0.5])
    back = matrix_to_axis_angle(axis_angle_to_matrix(axis, np.pi))
    assert back.angle == pytest.approx(np.pi)
    assert np.allclose(back.axis, -axis)
    assert back.axis.sum() >= 0


def test_identity_has_zero_angle():
    assert matrix_to_axis_angle(np.eye(3)).angle == 0.0


def test_non_rotation_rejected():
    with pytest.raises(InvalidInputError):
        matrix_to_quat(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        matrix_to_euler(2 * np.eye(3))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quaternion_round_trip(seed):
    r = sample_rotation(np.random.default_rng(seed))
    q = matrix_to_quat(r)
    assert q[0] >= 0
    assert np.linalg.norm(q) == pytest.approx(1.0)
    assert np.allclose(quat_to_matrix(q), r, atol=1e-12)


def test_quaternion_is_normalized_before_conversion():
    q = np.array([1.0, 2.0, -1.0, 0.5])
    assert np.allclose(quat_to_matrix(3 * q), quat_to_matrix(q))
    with pytest.raises(InvalidInputError):
        quat_to_matrix(np.zeros(4))


@settings(max_examples=200, deadline=None)
@given(st.floats(-3.1, 3.1), st.floats(-1.5, 1.5), st.floats(-3.1, 3.1))
def test_euler_round_trip_away_from_gimbal_lock(yaw, pitch, roll):
    e = matrix_to_euler(euler_to_matrix([yaw, pitch, roll]))
    assert not e.gimbal_lock
    assert np.allclose([e.yaw, e.pitch, e.roll], [yaw, pitch, roll], atol=1e-8)


def test_euler_convention_is_z_then_y_then_x():
    yaw, pitch, roll = 0.3, -0.4, 1.1
    rz = axis_angle_to_matrix([0, 0, 1], yaw)
    ry = axis_angle_to_matrix([0, 1, 0], pitch)
    rx = axis_angle_to_matrix([1, 0, 0], roll)
    assert np.allclose(euler_to_matrix([yaw, pitch, roll]), rz @ ry @ rx)


def test_gimbal_lock_sets_roll_to_zero():
    r = euler_to_matrix([0.7, np.pi / 2, 0.2])
    e = matrix_to_euler(r)
    assert e.gimbal_lock and e.roll == 0.0
    assert np.allclose(euler_to_matrix([e.yaw, e.pitch, e.roll]), r, atol=1e-9)


@pytest.mark.parametrize("fn,jac,dim", [
    (rotvec_to_matrix, rotvec_jacobian, 3),
    (euler_to_matrix, euler_jacobian, 3),
    (quat_to_matrix, quat_jacobian, 4),
])
def test_conversion_jacobians_match_finite_differences(fn, jac, dim):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, dim))
    fd = finite_difference_jacobian(lambda v: flatten(fn(v)), x)
    assert np.allclose(jac(x), fd, atol=1e-7)


def test_rotvec_series_branch_is_continuous():
    v = np.array([3e-3, -2e-3, 1e-3])
    fd = finite_difference_jacobian(lambda x: flatten(rotvec_to_matrix(x)), v, step=1e-7)
    assert np.allclose(rotvec_jacobian(v), fd, atol=1e-7)
    assert np.allclose(rotvec_to_matrix(np.zeros(3)), np.eye(3))


def test_geodesic_angle():
    r = axis_angle_to_matrix([1, 0, 0], 0.8)
    assert geodesic_angle(np.eye(3), r) == pytest.approx(0.8)
    assert geodesic_angle(r, r) == pytest.approx(0.0, abs=1e-7)
    flip = axis_angle_to_matrix([0, 1, 0], np.pi)
    assert geodesic_angle(np.eye(3), flip) == pytest.approx(np.pi)


def test_samples_are_rotations_with_angles_in_range():
    rs = sample_rotations(np.random.default_rng(3), 500, max_angle=1.0)
    assert is_rotation(rs)
    assert geodesic_angle(np.eye(3), rs).max() <= 1.0 + 1e-12


def test_sampling_is_seed_deterministic():
    a = sample_rotations(np.random.default_rng(9), 10)
    b = sample_rotations(np.random.default_rng(9), 10)
    assert np.array_equal(a, b)


def test_zero_noise_perturbation_is_identity_and_consumes_no_draws():
    rng = np.random.default_rng(4)
    r = sample_rotation(rng)
    state = rng.bit_generator.state
    assert np.array_equal(perturb_rotation(r, 0.0, rng), r)
    assert rng.bit_generator.state == state
    with pytest.raises(InvalidInputError):
        perturb_rotation(r, -0.1, rng)
