"""Rotation representations, conversions, sampling and the geodesic metric.

Matrices are numpy arrays of shape ``(..., 3, 3)``.  Whenever a matrix is
flattened to a vector the order is column-major: entries 0-2 are the first
column, 3-5 the second, 6-8 the third.  Most functions broadcast over leading
batch dimensions.

Euler angles use the intrinsic Z-Y-X convention, ``R = Rz(yaw) Ry(pitch) Rx(roll)``.
Quaternions are stored ``(w, x, y, z)``.
"""

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .tolerances import ORTHONORMAL_TOL, UNIT_AXIS_TOL


class AxisAngle(NamedTuple):
    axis: np.ndarray
    angle: float


class EulerAngles(NamedTuple):
    yaw: float
    pitch: float
    roll: float
    gimbal_lock: bool = False


# ---------------------------------------------------------------------------
# small helpers


def skew(v):
    """Cross-product matrix ``[v]x`` so that ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    """Inverse of :func:`skew` applied to the antisymmetric part of ``m`` (times 2)."""
    m = np.asarray(m, dtype=float)
    return np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def flatten(m):
    """Column-major flattening ``(..., 3, 3) -> (..., 9)``."""
    m = np.asarray(m, dtype=float)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (9,))


def unflatten(v):
    """Inverse of :func:`flatten`."""
    v = np.asarray(v, dtype=float)
    return np.swapaxes(v.reshape(v.shape[:-1] + (3, 3)), -1, -2)


def as_mat3(m):
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    return m


def orthonormality_error(m):
    """Frobenius norm of ``m^T m - I``."""
    m = np.asarray(m, dtype=float)
    gram = np.swapaxes(m, -1, -2) @ m
    return np.linalg.norm(gram - np.eye(3), axis=(-2, -1))


def is_rotation(m, tol=ORTHONORMAL_TOL):
    m = np.asarray(m, dtype=float)
    return bool(np.all(orthonormality_error(m) < tol) and np.all(np.linalg.det(m) > 0))


def _require_rotation(m):
    m = as_mat3(m)
    if not is_rotation(m):
        raise InvalidInputError("input is not a rotation matrix within tolerance")
    return m


# ---------------------------------------------------------------------------
# axis-angle / rotation vector


def axis_angle_to_matrix(axis, angle):
    """Rodrigues' formula for a unit ``axis`` and an ``angle`` in radians."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    norms = np.linalg.norm(axis, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_AXIS_TOL):
        raise InvalidInputError("axis must have unit norm")
    k = skew(axis)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def matrix_to_axis_angle(r):
    """Inverse of :func:`axis_angle_to_matrix` with the angle in ``[0, pi]``.

    At the ``angle == pi`` branch the axis is only defined up to sign; the
    returned axis satisfies ``axis . (1, 1, 1) >= 0`` (ties broken by the
    first nonzero component being positive).
    """
    r = _require_rotation(r)
    if r.ndim != 2:
        raise InvalidInputError("matrix_to_axis_angle takes a single matrix")
    w = vee(r)  # 2 sin(angle) * axis
    sin_a = 0.5 * np.linalg.norm(w)
    cos_a = 0.5 * (np.trace(r) - 1.0)
    angle = float(np.arctan2(sin_a, cos_a))
    if sin_a < 1e-300 and cos_a > 0:
        return AxisAngle(np.array([0.0, 0.0, 1.0]), 0.0)
    if cos_a > 0:
        return AxisAngle(w / np.linalg.norm(w), angle)
    # near pi the skew part vanishes; recover the axis from the symmetric part
    outer = (0.5 * (r + r.T) - cos_a * np.eye(3)) / (1.0 - cos_a)
    col = int(np.argmax(np.diag(outer)))
    axis = outer[:, col] / np.sqrt(outer[col, col])
    axis /= np.linalg.norm(axis)
    ref = w @ axis
    if abs(ref) > 1e-12:
        if ref < 0:
            axis = -axis
    else:
        lead = axis.sum()
        if abs(lead) < 1e-12:
            lead = axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]]
        if lead < 0:
            axis = -axis
    return AxisAngle(axis, angle)


def _rotvec_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2 and their derivatives divided by t."""
    theta = np.asarray(theta, dtype=float)
    small = theta < 1e-2
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1 - t2 / 6 + t2**2 / 120 - t2**3 / 5040, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24 + t2**2 / 720 - t2**3 / 40320, (1 - np.cos(t)) / t**2)
    da = np.where(
        small,
        -1 / 3 + t2 / 30 - t2**2 / 840 + t2**3 / 45360,
        (t * np.cos(t) - np.sin(t)) / t**3,
    )
    db = np.where(
        small,
        -1 / 12 + t2 / 180 - t2**2 / 6720 + t2**3 / 453600,
        (t * np.sin(t) - 2 * (1 - np.cos(t))) / t**4,
    )
    return a, b, da, db


def rotvec_to_matrix(v):
    """Rotation vector (axis * angle, unconstrained 3-vector) to matrix."""
    v = np.asarray(v, dtype=float)
    a, b, _, _ = _rotvec_coeffs(np.linalg.norm(v, axis=-1))
    k = skew(v)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotvec_jacobian(v):
    """d flatten(R) / d v, shape ``(..., 9, 3)``."""
    v = np.asarray(v, dtype=float)
    a, b, da, db = _rotvec_coeffs(np.linalg.norm(v, axis=-1))
    k = skew(v)
    k2 = k @ k
    cols = []
    for i in range(3):
        e = skew(np.eye(3)[i])
        vi = v[..., i][..., None, None]
        d = (
            da[..., None, None] * vi * k
            + a[..., None, None] * e
            + db[..., None, None] * vi * k2
            + b[..., None, None] * (e @ k + k @ e)
        )
        cols.append(flatten(d))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# quaternions


def _quat_products(q):
    w, x, y, z = (q[..., i] for i in range(4))
    return w, x, y, z


def quat_to_matrix(q):
    """Unit quaternion ``(w, x, y, z)`` to matrix; the input is normalized first."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise InvalidInputError("quaternion has (near) zero norm")
    w, x, y, z = _quat_products(q / n)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def quat_jacobian(q):
    """d flatten(quat_to_matrix(q)) / d q including the normalization, ``(..., 9, 4)``."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1)
    u = q / n[..., None]
    w, x, y, z = _quat_products(u)
    zero = np.zeros_like(w)
    # rows: column-major entries of R; columns: d/dw, d/dx, d/dy, d/dz
    rows = [
        [zero, zero, -4 * y, -4 * z],  # R00
        [2 * z, 2 * y, 2 * x, 2 * w],  # R10
        [-2 * y, 2 * z, -2 * w, 2 * x],  # R20
        [-2 * z, 2 * y, 2 * x, -2 * w],  # R01
        [zero, -4 * x, zero, -4 * z],  # R11
        [2 * x, 2 * w, 2 * z, 2 * y],  # R21
        [2 * y, 2 * z, 2 * w, 2 * x],  # R02
        [-2 * x, -2 * w, 2 * z, 2 * y],  # R12
        [zero, -4 * x, -4 * y, zero],  # R22
    ]
    d_unit = np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)
    proj = (np.eye(4) - u[..., :, None] * u[..., None, :]) / n[..., None, None]
    return d_unit @ proj


def matrix_to_quat(r):
    """Rotation matrix to unit quaternion with ``w >= 0``."""
    r = _require_rotation(r)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


# ---------------------------------------------------------------------------
# Euler angles (intrinsic Z-Y-X)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def euler_to_matrix(e):
    """``(yaw, pitch, roll)`` to ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    e = np.asarray(e[:3] if isinstance(e, EulerAngles) else e, dtype=float)
    return _rz(e[..., 0]) @ _ry(e[..., 1]) @ _rx(e[..., 2])


def euler_jacobian(e):
    """d flatten(euler_to_matrix(e)) / d (yaw, pitch, roll), shape ``(..., 9, 3)``."""
    e = np.asarray(e, dtype=float)
    yaw, pitch, roll = e[..., 0], e[..., 1], e[..., 2]
    rz, ry, rx = _rz(yaw), _ry(pitch), _rx(roll)
    half = np.pi / 2
    # d/da R(a) equals R(a + pi/2) with the fixed-axis row/column zeroed
    drz = _rz(yaw + half) * np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0]])
    dry = _ry(pitch + half) * np.array([[1, 0, 1], [0, 0, 0], [1, 0, 1]])
    drx = _rx(roll + half) * np.array([[0, 0, 0], [0, 1, 1], [0, 1, 1]])
    cols = [drz @ ry @ rx, rz @ dry @ rx, rz @ ry @ drx]
    return np.stack([flatten(c) for c in cols], axis=-1)


def matrix_to_euler(r):
    """Rotation matrix to intrinsic Z-Y-X angles.

    At gimbal lock (``|pitch| = pi/2``) roll is set to zero, yaw absorbs the
    free angle and ``gimbal_lock`` is True.
    """
    r = _require_rotation(r)
    pitch = float(np.arctan2(-r[2, 0], np.hypot(r[0, 0], r[1, 0])))
    if np.hypot(r[0, 0], r[1, 0]) > 1e-9:
        yaw = float(np.arctan2(r[1, 0], r[0, 0]))
        roll = float(np.arctan2(r[2, 1], r[2, 2]))
        return EulerAngles(yaw, pitch, roll, False)
    if r[2, 0] < 0:
        yaw = float(np.arctan2(-r[0, 1], r[0, 2]))
    else:
        yaw = float(np.arctan2(-r[0, 1], -r[0, 2]))
    return EulerAngles(yaw, pitch, 0.0, True)


# ---------------------------------------------------------------------------
# metric, sampling, noise


def geodesic_angle(ra, rb):
    """Rotation angle of ``ra^T rb`` in radians, in ``[0, pi]``."""
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    tr = np.einsum("...ij,...ij->...", ra, rb)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def sample_rotations(rng, n, max_angle=np.pi):
    """``n`` rotations with Gaussian-normalized axes and angles uniform on ``[0, max_angle]``.

    This is uniform in axis and angle, not Haar-uniform on SO(3): small
    angles are over-represented relative to the Haar measure.
    """
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=n)
    k = skew(axes)
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def sample_rotation(rng):
    return sample_rotations(rng, 1)[0]


def perturb_rotation(r, sigma, rng):
    """Add i.i.d. ``N(0, sigma^2)`` noise to every entry; the result is a pseudo rotation."""
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    r = np.asarray(r, dtype=float)
    noise = rng.normal(scale=sigma, size=r.shape) if sigma > 0 else 0.0
    return r + noise
