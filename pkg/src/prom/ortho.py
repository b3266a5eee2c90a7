"""Orthogonalization maps and their analytic Jacobians.

Three forward maps turn an unconstrained network output into an orthonormal
matrix: full Gram-Schmidt on three columns, the 6D recovery (two columns
plus a cross product) and the SVD projection ``U V^T``.  The pseudo rotation
matrix (PRoM) pathway uses none of them; its "map" is the identity.

Jacobians are laid out with rows indexing the column-major flattened output
and columns indexing the column-major flattened input.  All functions accept
leading batch dimensions.
"""

from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .linalg import svd3, symmetric_eigenvalues
from .rotcore import flatten, skew, unflatten
from .tolerances import (
    DEGENERATE_NORM,
    FD_STEP,
    PSI_ZERO_EIGENVALUE,
    SVD_ANALYTIC_MIN_GAP,
    SVD_NEAR_DEGENERATE_GAP,
)


class SvdJacobian(NamedTuple):
    """Jacobian of an SVD orthogonalization plus diagnostics.

    ``k_max`` is the largest ``|1 / (s_i^2 - s_j^2)|`` entry of the K matrix and
    ``factor_norm`` the Frobenius norm of ``d(U, V) / dP``; both blow up as two
    singular values approach each other.  ``finite_difference`` marks samples
    whose gap was too small for the analytic route.
    """

    jacobian: np.ndarray
    near_degenerate: np.ndarray
    finite_difference: np.ndarray
    k_max: np.ndarray
    factor_norm: np.ndarray


def _norm(x):
    return np.linalg.norm(x, axis=-1)


def normalize_jacobian(v):
    """Gradient of ``v -> v / |v|``: ``(I - v v^T / |v|^2) / |v|``."""
    v = np.asarray(v, dtype=float)
    n = _norm(v)[..., None, None]
    return (np.eye(3) - v[..., :, None] * v[..., None, :] / n**2) / n


def _check(norms, stage, check):
    if check and np.any(norms < DEGENERATE_NORM):
        raise DegenerateInputError(f"projection collapsed at {stage}", stage=stage)


def _dot(a, b):
    return np.sum(a * b, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Gram-Schmidt on all three columns


def _gram_schmidt_parts(p, check=True):
    p = np.asarray(p, dtype=float)
    p1, p2, p3 = p[..., 0], p[..., 1], p[..., 2]
    u1 = p1
    n1 = _norm(u1)
    _check(n1, "q1", check)
    q1 = u1 / n1[..., None]
    u2 = p2 - _dot(q1, p2) * q1
    n2 = _norm(u2)
    _check(n2, "q2", check)
    q2 = u2 / n2[..., None]
    u3 = p3 - _dot(q1, p3) * q1 - _dot(q2, p3) * q2
    n3 = _norm(u3)
    _check(n3, "q3", check)
    q3 = u3 / n3[..., None]
    return (u1, u2, u3), (q1, q2, q3)


def gram_schmidt(p, check=True):
    """Classical Gram-Schmidt on the columns of ``p``."""
    _, qs = _gram_schmidt_parts(p, check)
    return np.stack(qs, axis=-1)


def gram_schmidt_jacobian(p, check=True):
    """Analytic ``(..., 9, 9)`` Jacobian of :func:`gram_schmidt`."""
    p = np.asarray(p, dtype=float)
    (u1, u2, u3), (q1, q2, q3) = _gram_schmidt_parts(p, check)
    p2, p3 = p[..., 1], p[..., 2]
    eye = np.eye(3)
    zero = np.zeros(p.shape[:-2] + (3, 3))
    outer = lambda a, b: a[..., :, None] * b[..., None, :]  # noqa: E731

    n1, n2, n3 = normalize_jacobian(u1), normalize_jacobian(u2), normalize_jacobian(u3)
    # d(q_j . x) q_j / d q_j = q_j x^T + (q_j . x) I
    proj2 = outer(q1, p2) + _dot(q1, p2)[..., None] * eye
    proj31 = outer(q1, p3) + _dot(q1, p3)[..., None] * eye
    proj32 = outer(q2, p3) + _dot(q2, p3)[..., None] * eye

    dq1 = [n1, zero, zero]
    du2 = [-proj2 @ n1, eye - outer(q1, q1), zero]
    dq2 = [n2 @ d for d in du2]
    du3 = [
        -proj31 @ dq1[0] - proj32 @ dq2[0],
        -proj32 @ dq2[1],
        eye - outer(q1, q1) - outer(q2, q2),
    ]
    dq3 = [n3 @ d for d in du3]
    rows = [np.concatenate(blocks, axis=-1) for blocks in (dq1, dq2, dq3)]
    return np.concatenate(rows, axis=-2)


# ---------------------------------------------------------------------------
# 6D representation


def _split_six_d(theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 6:
        raise InvalidInputError(f"6D input must have trailing size 6, got {theta.shape}")
    return theta[..., :3], theta[..., 3:]


def _six_d_parts(theta, check=True):
    t1, t2 = _split_six_d(theta)
    n1 = _norm(t1)
    _check(n1, "r1", check)
    r1 = t1 / n1[..., None]
    r2pp = t2 - _dot(r1, t2) * r1
    n2 = _norm(r2pp)
    _check(n2, "r2''", check)
    r2 = r2pp / n2[..., None]
    r3 = np.cross(r1, r2)
    return t1, t2, r1, r2, r3, r2pp


def six_d_to_matrix(theta, check=True):
    """Recover a rotation from its first two columns ``theta = [t1, t2]``.

    ``r1 = N(t1)``, ``r2 = N(t2 - (r1 . t2) r1)``, ``r3 = r1 x r2``.
    """
    _, _, r1, r2, r3, _ = _six_d_parts(theta, check)
    return np.stack([r1, r2, r3], axis=-1)


def six_d_blocks(theta, check=True):
    """The column Jacobian blocks of the 6D map.

    Returns a dict keyed ``(i, j)`` with ``d r_i / d t_j`` (1-based), plus the
    intermediate vectors under ``"r1"``, ``"r2"``, ``"r3"`` and ``"r2pp"``.
    """
    t1, t2, r1, r2, r3, r2pp = _six_d_parts(theta, check)
    eye = np.eye(3)
    d11 = normalize_jacobian(t1)
    nr2 = normalize_jacobian(r2pp)
    d_r2pp_d_r1 = -(_dot(r1, t2)[..., None] * eye + r1[..., :, None] * t2[..., None, :])
    d21 = nr2 @ d_r2pp_d_r1 @ d11
    d22 = nr2 @ (eye - r1[..., :, None] * r1[..., None, :])
    k1, k2 = skew(r1), skew(r2)
    d31 = k1 @ d21 - k2 @ d11
    d32 = k1 @ d22
    zero = np.zeros_like(d11)
    return {
        (1, 1): d11, (1, 2): zero,
        (2, 1): d21, (2, 2): d22,
        (3, 1): d31, (3, 2): d32,
        "r1": r1, "r2": r2, "r3": r3, "r2pp": r2pp,
    }


def six_d_jacobian(theta, check=True):
    """Analytic ``(..., 9, 6)`` Jacobian of :func:`six_d_to_matrix`."""
    b = six_d_blocks(theta, check)
    rows = [np.concatenate([b[(i, 1)], b[(i, 2)]], axis=-1) for i in (1, 2, 3)]
    return np.concatenate(rows, axis=-2)


# ---------------------------------------------------------------------------
# SVD orthogonalization


def svd_orthogonalize(p):
    """``U V^T`` from the SVD of ``p``; a reflection when ``det(p) < 0``."""
    u, _, v = svd3(np.asarray(p, dtype=float))
    return u @ np.swapaxes(v, -1, -2)


def _det_sign(u, v):
    return np.where(np.linalg.det(u) * np.linalg.det(v) < 0, -1.0, 1.0)


def svd_orthogonalize_special(p):
    """Nearest rotation (det +1): ``U diag(1, 1, det(U V^T)) V^T``."""
    u, _, v = svd3(np.asarray(p, dtype=float))
    d = np.ones(u.shape[:-1])
    d[..., 2] = _det_sign(u, v)
    return (u * d[..., None, :]) @ np.swapaxes(v, -1, -2)


def _svd_k_route(p, special):
    """Jacobian of ``U D V^T`` assembled from dU and dV with the K matrix."""
    u, s, v = svd3(p)
    d = np.ones(u.shape[:-1])
    if special:
        d[..., 2] = _det_sign(u, v)
    lam = s * s
    diff = lam[..., None, :] - lam[..., :, None]  # lam_j - lam_i
    offdiag = ~np.eye(3, dtype=bool)
    with np.errstate(divide="ignore"):
        k = np.where(offdiag, 1.0 / np.where(offdiag, diff, 1.0), 0.0)
    sig = s[..., None, :]  # broadcasts as right-multiplication by diag(s)
    # X_k = U^T E_k V for the 9 column-major basis directions E_k = e_a e_b^T
    a_idx = np.tile(np.arange(3), 3)
    b_idx = np.repeat(np.arange(3), 3)
    x = u[..., a_idx, :, None] * v[..., b_idx, None, :]  # (..., 9, 3, 3)
    xt = np.swapaxes(x, -1, -2)
    kb = k[..., None, :, :]
    sb = sig[..., None, :, :]
    sc = np.swapaxes(sb, -1, -2)  # left-multiplication by diag(s)
    du = u[..., None, :, :] @ (kb * (x * sb + sc * xt))
    dv = v[..., None, :, :] @ (kb * (sc * x + xt * sb))
    dmat = d[..., None, None, :]
    vt = np.swapaxes(v, -1, -2)[..., None, :, :]
    dr = (du * dmat) @ vt + (u[..., None, :, :] * dmat) @ np.swapaxes(dv, -1, -2)
    jac = np.swapaxes(flatten(dr), -1, -2)
    factor = np.sqrt(np.sum(du**2, axis=(-3, -2, -1)) + np.sum(dv**2, axis=(-3, -2, -1)))
    gaps = np.abs(np.stack([s[..., 0] - s[..., 1], s[..., 1] - s[..., 2], s[..., 0] - s[..., 2]], -1))
    return jac, np.abs(k).max(axis=(-2, -1)), factor, gaps.min(axis=-1), s


def svd_orthogonalize_jacobian(p, special=False, step=FD_STEP):
    """Jacobian of the SVD orthogonalization via the K-matrix construction.

    With ``special=False`` the map is ``U V^T``; with ``special=True`` it is
    the det-corrected projection onto SO(3).  For ``U V^T`` the ``1/(s_i^2 - s_j^2)``
    terms cancel exactly, so the composed Jacobian stays bounded even though
    ``k_max`` and ``factor_norm`` explode; for the special projection with a
    negative determinant the pair ``(2, 3)`` does not cancel and the Jacobian
    itself grows like ``1 / (s_2 - s_3)``.

    Samples whose smallest gap is below ``SVD_ANALYTIC_MIN_GAP`` fall back to
    central finite differences.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("matrix has non-finite entries")
    with np.errstate(invalid="ignore", over="ignore"):
        jac, k_max, factor, gap, s = _svd_k_route(p, special)
    scale = np.maximum(s[..., 0], 1e-300)
    near = gap < SVD_NEAR_DEGENERATE_GAP * scale
    use_fd = (gap < SVD_ANALYTIC_MIN_GAP * scale) | ~np.all(np.isfinite(jac), axis=(-2, -1))
    if np.any(use_fd):
        fn = svd_orthogonalize_special if special else svd_orthogonalize
        fd = finite_difference_jacobian(lambda x: flatten(fn(unflatten(x))), flatten(p[use_fd]), step)
        jac = jac.copy()
        jac[use_fd] = fd
    return SvdJacobian(jac, near, use_fd, k_max, factor)


# ---------------------------------------------------------------------------
# PRoM and the convergence factor


def prom_identity(p):
    """Pseudo rotation matrix pathway: no orthogonalization at all."""
    return np.array(p, dtype=float, copy=True)


def prom_jacobian(batch_shape=()):
    return np.broadcast_to(np.eye(9), tuple(batch_shape) + (9, 9)).copy()


def lambda_min_gram(m):
    """Smallest eigenvalue of ``M M^T`` via the Jacobi solver."""
    m = np.asarray(m, dtype=float)
    return symmetric_eigenvalues(m @ np.swapaxes(m, -1, -2))[..., 0]


def psi(m):
    """``1 / sqrt(lambda_min(M M^T))``, or ``inf`` when that eigenvalue is numerically zero."""
    lam = lambda_min_gram(m)
    out = np.where(lam < PSI_ZERO_EIGENVALUE, np.inf, 1.0 / np.sqrt(np.maximum(lam, PSI_ZERO_EIGENVALUE)))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_jacobian(fn, x, step=FD_STEP):
    """Central-difference Jacobian of ``fn: (..., n) -> (..., m)``, shape ``(..., m, n)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)
