"""Cyclic Jacobi eigensolver for small symmetric matrices and a 3x3 SVD built on it.

Both routines broadcast over leading batch dimensions; every matrix in a
batch is rotated in lock-step, which keeps the Python loop count at
``sweeps * n * (n - 1) / 2`` regardless of batch size.
"""

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, NumericalError
from .tolerances import JACOBI_MAX_SWEEPS, JACOBI_REL_TOL


class SvdFactors(NamedTuple):
    u: np.ndarray
    s: np.ndarray  # descending, >= 0
    v: np.ndarray


def symmetric_eigh(m, max_sweeps=JACOBI_MAX_SWEEPS, tol=JACOBI_REL_TOL):
    """Eigenvalues (ascending) and eigenvectors (columns) of symmetric ``m``.

    Raises :class:`NumericalError` when the off-diagonal mass is not driven
    below ``tol * ||m||_F`` within ``max_sweeps`` sweeps.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise InvalidInputError(f"expected square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = np.maximum(np.abs(m).max(initial=0.0), 1.0)
    if np.abs(m - np.swapaxes(m, -1, -2)).max(initial=0.0) > 1e-10 * scale:
        raise InvalidInputError("matrix is not symmetric")

    n = m.shape[-1]
    batch_shape = m.shape[:-2]
    a = 0.5 * (m + np.swapaxes(m, -1, -2))
    a = a.reshape((-1, n, n)).copy()
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    thresh = tol * np.linalg.norm(a, axis=(-2, -1))
    iu = np.triu_indices(n, 1)

    for _ in range(max_sweeps):
        off = np.abs(a[:, iu[0], iu[1]]).max(axis=-1, initial=0.0)
        if np.all(off <= thresh):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not active.any():
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                safe_apq = np.where(active, apq, 1.0)
                # a huge theta overflows to inf, giving t = 0: the pair is already diagonal
                with np.errstate(over="ignore"):
                    theta = (aqq - app) / (2.0 * safe_apq)
                    t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[:, None]
                s_ = s[:, None]
                # A <- A J  (columns p, q)
                ap = a[:, :, p].copy()
                aq = a[:, :, q]
                a[:, :, p] = c_ * ap - s_ * aq
                a[:, :, q] = s_ * ap + c_ * aq
                # A <- J^T A  (rows p, q)
                ap = a[:, p, :].copy()
                aq = a[:, q, :]
                a[:, p, :] = c_ * ap - s_ * aq
                a[:, q, :] = s_ * ap + c_ * aq
                a[:, p, q] = np.where(active, 0.0, a[:, p, q])
                a[:, q, p] = a[:, p, q]
                vp = v[:, :, p].copy()
                vq = v[:, :, q]
                v[:, :, p] = c_ * vp - s_ * vq
                v[:, :, q] = s_ * vp + c_ * vq
    else:
        off = np.abs(a[:, iu[0], iu[1]]).max(axis=-1, initial=0.0)
        if np.any(off > thresh):
            raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diagonal(a, axis1=-2, axis2=-1)
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return w.reshape(batch_shape + (n,)), v.reshape(batch_shape + (n, n))


def symmetric_eigenvalues(m, **kwargs):
    """Ascending eigenvalues of a symmetric matrix (or batch of them)."""
    return symmetric_eigh(m, **kwargs)[0]


def svd3(p):
    """SVD of 3x3 matrices via the eigen-decomposition of ``P^T P``.

    ``V`` comes from the Jacobi solver, ``S = sqrt(eig)`` in descending order,
    and ``U`` from ``P V S^-1`` re-orthonormalized column by column.  The third
    left vector is taken along ``u1 x u2`` with its sign matched to ``P v3``,
    so ``U diag(S) V^T`` reproduces ``P`` including its determinant sign.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected 3x3 matrices, got shape {p.shape}")
    w, v = symmetric_eigh(np.swapaxes(p, -1, -2) @ p)
    w = w[..., ::-1]
    v = v[..., ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    pv = p @ v

    def _unit(x, fallback):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        ok = n > 1e-300
        return np.where(ok, x / np.where(ok, n, 1.0), fallback)

    e = np.broadcast_to(np.eye(3), p.shape)
    u1 = _unit(pv[..., 0], e[..., 0])
    u2 = pv[..., 1] - np.sum(u1 * pv[..., 1], axis=-1, keepdims=True) * u1
    # rank-deficient fallback: any unit vector orthogonal to u1
    alt = np.cross(u1, np.eye(3)[np.argmin(np.abs(u1), axis=-1)])
    u2 = _unit(u2, _unit(alt, e[..., 1]))
    u3 = np.cross(u1, u2)
    sign = np.where(np.sum(u3 * pv[..., 2], axis=-1) < 0, -1.0, 1.0)
    u3 = u3 * sign[..., None]
    u = np.stack([u1, u2, u3], axis=-1)
    return SvdFactors(u, s, v)
