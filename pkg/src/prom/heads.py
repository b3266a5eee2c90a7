"""Representation heads: network output -> matrix, with batched Jacobians.

A head is the pair ``(r, g)`` from the pipeline ``theta -> r(theta) -> g(r(theta))``.
``r`` maps the raw output to a 3x3 matrix and ``g`` is the training-time
orthogonalization.  All functions here operate on a batch ``(B, dim)``.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .ortho import six_d_jacobian, six_d_to_matrix, svd_orthogonalize_jacobian, svd_orthogonalize_special
from .rotcore import (
    euler_jacobian,
    euler_to_matrix,
    flatten,
    quat_jacobian,
    quat_to_matrix,
    rotvec_jacobian,
    rotvec_to_matrix,
    unflatten,
)


def _quat_forward(out):
    n = np.linalg.norm(out, axis=-1, keepdims=True)
    return quat_to_matrix(out / np.maximum(n, 1e-300))


# -- orthogonalization maps on 3x3 matrices, each with (forward, jacobian) --------


def _gs_forward(m):
    return six_d_to_matrix(np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1), check=False)


def _gs_jacobian(m):
    theta = np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)
    jac = np.zeros(m.shape[:-2] + (9, 9))
    jac[..., :, :6] = six_d_jacobian(theta, check=False)
    return jac


def _svd_jacobian(m):
    return svd_orthogonalize_jacobian(m, special=True).jacobian


ORTHO = {
    "identity": (lambda m: m, None),
    # r_GS applied to the first two columns; the third column is discarded
    "gs": (_gs_forward, _gs_jacobian),
    "svd": (svd_orthogonalize_special, _svd_jacobian),
}

ORTHO_ALIASES = {"id": "identity", "identity": "identity", "gs": "gs", "6d": "gs", "svd": "svd"}


def ortho_name(name):
    try:
        return ORTHO_ALIASES[name]
    except KeyError:
        raise InvalidInputError(f"unknown orthogonalization {name!r}") from None


def ortho_forward(name, m):
    return ORTHO[ortho_name(name)][0](m)


def ortho_vjp(name, m, grad):
    """Pull ``dL/d g(m)`` (shape ``(..., 3, 3)``) back to ``dL/dm``."""
    jac_fn = ORTHO[ortho_name(name)][1]
    if jac_fn is None:
        return grad
    g = np.einsum("...i,...ij->...j", flatten(grad), jac_fn(m))
    return unflatten(g)


@dataclass(frozen=True)
class ReprHead:
    name: str
    dim: int
    r_forward: Callable
    r_jacobian: Callable
    ortho: str = "identity"

    def matrix(self, out):
        """``r(theta)``: the unorthogonalized matrix ``R0``."""
        return self.r_forward(out)

    def forward(self, out):
        """``g(r(theta))``: the matrix used by the training losses."""
        return ortho_forward(self.ortho, self.r_forward(out))

    def vjp(self, out, grad_matrix):
        """Pull ``dL/d g(r(theta))`` back to ``dL/d theta``."""
        r0 = self.r_forward(out)
        g0 = ortho_vjp(self.ortho, r0, grad_matrix)
        return np.einsum("...i,...ij->...j", flatten(g0), self.r_jacobian(out))


def _identity_jacobian(out):
    return np.broadcast_to(np.eye(9), out.shape[:-1] + (9, 9))


HEADS = {
    "axis_angle": ReprHead("axis_angle", 3, rotvec_to_matrix, rotvec_jacobian),
    "euler": ReprHead("euler", 3, euler_to_matrix, euler_jacobian),
    "quat": ReprHead("quat", 4, _quat_forward, quat_jacobian),
    "six_d": ReprHead("six_d", 6, lambda o: six_d_to_matrix(o, check=False), lambda o: six_d_jacobian(o, check=False)),
    "prom": ReprHead("prom", 9, unflatten, _identity_jacobian),
    "svd": ReprHead("svd", 9, unflatten, _identity_jacobian, ortho="svd"),
    "gs": ReprHead("gs", 9, unflatten, _identity_jacobian, ortho="gs"),
}


def get_head(name):
    try:
        return HEADS[name]
    except KeyError:
        raise InvalidInputError(f"unknown head {name!r}; choose from {sorted(HEADS)}") from None
