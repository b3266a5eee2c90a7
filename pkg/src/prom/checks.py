"""Finite-difference self-validation of every analytic derivative in the package."""

from dataclasses import dataclass

import numpy as np

from .chain import ChainPose, KinematicChain, fk_jacobian, forward_kinematics
from .ortho import (
    finite_difference_jacobian,
    gram_schmidt,
    gram_schmidt_jacobian,
    six_d_jacobian,
    six_d_to_matrix,
    svd_orthogonalize,
    svd_orthogonalize_jacobian,
    svd_orthogonalize_special,
)
from .rotcore import flatten, unflatten
from .tinynet import Mlp, grad_check


@dataclass
class CheckResult:
    name: str
    samples: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<12} n={self.samples:<6} max_rel_err={self.max_rel_error:.3e}  tol={self.tolerance:.0e}"


def _rel_error(analytic, numeric):
    """Per-sample Frobenius relative error."""
    num = np.linalg.norm(analytic - numeric, axis=(-2, -1))
    den = np.maximum(np.linalg.norm(numeric, axis=(-2, -1)), 1e-12)
    return num / den


def check_six_d(rng, n):
    theta = rng.normal(size=(n, 6))
    fd = finite_difference_jacobian(lambda t: flatten(six_d_to_matrix(t)), theta)
    return float(_rel_error(six_d_jacobian(theta), fd).max())


def check_gram_schmidt(rng, n):
    p = rng.normal(size=(n, 3, 3))
    fd = finite_difference_jacobian(lambda x: flatten(gram_schmidt(unflatten(x))), flatten(p))
    return float(_rel_error(gram_schmidt_jacobian(p), fd).max())


def check_svd(rng, n):
    """Both the ``U V^T`` and the special projection, on samples away from repeated singular values."""
    p = rng.normal(size=(n, 3, 3))
    worst = 0.0
    for special, fn in ((False, svd_orthogonalize), (True, svd_orthogonalize_special)):
        res = svd_orthogonalize_jacobian(p, special=special)
        keep = ~res.near_degenerate
        fd = finite_difference_jacobian(lambda x: flatten(fn(unflatten(x))), flatten(p[keep]))
        worst = max(worst, float(_rel_error(res.jacobian[keep], fd).max()))
    return worst


def check_fk(rng, n, n_joints=4):
    chain = KinematicChain(rng.normal(size=(n_joints, 3)))
    mats = rng.normal(size=(n, n_joints, 3, 3))

    def positions(x):
        m = np.swapaxes(x.reshape(x.shape[:-1] + (n_joints, 3, 3)), -1, -2)
        return forward_kinematics(chain, ChainPose(m)).reshape(x.shape[:-1] + (-1,))

    x = np.swapaxes(mats, -1, -2).reshape(n, -1)  # joint-major, each matrix column-major
    fd = finite_difference_jacobian(positions, x)
    return float(_rel_error(fk_jacobian(chain, ChainPose(mats)), fd).max())


def check_mlp(rng, n):
    """``n`` parameters of a small tanh network probed against central differences."""
    net = Mlp([9, 32, 32, 9], rng=rng)
    x = rng.normal(size=(16, 9))
    target = rng.normal(size=(16, 9))

    def loss_fn(out):
        diff = out - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    fraction = min(1.0, n / net.n_params)
    return grad_check(net, loss_fn, x, fraction=fraction, rng=rng)


# (name, function, relative tolerance)
CHECKS = (
    ("six_d", check_six_d, 1e-5),
    ("gram_schmidt", check_gram_schmidt, 1e-5),
    ("svd", check_svd, 1e-4),
    ("fk", check_fk, 1e-6),
    ("mlp", check_mlp, 1e-4),
)


def run_checks(n_samples=1000, seed=42):
    results = []
    for i, (name, fn, tol) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        with np.errstate(all="ignore"):
            err = fn(rng, n_samples)
        results.append(CheckResult(name, n_samples, err, tol))
    return results
