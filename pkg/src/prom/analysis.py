"""Gradient diagnostics for orthogonalization maps.

* ``gradient_scatter`` samples ground-truth rotations, perturbs them and
  records how the MSE gradient w.r.t. the (1, 1) output entry relates to the
  entry's error ``x = t'_11 - t_11``.
* ``eigen_verification`` measures ``lambda_min(B B^T)`` for the Jacobian ``B``
  of each map.
* ``explosion_probe`` tracks Jacobian norms as inputs approach a degeneracy.
* ``lr_sweep`` trains the chain task over a learning-rate grid.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .linalg import symmetric_eigenvalues
from .ortho import gram_schmidt_jacobian, six_d_blocks, six_d_to_matrix, svd_orthogonalize_jacobian
from .ortho import svd_orthogonalize_special
from .rotcore import flatten, perturb_rotation, sample_rotation
from .tasks import LossConfig, TrainConfig, train_chain, write_rows
from .tolerances import DEGENERATE_NORM

METHODS = ("gs", "svd", "prom")
_ALIASES = {"gs": "gs", "6d": "gs", "six_d": "gs", "svd": "svd", "prom": "prom"}

# the (1, 1) entry is index 0 in column-major order
_MSE_SCALE = 2.0 / 9.0


def method_name(name):
    try:
        return _ALIASES[name]
    except KeyError:
        raise InvalidInputError(f"unknown method {name!r}; choose from {list(METHODS)}") from None


def draw_pairs(n, sigma, seed):
    """``n`` ground-truth rotations and their noisy copies, one draw pair per iteration."""
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    targets = np.empty((n, 3, 3))
    noisy = np.empty((n, 3, 3))
    for i in range(n):
        targets[i] = sample_rotation(rng)
        noisy[i] = perturb_rotation(targets[i], sigma, rng)
    return targets, noisy


# ---------------------------------------------------------------------------
# gradient scatter


def column_terms(method, noisy, targets):
    """Per-column contributions to ``dL/dt'_11``, shape ``(n, 3)``; they sum to the gradient.

    Term ``i`` is ``(2/9) (r_i - t_i) . d r_i / d t'_11`` where ``r_i`` is column ``i``
    of the orthogonalized output.  Also returns a degenerate flag per sample.
    """
    method = method_name(method)
    n = len(noisy)
    if method == "prom":
        terms = np.zeros((n, 3))
        terms[:, 0] = _MSE_SCALE * (noisy[:, 0, 0] - targets[:, 0, 0])
        return terms, np.zeros(n, dtype=bool)
    if method == "gs":
        theta = np.concatenate([noisy[:, :, 0], noisy[:, :, 1]], axis=-1)
        with np.errstate(all="ignore"):
            blocks = six_d_blocks(theta, check=False)
        pred = np.stack([blocks["r1"], blocks["r2"], blocks["r3"]], axis=-1)
        cols = [blocks[(i, 1)][:, :, 0] for i in (1, 2, 3)]
        degenerate = (np.linalg.norm(noisy[:, :, 0], axis=-1) < DEGENERATE_NORM) | (
            np.linalg.norm(blocks["r2pp"], axis=-1) < DEGENERATE_NORM
        )
    else:
        res = svd_orthogonalize_jacobian(noisy, special=True)
        pred = svd_orthogonalize_special(noisy)
        cols = [res.jacobian[:, 3 * i: 3 * i + 3, 0] for i in range(3)]
        degenerate = res.near_degenerate
    diff = pred - targets
    terms = np.stack([_MSE_SCALE * np.sum(diff[:, :, i] * cols[i], axis=-1) for i in range(3)], axis=-1)
    return terms, degenerate | ~np.all(np.isfinite(terms), axis=-1)


@dataclass
class ScatterResult:
    method: str
    sigma: float
    x: np.ndarray
    y: np.ndarray
    degenerate: np.ndarray

    @property
    def sign_disagreement(self):
        """Fraction of samples where the gradient points against the error."""
        mask = (self.x != 0) & (self.y != 0) & np.isfinite(self.y)
        if not mask.any():
            return 0.0
        return float(np.mean(np.sign(self.x[mask]) != np.sign(self.y[mask])))

    @property
    def outlier_ratio(self):
        """``max |y| / P99 |y|`` over finite samples."""
        a = np.abs(self.y[np.isfinite(self.y)])
        if len(a) == 0:
            return math.nan
        p99 = np.percentile(a, 99)
        return float(a.max() / p99) if p99 > 0 else math.inf

    @property
    def collinearity_residual(self):
        """RMS residual of the least-squares line ``y = c x`` through the origin."""
        if len(self.x) == 0:
            return 0.0
        c = np.dot(self.x, self.y) / max(np.dot(self.x, self.x), 1e-300)
        return float(np.sqrt(np.mean((self.y - c * self.x) ** 2)))

    def rows(self):
        return [{"x": float(a), "y": float(b), "degenerate": bool(d)}
                for a, b, d in zip(self.x, self.y, self.degenerate)]


def gradient_scatter(method, sigma, n_iters, seed=42):
    method = method_name(method)
    if n_iters < 0:
        raise InvalidInputError("n_iters must be non-negative")
    targets, noisy = draw_pairs(n_iters, sigma, seed)
    if n_iters == 0:
        empty = np.zeros(0)
        return ScatterResult(method, sigma, empty, empty, np.zeros(0, dtype=bool))
    terms, degenerate = column_terms(method, noisy, targets)
    x = noisy[:, 0, 0] - targets[:, 0, 0]
    return ScatterResult(method, sigma, x, terms.sum(axis=-1), degenerate)


# ---------------------------------------------------------------------------
# lambda_min of B B^T


@dataclass
class EigenResult:
    method: str
    lambda_min: np.ndarray
    flagged: np.ndarray  # near-degenerate SVD samples

    def fraction_below(self, tol):
        return float(np.mean(self.lambda_min < tol)) if len(self.lambda_min) else 1.0

    def rows(self):
        return [{"sample": i, "lambda_min": float(v)} for i, v in enumerate(self.lambda_min)]


def map_jacobian(method, noisy):
    """9x9 Jacobian ``B`` of the method's map at each input; also near-degenerate flags."""
    method = method_name(method)
    n = len(noisy)
    flags = np.zeros(n, dtype=bool)
    if method == "prom":
        return np.broadcast_to(np.eye(9), (n, 9, 9)), flags
    if method == "gs":
        return gram_schmidt_jacobian(noisy, check=False), flags
    res = svd_orthogonalize_jacobian(noisy, special=True)
    return res.jacobian, res.near_degenerate


def eigen_verification(method, n_samples, sigma=0.5, seed=42):
    method = method_name(method)
    _, noisy = draw_pairs(n_samples, sigma, seed)
    if n_samples == 0:
        return EigenResult(method, np.zeros(0), np.zeros(0, dtype=bool))
    b, flags = map_jacobian(method, noisy)
    lam = symmetric_eigenvalues(b @ np.swapaxes(b, -1, -2))[:, 0]
    return EigenResult(method, lam, flags)


# ---------------------------------------------------------------------------
# explosion probe

EXPLOSION_GAPS = tuple(10.0 ** -k for k in range(1, 7))


def explosion_probe(gaps=EXPLOSION_GAPS):
    """Jacobian norms as the input approaches a degeneracy of size ``gap``.

    * gs: ``t1 = e1``, ``t2 = e1 + gap e2`` so ``|r''_2| = gap``; reports ``|d r_2 / d t_1|``.
    * svd: nearest rotation of ``diag(2, 1, -(1 - gap))``; singular values 1 and
      ``1 - gap`` with a negative determinant.
    * svd_uvt: the plain ``U V^T`` map at the same inputs, which stays bounded.
    * prom: the identity, Frobenius norm 3.
    """
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        raise InvalidInputError("gaps must be positive")
    theta = np.zeros((len(gaps), 6))
    theta[:, 0] = 1.0
    theta[:, 3] = 1.0
    theta[:, 4] = gaps
    gs_norm = np.linalg.norm(six_d_blocks(theta)[(2, 1)], axis=(-2, -1))
    p = np.zeros((len(gaps), 3, 3))
    p[:, 0, 0] = 2.0
    p[:, 1, 1] = 1.0
    p[:, 2, 2] = -(1.0 - gaps)
    svd_norm = np.linalg.norm(svd_orthogonalize_jacobian(p, special=True).jacobian, axis=(-2, -1))
    uvt_norm = np.linalg.norm(svd_orthogonalize_jacobian(p).jacobian, axis=(-2, -1))
    rows = []
    for i, gap in enumerate(gaps):
        rows.append({"gap": float(gap), "method": "gs", "grad_norm": float(gs_norm[i])})
        rows.append({"gap": float(gap), "method": "svd", "grad_norm": float(svd_norm[i])})
        rows.append({"gap": float(gap), "method": "svd_uvt", "grad_norm": float(uvt_norm[i])})
        rows.append({"gap": float(gap), "method": "prom", "grad_norm": 3.0})
    return rows


def probe_curve(rows, method):
    sel = [(r["gap"], r["grad_norm"]) for r in rows if r["method"] == method]
    gaps, norms = zip(*sel) if sel else ((), ())
    return np.array(gaps), np.array(norms)


# ---------------------------------------------------------------------------
# learning-rate sweep

SWEEP_LOSSES = {"gs": ("gs", "gs"), "svd": ("svd", "svd"), "prom": ("identity", "identity")}
SWEEP_LRS = (1e-4, 2e-4, 5e-4, 8e-4)


def _sweep_one(job):
    method, lr, cfg, chain, max_angle = job
    theta, down = SWEEP_LOSSES[method]
    run_cfg = TrainConfig(**{**cfg.__dict__, "lr": lr})
    res = train_chain("prom", LossConfig(ortho_in_theta=theta, ortho_in_downstream=down), chain, run_cfg,
                      max_angle=max_angle)
    return {
        "method": method,
        "lr": lr,
        "final_error": res.extra["position_mse"],
        "diverged_at": "" if res.diverged_at is None else res.diverged_at,
    }


def lr_sweep(methods=METHODS, lrs=SWEEP_LRS, seed=42, cfg=None, chain=None, threads=1, max_angle=np.pi / 3):
    """One chain-task run per (method, lr).  ``final_error`` is the held-out position MSE."""
    methods = [method_name(m) for m in methods]
    if len(lrs) < 2:
        raise InvalidInputError("need at least two learning rates")
    cfg = cfg or TrainConfig()
    cfg = TrainConfig(**{**cfg.__dict__, "seed": seed})
    jobs = [(m, float(lr), cfg, chain, max_angle) for m in methods for lr in lrs]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(_sweep_one, jobs))


def max_stable_lr(rows, method):
    """Largest learning rate at which ``method`` finished without diverging (``None`` if none did)."""
    stable = [r["lr"] for r in rows if r["method"] == method and r["diverged_at"] == ""
              and math.isfinite(r["final_error"])]
    return max(stable) if stable else None


# ---------------------------------------------------------------------------
# CSV output


def scatter_filename(method, sigma):
    return f"scatter_{method}_{sigma:g}.csv"


def write_scatter(path, result):
    write_rows(path, ("x", "y", "degenerate"), result.rows())


def write_eigen(path, result):
    write_rows(path, ("sample", "lambda_min"), result.rows())


def write_explosion(path, rows):
    write_rows(path, ("gap", "method", "grad_norm"), rows)


def write_lr_sweep(path, rows):
    write_rows(path, ("method", "lr", "final_error", "diverged_at"), rows)
