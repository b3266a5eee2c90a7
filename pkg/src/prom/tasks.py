"""Training experiments: rotation recovery, toy point-cloud pose and chain-supervised pose.

Every run is a pure function of its configuration and seed.  From the seed
three independent streams are spawned: network initialization, training
batches and the held-out evaluation set, so runs that differ only in the
head see identical data.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainPose, KinematicChain, accumulated, fk_vjp, forward_kinematics
from .errors import DivergenceError, InvalidInputError
from .heads import get_head, ortho_forward, ortho_name, ortho_vjp
from .ortho import svd_orthogonalize_special
from .rotcore import flatten, geodesic_angle, sample_rotations
from .tinynet import Mlp, Optimizer

RUN_RECORD_FIELDS = ("step", "total_loss", "loss_theta", "loss_y", "grad_norm", "eval_geodesic_deg", "diverged")


@dataclass
class TrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    decay_at: float = 0.5  # fraction of training after which lr is multiplied by decay_factor
    decay_factor: float = 0.1
    hidden: tuple = (128, 128)
    activation: str = "tanh"
    eval_size: int = 1000
    eval_every: int = 500
    log_every: int = 10
    seed: int = 42

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch


@dataclass
class LossConfig:
    use_rotation_loss: bool = True
    use_downstream_loss: bool = True
    ortho_in_theta: str = "identity"
    ortho_in_downstream: str = "identity"

    def __post_init__(self):
        if not (self.use_rotation_loss or self.use_downstream_loss):
            raise InvalidInputError("at least one loss term must be enabled")
        self.ortho_in_theta = ortho_name(self.ortho_in_theta)
        self.ortho_in_downstream = ortho_name(self.ortho_in_downstream)

    @property
    def label(self):
        short = {"identity": "id", "gs": "gs", "svd": "svd"}
        return f"{short[self.ortho_in_theta]}-{short[self.ortho_in_downstream]}"


@dataclass
class RunRecord:
    step: int
    total_loss: float
    loss_theta: float
    loss_y: float
    grad_norm: float
    eval_geodesic_deg: float = math.nan
    diverged: bool = False


@dataclass
class RunResult:
    name: str
    records: list
    errors_deg: np.ndarray  # held-out geodesic errors after inference projection
    diverged_at: int = None
    net: Mlp = None
    extra: dict = field(default_factory=dict)

    @property
    def mean(self):
        return float(np.mean(self.errors_deg)) if len(self.errors_deg) else math.nan

    @property
    def max(self):
        return float(np.max(self.errors_deg)) if len(self.errors_deg) else math.nan

    @property
    def std(self):
        return float(np.std(self.errors_deg)) if len(self.errors_deg) else math.nan

    def summary(self):
        row = {"name": self.name, "mean_deg": self.mean, "max_deg": self.max, "std_deg": self.std,
               "diverged_at": "" if self.diverged_at is None else self.diverged_at}
        row.update(self.extra)
        return row


def mse(pred, target):
    """Element-wise mean squared error and its gradient w.r.t. ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _streams(seed):
    init, data, evaluation = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(evaluation)


def _project(matrices):
    return svd_orthogonalize_special(matrices)


def evaluate_head(head, net, inputs, targets):
    """Geodesic errors in degrees after applying ``r`` and the SO(3) projection."""
    out = net.forward(inputs)
    pred = _project(head.matrix(out.reshape(len(inputs), -1, head.dim)))
    return np.degrees(geodesic_angle(pred, targets.reshape(pred.shape))).reshape(-1)


def _train_loop(name, net, cfg, batch_fn, loss_fn, eval_fn):
    """Shared optimizer loop.

    ``batch_fn(step) -> (inputs, aux)``; ``loss_fn(out, aux) -> (total, l_theta, l_y, dL/dout)``;
    ``eval_fn() -> errors_deg``.
    """
    opt = Optimizer(cfg.optimizer, cfg.lr)
    records = []
    diverged_at = None
    decay_step = None if cfg.decay_at is None else int(cfg.decay_at * cfg.total_steps)
    for step in range(cfg.total_steps):
        if step == decay_step:
            opt.lr = cfg.lr * cfg.decay_factor
        x, aux = batch_fn(step)
        with np.errstate(all="ignore"):
            out = net.forward(x)
            total, l_theta, l_y, g_out = loss_fn(out, aux)
            grad = net.backward(g_out) if np.isfinite(total) else np.full(net.n_params, np.nan)
        grad_norm = float(np.linalg.norm(grad))
        try:
            if not np.isfinite(total):
                raise DivergenceError("non-finite loss", step=step)
            opt.step(net.params, grad)
        except DivergenceError:
            diverged_at = step
            records.append(RunRecord(step, total, l_theta, l_y, grad_norm, math.nan, True))
            break
        last = step == cfg.total_steps - 1
        if step % cfg.log_every == 0 or last:
            evaluated = (step % cfg.eval_every == 0) or last
            geo = float(np.mean(eval_fn())) if evaluated else math.nan
            records.append(RunRecord(step, total, l_theta, l_y, grad_norm, geo, False))
    errors = np.array([]) if diverged_at is not None else eval_fn()
    return RunResult(name, records, errors, diverged_at, net)


def _build_net(in_dim, out_dim, cfg, rng):
    return Mlp([in_dim, *cfg.hidden, out_dim], activation=cfg.activation, rng=rng)


# ---------------------------------------------------------------------------
# rotation recovery


def train_rotation_recovery(head, cfg=None, target_sampler=None):
    """Auto-encode rotation matrices through a representation head.

    Input is the flattened target matrix, the loss is element-wise MSE between
    ``g(r(theta))`` and the target, and evaluation uses the geodesic angle
    after projecting to SO(3).
    """
    head = get_head(head) if isinstance(head, str) else head
    cfg = cfg or TrainConfig()
    sampler = target_sampler or sample_rotations
    init_rng, data_rng, eval_rng = _streams(cfg.seed)
    net = _build_net(9, head.dim, cfg, init_rng)
    eval_r = sampler(eval_rng, cfg.eval_size)
    eval_x = flatten(eval_r)

    def batch_fn(step):
        r = sampler(data_rng, cfg.batch_size)
        return flatten(r), r

    def loss_fn(out, target):
        pred = head.forward(out)
        loss, g = mse(pred, target)
        return loss, loss, 0.0, head.vjp(out, g)

    return _train_loop(head.name, net, cfg, batch_fn, loss_fn,
                       lambda: evaluate_head(head, net, eval_x, eval_r))


# ---------------------------------------------------------------------------
# point-cloud pose


def train_point_cloud(head, cfg=None, n_points=16, use_rotation_loss=True, target_sampler=None):
    """Regress the rotation taking a reference cloud ``P_r`` to ``P_t = R P_r``.

    The loss is ``L_theta + MSE(M P_r, P_t)`` where ``M = g(r(theta))``; for the
    prom head ``M`` is the raw pseudo rotation matrix.
    """
    if n_points < 3:
        raise InvalidInputError("need at least three points")
    head = get_head(head) if isinstance(head, str) else head
    cfg = cfg or TrainConfig()
    sampler = target_sampler or sample_rotations
    init_rng, data_rng, eval_rng = _streams(cfg.seed)
    ref = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3]).normal(size=(3, n_points))
    net = _build_net(6 * n_points, head.dim, cfg, init_rng)

    def features(r):
        clouds = r @ ref
        x = np.concatenate([np.broadcast_to(ref, clouds.shape), clouds], axis=-1)
        return x.reshape(len(r), -1), clouds

    eval_r = sampler(eval_rng, cfg.eval_size)
    eval_x, _ = features(eval_r)

    def batch_fn(step):
        r = sampler(data_rng, cfg.batch_size)
        x, clouds = features(r)
        return x, (r, clouds)

    def loss_fn(out, aux):
        r, clouds = aux
        m = head.forward(out)
        l_theta, g_theta = mse(m, r) if use_rotation_loss else (0.0, 0.0)
        l_y, g_cloud = mse(m @ ref, clouds)
        grad_m = g_theta + g_cloud @ ref.T
        return l_theta + l_y, l_theta, l_y, head.vjp(out, grad_m)

    result = _train_loop(head.name, net, cfg, batch_fn, loss_fn,
                         lambda: evaluate_head(head, net, eval_x, eval_r))
    result.extra["n_points"] = n_points
    return result


# ---------------------------------------------------------------------------
# chain-supervised pose


class ChainData:
    """Input features for the chain task.

    Features are the joint positions plus one marker per joint
    (``x_{i-1} + G_i m_i`` with ``m_i`` orthogonal to the segment), so every
    joint rotation is observable.  Features are standardized with statistics
    from a fixed calibration sample.
    """

    def __init__(self, chain, seed, max_angle=np.pi):
        self.chain = chain
        self.max_angle = max_angle
        self.k = chain.n_joints
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])
        markers = []
        for o in chain.offsets:
            m = np.cross(o, rng.normal(size=3))
            markers.append(m / np.linalg.norm(m) * max(np.linalg.norm(o), 1e-3))
        self.markers = np.array(markers)
        calib = self.sample(rng, 4096)[0]
        self.mean = calib.mean(axis=0)
        self.std = calib.std(axis=0) + 1e-8

    def raw_features(self, rotations):
        pose = ChainPose(rotations)
        pos = forward_kinematics(self.chain, pose)
        g = accumulated(rotations)
        marks = pos[:, :-1] + (g @ self.markers[:, :, None])[..., 0]
        return np.concatenate([pos[:, 1:].reshape(len(pos), -1), marks.reshape(len(pos), -1)], axis=-1), pos

    def sample(self, rng, n):
        rot = sample_rotations(rng, n * self.k, self.max_angle).reshape(n, self.k, 3, 3)
        feats, pos = self.raw_features(rot)
        return feats, rot, pos

    def batch(self, rng, n):
        feats, rot, pos = self.sample(rng, n)
        return (feats - self.mean) / self.std, rot, pos


def train_chain(head="prom", loss_cfg=None, chain=None, cfg=None, max_angle=np.pi / 3):
    """Joint rotations supervised by ``L_theta`` and/or forward-kinematics positions.

    Orthogonalization is inserted per ``loss_cfg``: ``ortho_in_theta`` before the
    rotation loss, ``ortho_in_downstream`` before forward kinematics.  Evaluation
    projects every joint matrix to SO(3) and reports the held-out position MSE
    and per-joint geodesic error.
    """
    head = get_head(head) if isinstance(head, str) else head
    loss_cfg = loss_cfg or LossConfig()
    chain = chain or KinematicChain.default()
    cfg = cfg or TrainConfig()
    k = chain.n_joints
    data = ChainData(chain, cfg.seed, max_angle)
    init_rng, data_rng, eval_rng = _streams(cfg.seed)
    net = _build_net(data.mean.size, k * head.dim, cfg, init_rng)
    eval_x, eval_rot, eval_pos = data.batch(eval_rng, cfg.eval_size)
    position_mse = {}

    def batch_fn(step):
        x, rot, pos = data.batch(data_rng, cfg.batch_size)
        return x, (rot, pos)

    def loss_fn(out, aux):
        rot, pos = aux
        theta = out.reshape(len(out), k, head.dim)
        r0 = head.matrix(theta)
        grad_r0 = np.zeros_like(r0)
        l_theta = l_y = 0.0
        if loss_cfg.use_rotation_loss:
            pred = ortho_forward(loss_cfg.ortho_in_theta, r0)
            l_theta, g = mse(pred, rot)
            grad_r0 += ortho_vjp(loss_cfg.ortho_in_theta, r0, g)
        if loss_cfg.use_downstream_loss:
            mats = ortho_forward(loss_cfg.ortho_in_downstream, r0)
            y_hat = forward_kinematics(chain, ChainPose(mats))
            l_y, g_y = mse(y_hat, pos)
            grad_mats = fk_vjp(chain, ChainPose(mats), g_y)
            grad_r0 += ortho_vjp(loss_cfg.ortho_in_downstream, r0, grad_mats)
        g_theta = np.einsum("...i,...ij->...j", flatten(grad_r0), head.r_jacobian(theta))
        return l_theta + l_y, l_theta, l_y, g_theta.reshape(len(out), -1)

    # inference runs through the map the downstream loss was trained on
    infer_map = loss_cfg.ortho_in_downstream if loss_cfg.use_downstream_loss else loss_cfg.ortho_in_theta

    def eval_fn():
        out = net.forward(eval_x).reshape(len(eval_x), k, head.dim)
        mats = _project(ortho_forward(infer_map, head.matrix(out)))
        y_hat = forward_kinematics(chain, ChainPose(mats))
        position_mse["value"] = float(np.mean((y_hat - eval_pos) ** 2))
        return np.degrees(geodesic_angle(mats, eval_rot)).reshape(-1)

    name = f"{head.name}:{loss_cfg.label}"
    result = _train_loop(name, net, cfg, batch_fn, loss_fn, eval_fn)
    result.extra["position_mse"] = position_mse.get("value", math.nan) if result.diverged_at is None else math.nan
    result.extra["variant"] = loss_cfg.label
    return result


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_run_records(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_RECORD_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, f)) for f in RUN_RECORD_FIELDS])


def write_rows(path, header, rows):
    """Write dict rows as CSV with a mandatory header and LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(h, "")) for h in header])
