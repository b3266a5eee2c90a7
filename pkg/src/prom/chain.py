"""Serial forward-kinematics chain used as a toy downstream task.

Joint ``i`` (1-based) carries a 3x3 matrix ``M_i`` and a rest offset ``o_i``.
With accumulated products ``G_i = M_1 M_2 ... M_i`` the joint positions are

    x_0 = root,    x_i = x_{i-1} + G_i o_i.

The matrices are used as given; nothing is projected onto SO(3), so a pseudo
rotation matrix flows straight through.  This is a stand-in for a body model:
it keeps the "accumulated matrix products" structure and nothing else.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class KinematicChain:
    offsets: np.ndarray  # (K, 3)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        if len(self.offsets) < 1 or not np.all(np.isfinite(self.offsets)):
            raise InvalidInputError("a chain needs at least one finite offset")

    @property
    def n_joints(self):
        return len(self.offsets)

    @property
    def parents(self):
        return np.arange(self.n_joints) - 1

    @classmethod
    def default(cls, n_joints=4):
        """Segments of length one that alternate between the x and y axes."""
        offsets = np.zeros((n_joints, 3))
        offsets[0::2, 0] = 1.0
        offsets[1::2, 1] = 1.0
        return cls(offsets)

    @classmethod
    def from_text(cls, text):
        """Parse ``key = value`` lines: an optional ``joints = K`` and one ``offset = x, y, z`` per joint."""
        offsets = []
        joints = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "joints":
                joints = int(value)
            elif key == "offset":
                vec = [float(v) for v in value.replace(",", " ").split()]
                if len(vec) != 3:
                    raise InvalidInputError(f"line {lineno}: offset needs three numbers")
                offsets.append(vec)
            else:
                raise InvalidInputError(f"line {lineno}: unknown key {key!r}")
        if joints is not None and joints != len(offsets):
            raise InvalidInputError(f"joints = {joints} but {len(offsets)} offsets given")
        return cls(np.array(offsets))

    def to_text(self):
        lines = [f"joints = {self.n_joints}"]
        lines += ["offset = " + ", ".join(repr(float(c)) for c in o) for o in self.offsets]
        return "\n".join(lines) + "\n"


@dataclass
class ChainPose:
    matrices: np.ndarray  # (..., K, 3, 3)
    root: np.ndarray = field(default=None)  # (..., 3)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.root is None:
            self.root = np.zeros(self.matrices.shape[:-3] + (3,))
        self.root = np.asarray(self.root, dtype=float)


def accumulated(matrices):
    """``G_i = M_1 ... M_i`` for every joint, shape ``(..., K, 3, 3)``."""
    matrices = np.asarray(matrices, dtype=float)
    out = np.empty_like(matrices)
    acc = np.broadcast_to(np.eye(3), matrices.shape[:-3] + (3, 3))
    for i in range(matrices.shape[-3]):
        acc = acc @ matrices[..., i, :, :]
        out[..., i, :, :] = acc
    return out


def _check(chain, pose):
    if pose.matrices.shape[-3:] != (chain.n_joints, 3, 3):
        raise InvalidInputError(
            f"pose has matrices of shape {pose.matrices.shape[-3:]}, chain needs ({chain.n_joints}, 3, 3)"
        )


def forward_kinematics(chain, pose):
    """Joint positions ``(..., K + 1, 3)``."""
    _check(chain, pose)
    g = accumulated(pose.matrices)
    segments = g @ chain.offsets[:, :, None]
    steps = np.concatenate([pose.root[..., None, :], segments[..., 0]], axis=-2)
    return np.cumsum(steps, axis=-2)


def fk_vjp(chain, pose, grad_positions):
    """Pull ``dL/d positions`` back to ``dL/d M_i``, shape ``(..., K, 3, 3)``."""
    _check(chain, pose)
    m = pose.matrices
    g = accumulated(m)
    k = chain.n_joints
    # position x_j depends on G_i for every i <= j
    suffix = np.cumsum(np.asarray(grad_positions, dtype=float)[..., ::-1, :], axis=-2)[..., ::-1, :]
    out = np.empty_like(m)
    d_g = np.zeros(m.shape[:-3] + (3, 3))
    for i in reversed(range(k)):
        d_g = suffix[..., i + 1, :, None] * chain.offsets[i][None, :] + d_g
        prev = g[..., i - 1, :, :] if i else np.broadcast_to(np.eye(3), d_g.shape)
        out[..., i, :, :] = np.swapaxes(prev, -1, -2) @ d_g
        d_g = d_g @ np.swapaxes(m[..., i, :, :], -1, -2)
    return out


def fk_jacobian(chain, pose):
    """Full Jacobian ``d positions / d matrices``, shape ``(..., 3 (K + 1), 9 K)``.

    Rows run over positions (joint-major, xyz-minor); columns over joints, each
    with its matrix flattened column-major.
    """
    _check(chain, pose)
    k = chain.n_joints
    batch = pose.matrices.shape[:-3]
    rows = []
    for j in range(k + 1):
        for a in range(3):
            seed = np.zeros(batch + (k + 1, 3))
            seed[..., j, a] = 1.0
            grad = fk_vjp(chain, pose, seed)
            rows.append(np.swapaxes(grad, -1, -2).reshape(batch + (9 * k,)))
    return np.stack(rows, axis=-2)
