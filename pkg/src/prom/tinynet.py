"""A minimal fully connected network with hand-written reverse mode.

The parameters live in one flat vector ``net.params``; each layer's weight
matrix and bias are views into it, so optimizers can treat the network as a
single vector ``w`` of dimension ``d``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidInputError

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass
class GradTape:
    """Activations cached by the last forward pass and the accumulated gradient."""

    grad: np.ndarray
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activations
    post: list = field(default_factory=list)  # outputs of each layer
    squeeze: bool = False
    ready: bool = False

    def zero(self):
        self.grad[:] = 0.0
        self.inputs.clear()
        self.pre.clear()
        self.post.clear()
        self.ready = False


class Mlp:
    """``widths[0] -> widths[1] -> ... -> widths[-1]`` with a shared hidden activation.

    The output layer is always linear.  Weights are Glorot-uniform from ``rng``
    (or ``np.random.default_rng(seed)``), biases start at zero.
    """

    def __init__(self, widths, activation="tanh", seed=0, rng=None, bias=True):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInputError("need at least an input and an output width, all positive")
        n_hidden = len(widths) - 2
        acts = [activation] * n_hidden if isinstance(activation, str) else list(activation)
        if len(acts) != n_hidden or any(a not in _ACTIVATIONS for a in acts):
            raise InvalidInputError(f"bad activation spec {activation!r}")
        self.widths = widths
        self.activations = acts + ["linear"]
        self.bias = bias
        sizes = [w_in * w_out + (w_out if bias else 0) for w_in, w_out in zip(widths[:-1], widths[1:])]
        self.params = np.zeros(sum(sizes))
        self.tape = GradTape(np.zeros_like(self.params))
        self._bind()
        rng = rng if rng is not None else np.random.default_rng(seed)
        for w, _ in self.layers:
            fan_out, fan_in = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)

    def _bind(self):
        self.layers = []
        self._grad_layers = []
        offset = 0
        for w_in, w_out in zip(self.widths[:-1], self.widths[1:]):
            views = []
            for buf in (self.params, self.tape.grad):
                w = buf[offset: offset + w_in * w_out].reshape(w_out, w_in)
                end = offset + w_in * w_out
                b = buf[end: end + w_out] if self.bias else None
                views.append((w, b))
            self.layers.append(views[0])
            self._grad_layers.append(views[1])
            offset += w_in * w_out + (w_out if self.bias else 0)

    @property
    def n_params(self):
        return self.params.size

    def set_params(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != self.params.shape:
            raise InvalidInputError("parameter vector has the wrong size")
        self.params[:] = values

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.widths[0]:
            raise InvalidInputError(f"input width {h.shape[-1]} does not match {self.widths[0]}")
        tape = self.tape
        tape.zero()
        tape.squeeze = squeeze
        for (w, b), act in zip(self.layers, self.activations):
            tape.inputs.append(h)
            z = h @ w.T
            if b is not None:
                z = z + b
            h = _ACTIVATIONS[act][0](z)
            tape.pre.append(z)
            tape.post.append(h)
        tape.ready = True
        return h[0] if squeeze else h

    __call__ = forward

    def backward(self, grad_out):
        """Gradient of ``sum(grad_out * output)`` w.r.t. the parameters.

        Returns the flat gradient (also left in ``net.tape.grad``).
        """
        tape = self.tape
        if not tape.ready:
            raise RuntimeError("backward called before forward")
        delta = np.asarray(grad_out, dtype=float)
        if tape.squeeze:
            delta = delta[None, :]
        if delta.shape != tape.post[-1].shape:
            raise InvalidInputError("upstream gradient has the wrong shape")
        for i in reversed(range(len(self.layers))):
            act = self.activations[i]
            delta = delta * _ACTIVATIONS[act][1](tape.pre[i], tape.post[i])
            gw, gb = self._grad_layers[i]
            gw += delta.T @ tape.inputs[i]
            if gb is not None:
                gb += delta.sum(axis=0)
            if i:
                delta = delta @ self.layers[i][0]
        tape.ready = False
        return tape.grad.copy()

    # -- checkpoints -------------------------------------------------------

    def save(self, path):
        """Write ``uint32 n, n x uint32 widths, float64 params`` (all little-endian)."""
        with open(path, "wb") as fh:
            fh.write(struct.pack(f"<I{len(self.widths)}I", len(self.widths), *self.widths))
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, activation="tanh", bias=True):
        with open(path, "rb") as fh:
            data = fh.read()
        (n,) = struct.unpack_from("<I", data, 0)
        widths = struct.unpack_from(f"<{n}I", data, 4)
        net = cls(widths, activation=activation, bias=bias)
        params = np.frombuffer(data, dtype="<f8", offset=4 * (n + 1))
        net.set_params(params)
        return net


@dataclass
class Optimizer:
    """Plain SGD or Adam acting in place on a flat parameter vector."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")

    def step(self, params, grad):
        """Update ``params`` in place.  Non-finite gradients raise before any write."""
        grad = np.asarray(grad, dtype=float)
        if grad.shape != params.shape:
            raise InvalidInputError("gradient and parameters differ in size")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient", step=self.t)
        if self.kind == "sgd":
            update = self.lr * grad
        else:
            if self.m is None:
                self.m = np.zeros_like(params)
                self.v = np.zeros_like(params)
            self.m = self.beta1 * self.m + (1 - self.beta1) * grad
            self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
            t = self.t + 1
            m_hat = self.m / (1 - self.beta1**t)
            v_hat = self.v / (1 - self.beta2**t)
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        new = params - update
        if not np.all(np.isfinite(new)):
            raise DivergenceError("non-finite parameters after update", step=self.t)
        params[:] = new
        self.t += 1
        return params


def grad_check(net, loss_fn, x, fraction=0.1, step=1e-6, rng=None, floor=1e-5):
    """Largest relative error between ``backward`` and central differences.

    ``loss_fn(output) -> (loss, d loss / d output)``.  A random ``fraction`` of
    the parameters (at least one) is probed; errors are measured relative to
    ``max(|analytic|, |numeric|, floor)``.
    """
    if net.n_params == 0:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    out = net.forward(x)
    _, g_out = loss_fn(out)
    analytic = net.backward(g_out)
    count = max(1, int(round(fraction * net.n_params)))
    idx = rng.choice(net.n_params, size=count, replace=False)
    base = net.params.copy()
    worst = 0.0
    for i in idx:
        net.params[i] = base[i] + step
        f_plus = loss_fn(net.forward(x))[0]
        net.params[i] = base[i] - step
        f_minus = loss_fn(net.forward(x))[0]
        net.params[i] = base[i]
        numeric = (f_plus - f_minus) / (2 * step)
        denom = max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    net.tape.zero()
    return worst
