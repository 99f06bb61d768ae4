"""Dense feed-forward networks with analytic backprop, Adam and Polyak updates."""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ShapeError

logger = logging.getLogger(__name__)

OUTPUTS = ("identity", "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Mlp:
    """tanh hidden layers, identity or sigmoid output.

    Inputs may be a single vector (in,) or a batch (n, in). Weights are
    stored as (out, in) matrices.
    """

    def __init__(self, layer_dims: Sequence[int], output: str = "identity",
                 rng: Optional[np.random.Generator] = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"layer_dims must list at least input and output sizes >= 1, got {dims}")
        if output not in OUTPUTS:
            raise ShapeError(f"output activation must be one of {OUTPUTS}, got {output!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layer_dims = dims
        self.output = output
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def architecture(self) -> Tuple:
        return tuple(self.layer_dims), self.output

    def params(self) -> List[np.ndarray]:
        """Parameters interleaved as [W1, b1, W2, b2, ...]; arrays are live references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        current = self.params()
        if len(params) != len(current) or any(p.shape != c.shape for p, c in zip(params, current)):
            raise ShapeError("parameter list does not match the architecture")
        for c, p in zip(current, params):
            c[...] = p

    def clone(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.layer_dims = list(self.layer_dims)
        twin.output = self.output
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def _as_batch(self, x: np.ndarray) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        batch = x[None] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of size {self.input_dim}, got shape {x.shape}")
        return batch, single

    def _forward(self, batch: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        activations = [batch]
        a = batch
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if i < last:
                a = np.tanh(z)
            else:
                a = _sigmoid(z) if self.output == "sigmoid" else z
            activations.append(a)
        return activations, a

    def forward(self, x: np.ndarray) -> np.ndarray:
        batch, single = self._as_batch(x)
        _, y = self._forward(batch)
        return y[0] if single else y

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Gradients of sum(upstream * forward(x)).

        Returns:
            (param_grads in params() order, input_grad shaped like x)
        """
        batch, single = self._as_batch(x)
        up = np.asarray(upstream, dtype=float)
        up = up[None] if single and up.ndim == 1 else up
        if up.shape != (batch.shape[0], self.output_dim):
            raise ShapeError(f"upstream gradient shape {np.shape(upstream)} does not match output")
        activations, y = self._forward(batch)
        delta = up * y * (1.0 - y) if self.output == "sigmoid" else up
        grads: List[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(delta.T @ activations[i])
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (1.0 - activations[i] ** 2)
        grads.reverse()
        return grads, (delta[0] if single else delta)


class Adam:
    """Adaptive-moment optimizer state for one parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def opt_step(opt: Adam, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """One descent step, in place."""
    if len(params) != len(opt.m) or any(p.shape != m.shape for p, m in zip(params, opt.m)):
        raise ShapeError("optimizer state does not match the parameters")
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def soft_update(target: Mlp, online: Mlp, eta: float) -> None:
    """target <- eta * online + (1 - eta) * target."""
    if target.architecture != online.architecture:
        raise ShapeError("soft update between different architectures")
    for t, o in zip(target.params(), online.params()):
        t *= 1.0 - eta
        t += eta * o
