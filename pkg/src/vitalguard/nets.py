"""Small float64 feed-forward networks with explicit backprop.

Hand-rolled on purpose: the acceptance suite verifies analytic parameter
gradients against central finite differences at 1e-4 relative tolerance,
and model files must round-trip bit-for-bit, both of which are simplest to
guarantee with plain numpy in double precision.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .persist import array_from_json, array_to_json


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0.0).astype(np.float64)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
    "sigmoid": (_sigmoid, lambda z: _sigmoid(z) * (1.0 - _sigmoid(z))),
}


class MLP:
    """Fully connected net: hidden activation on all but the last layer."""

    def __init__(self, sizes, hidden="relu", output="linear", rng=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output size")
        self.sizes = list(sizes)
        self.hidden = hidden
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / n_in) if hidden == "relu" else np.sqrt(1.0 / n_in)
            self.weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def _activation(self, layer):
        name = self.output if layer == self.n_layers - 1 else self.hidden
        return _ACTIVATIONS[name]

    def forward(self, x):
        """Return (output, cache) for a batch x of shape (B, n_in)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input dim {self.sizes[0]}, got {x.shape[1]}")
        activations = [x]
        zs = []
        a = x
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            act, _ = self._activation(i)
            a = act(z)
            zs.append(z)
            activations.append(a)
        return a, (activations, zs)

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Backprop an upstream gradient; returns (weight/bias grads, dL/dx)."""
        activations, zs = cache
        gw = [None] * self.n_layers
        gb = [None] * self.n_layers
        delta = np.asarray(grad_out, dtype=np.float64)
        for i in range(self.n_layers - 1, -1, -1):
            _, dact = self._activation(i)
            delta = delta * dact(zs[i])
            gw[i] = activations[i].T @ delta
            gb[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return (gw, gb), delta

    # --- parameter plumbing -------------------------------------------------

    def parameters(self):
        return self.weights + self.biases

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        total = sum(p.size for p in self.parameters())
        if flat.size != total:
            raise ShapeError(f"flat vector length {flat.size}, expected {total}")
        i = 0
        for p in self.parameters():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self):
        other = MLP(self.sizes, hidden=self.hidden, output=self.output)
        other.set_flat(self.get_flat())
        return other

    def soft_update_from(self, online, tau):
        """target <- tau * online + (1 - tau) * target, elementwise."""
        if online.sizes != self.sizes:
            raise ShapeError("network shapes differ")
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        for pt, po in zip(self.parameters(), online.parameters()):
            pt *= 1.0 - tau
            pt += tau * po

    def to_payload(self):
        return {
            "sizes": self.sizes,
            "hidden": self.hidden,
            "output": self.output,
            "weights": [array_to_json(W) for W in self.weights],
            "biases": [array_to_json(b) for b in self.biases],
        }

    @classmethod
    def from_payload(cls, payload):
        net = cls(payload["sizes"], hidden=payload["hidden"], output=payload["output"])
        net.weights = [array_from_json(w) for w in payload["weights"]]
        net.biases = [array_from_json(b) for b in payload["biases"]]
        return net


class Adam:
    """Standard Adam over one network's parameter list."""

    def __init__(self, net, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, grads, scale=1.0):
        gw, gb = grads
        flat_grads = list(gw) + list(gb)
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.net.parameters(), flat_grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * scale * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def finite_difference_grads(loss_fn, net, h=1e-6):
    """Central-difference gradient of loss_fn() w.r.t. all net parameters."""
    base = net.get_flat()
    grad = np.empty_like(base)
    for i in range(base.size):
        theta = base.copy()
        theta[i] = base[i] + h
        net.set_flat(theta)
        up = loss_fn()
        theta[i] = base[i] - h
        net.set_flat(theta)
        down = loss_fn()
        grad[i] = (up - down) / (2.0 * h)
    net.set_flat(base)
    return grad


def flatten_grads(net, grads):
    gw, gb = grads
    return np.concatenate([g.ravel() for g in list(gw) + list(gb)])
