"""Small tanh MLP with reverse-mode gradients in plain numpy."""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


class MLP:
    """Dense layers with tanh between them and a linear output layer."""

    def __init__(self, sizes, weights=None, biases=None):
        self.sizes = tuple(int(s) for s in sizes)
        if weights is None:
            weights = [np.zeros((a, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
            biases = [np.zeros(b) for b in self.sizes[1:]]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def init(cls, sizes, rng, hidden_gain=np.sqrt(2.0), out_gain=1.0):
        net = cls(sizes)
        n_layers = len(net.weights)
        for i, (a, b) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            gain = out_gain if i == n_layers - 1 else hidden_gain
            net.weights[i] = orthogonal(rng, a, b, gain)
        return net

    def copy(self) -> "MLP":
        return MLP(self.sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x):
        """Return ``(output, cache)``; the cache feeds :meth:`backward`."""
        acts = [np.atleast_2d(np.asarray(x, dtype=float))]
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, grad_out):
        """Gradients of a scalar loss given dL/d(output); returns flat vector."""
        g = np.asarray(grad_out, dtype=float)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                               for w, b in zip(gw, gb)])

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                               for w, b in zip(self.weights, self.biases)])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
