"""Fully connected network with layer norm and leaky-ReLU, hand-written backprop.

Every hidden layer is ``Linear -> LayerNorm(gain, bias) -> LeakyReLU``; the
output layer is linear. Inputs are batches of shape ``(N, n_in)``.
"""
import numpy as np

LN_EPS = 1e-5


def leaky_relu(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


class Mlp:
    """Parameters live in ``self.params`` keyed ``W{i}``, ``b{i}``, ``g{i}``, ``c{i}``."""

    def __init__(self, sizes, rng=None, slope=0.01, layer_norm=True, out_scale=None):
        self.sizes = tuple(int(s) for s in sizes)
        self.slope = slope
        self.layer_norm = layer_norm
        self.params = {}
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            bound = 1.0 / np.sqrt(fan_in)
            if i == n_layers - 1 and out_scale is not None:
                bound = out_scale
            if rng is None:
                self.params[f"W{i}"] = np.zeros((fan_in, fan_out))
                self.params[f"b{i}"] = np.zeros(fan_out)
            else:
                self.params[f"W{i}"] = rng.uniform(-bound, bound, (fan_in, fan_out))
                self.params[f"b{i}"] = rng.uniform(-bound, bound, fan_out)
            if i < n_layers - 1 and layer_norm:
                self.params[f"g{i}"] = np.ones(fan_out)
                self.params[f"c{i}"] = np.zeros(fan_out)
        self._cache = None

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.sizes, other.slope, other.layer_norm = self.sizes, self.slope, self.layer_norm
        other.params = {k: v.copy() for k, v in self.params.items()}
        other._cache = None
        return other

    def shapes(self):
        return {k: list(v.shape) for k, v in self.params.items()}

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.params
        cache = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ p[f"W{i}"] + p[f"b{i}"]
            if i == self.n_layers - 1:
                cache.append(None)
                self._cache = cache
                return z
            if self.layer_norm:
                mu = z.mean(axis=1, keepdims=True)
                inv = 1.0 / np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
                xhat = (z - mu) * inv
                pre = p[f"g{i}"] * xhat + p[f"c{i}"]
            else:
                xhat, inv = None, None
                pre = z
            h = leaky_relu(pre, self.slope)
            cache.append((xhat, inv, pre, h))

    def backward(self, dout):
        """Gradients of ``sum(dout * forward(x))``; returns ``(param_grads, d_input)``."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        p = self.params
        cache = self._cache
        grads = {}
        d = np.atleast_2d(np.asarray(dout, dtype=float))
        for i in reversed(range(self.n_layers)):
            h_in = cache[i] if i == 0 else cache[i][3]
            if i < self.n_layers - 1:
                xhat, inv, pre, _ = cache[i + 1]
                d = d * np.where(pre > 0, 1.0, self.slope)
                if self.layer_norm:
                    grads[f"g{i}"] = (d * xhat).sum(axis=0)
                    grads[f"c{i}"] = d.sum(axis=0)
                    dx = d * p[f"g{i}"]
                    d = inv * (dx - dx.mean(axis=1, keepdims=True) - xhat * (dx * xhat).mean(axis=1, keepdims=True))
            grads[f"W{i}"] = h_in.T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            d = d @ p[f"W{i}"].T
        return grads, d


def squash(z, U_max):
    """Pre-activation ``z`` to ``(a, L, U)`` with ``a = (tanh z + 1) / 2``, ``L = sqrt(U_max) a``, ``U = L^2``."""
    a = 0.5 * (np.tanh(z) + 1.0)
    L = np.sqrt(U_max) * a
    return a, L, L * L


def squash_grad(z):
    """``da / dz`` for ``a = (tanh z + 1) / 2``."""
    return 0.5 * (1.0 - np.tanh(z) ** 2)
