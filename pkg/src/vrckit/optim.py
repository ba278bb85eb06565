"""Named parameter registry and the Adam update rule."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeMismatchError, Tensor


class ParamRegistry:
    """Maps string paths like "pmnet.trunk1.l0.w" to trainable tensors.

    Each parameter carries its Adam state (first/second moment, step count);
    moments always share the parameter's shape.
    """

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self._t = {}

    def add(self, path, data):
        if path in self._params:
            raise ValueError(f"duplicate parameter path '{path}'")
        p = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[path] = p
        self._m[path] = np.zeros_like(p.data)
        self._v[path] = np.zeros_like(p.data)
        self._t[path] = 0
        return p

    def get(self, path):
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def state(self, path):
        """Adam state triple (m, v, step) for a parameter."""
        return self._m[path], self._v[path], self._t[path]

    def load_values(self, values):
        """Overwrite parameter data from a {path: array} map; shapes must match."""
        for path, arr in values.items():
            p = self._params[path]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeMismatchError(
                    f"checkpoint value for '{path}' has shape {arr.shape}, "
                    f"expected {p.data.shape}")
            p.data = arr.copy()

    def values(self):
        return {path: p.data for path, p in self._params.items()}


def adam_step(registry, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction.

    grads maps a subset of registry paths to gradient arrays; parameters
    without a gradient entry are left untouched (their step count too).
    """
    if lr <= 0:
        raise ValueError("adam_step: lr must be positive")
    for path, g in grads.items():
        p = registry.get(path)
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient for '{path}' has shape {g.shape}, expected {p.data.shape}")
        registry._t[path] += 1
        t = registry._t[path]
        m = registry._m[path]
        v = registry._v[path]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(step, base_lr, decay, interval):
    """Stepwise exponential decay: base_lr * decay ** floor(step / interval)."""
    if interval <= 0:
        raise ValueError("lr_schedule: interval must be positive")
    return base_lr * decay ** (step // interval)
