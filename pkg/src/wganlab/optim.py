"""First-order optimizers over ParamSets, plus hard weight clipping.

Updates are written back through ``ParamSet.__setitem__`` as fresh arrays
(never in place) so that values already mounted on a tape stay immutable.
Gradients arrive as a name -> array mapping covering every parameter; a
non-finite gradient raises instead of poisoning the state.
"""

from __future__ import annotations

import numpy as np

from .nn import ParamSet
from .tape import NonFiniteError

__all__ = ["Adam", "RMSProp", "clip_weights"]


def _check_grads(params: ParamSet, grads: dict[str, np.ndarray]) -> None:
    for name in params:
        g = grads.get(name)
        if g is None:
            raise KeyError(f"missing gradient for {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} "
                f"{params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")


class Adam:
    """Adam with bias correction; defaults match the training loop's regime."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        _check_grads(params, grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in params:
            g = grads[name]
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            mhat = m / c1
            vhat = v / c2
            params[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class RMSProp:
    """Plain RMSProp (no momentum), stabilizer inside the square root."""

    def __init__(self, lr: float = 5e-5, decay: float = 0.9, eps: float = 1e-10):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        _check_grads(params, grads)
        rho = self.decay
        for name in params:
            g = grads[name]
            v = self._v.get(name)
            if v is None:
                v = np.zeros_like(g)
            v = rho * v + (1.0 - rho) * (g * g)
            self._v[name] = v
            params[name] = params[name] - self.lr * g / np.sqrt(v + self.eps)


def clip_weights(params: ParamSet, c: float) -> None:
    """Clamp every entry of every parameter (biases included) to [-c, c]."""
    if c <= 0:
        raise ValueError(f"clip threshold must be positive, got {c}")
    for name in params:
        params[name] = np.clip(params[name], -c, c)


def make_optimizer(kind: str, lr: float, beta1: float, beta2: float, rms_decay: float):
    if kind == "adam":
        return Adam(lr=lr, beta1=beta1, beta2=beta2)
    if kind == "rmsprop":
        return RMSProp(lr=lr, decay=rms_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
