"""Network building blocks on top of the tape: parameters, layers, MLPs.

Parameters live outside any tape as plain float64 arrays in a
:class:`ParamSet`; each training step mounts them onto a fresh tape as
leaves (trainable) or constants (frozen).  Forward functions never couple
examples across the batch axis, so per-example input gradients can be read
off the gradient of the batch-summed output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .tape import NodeRef, Tape, as_tensor

__all__ = [
    "ParamSet",
    "Activation",
    "RELU",
    "TANH",
    "SHIFTED_SOFTPLUS",
    "leaky",
    "apply_activation",
    "shifted_softplus",
    "he_uniform",
    "xavier_uniform",
    "linear",
    "layer_norm",
    "conv1d_layer",
    "MlpSpec",
    "Mlp",
    "LN_EPS",
]

LN_EPS = 1e-5


class ParamSet:
    """Ordered name -> float64 array container with exact serialization.

    Iteration order is insertion order and is part of the contract: the
    optimizers and the serializer both rely on it.  ``save``/``load``
    round-trip shapes and values bit for bit.
    """

    def __init__(self, items: dict[str, np.ndarray] | None = None):
        self._items: dict[str, np.ndarray] = {}
        if items:
            for name, value in items.items():
                self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._items:
            raise ValueError(f"duplicate parameter {name!r}")
        if name.startswith("__"):
            raise ValueError("parameter names starting with '__' are reserved")
        self._items[name] = as_tensor(value)

    def names(self) -> list[str]:
        return list(self._items)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._items[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._items:
            raise KeyError(name)
        arr = as_tensor(value)
        if arr.shape != self._items[name].shape:
            raise ValueError(
                f"shape change for {name!r}: {self._items[name].shape} -> {arr.shape}"
            )
        self._items[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def items(self):
        return self._items.items()

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._items.items()})

    def equal(self, other: "ParamSet") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self._items)

    def to_leaves(self, t: Tape, prefix: str = "") -> dict[str, NodeRef]:
        return {k: t.leaf(prefix + k, v) for k, v in self._items.items()}

    def to_consts(self, t: Tape) -> dict[str, NodeRef]:
        return {k: t.const(v) for k, v in self._items.items()}

    def save(self, path, meta: dict[str, str] | None = None) -> None:
        order = np.array(self.names())
        extra: dict[str, np.ndarray] = {}
        if meta:
            keys = sorted(meta)
            extra["__meta_keys__"] = np.array(keys)
            extra["__meta_vals__"] = np.array([meta[k] for k in keys])
        np.savez(path, __order__=order, **extra, **self._items)

    @classmethod
    def load(cls, path) -> "ParamSet":
        with np.load(path) as data:
            order = [str(s) for s in data["__order__"]]
            return cls({name: data[name] for name in order})

    @staticmethod
    def load_meta(path) -> dict[str, str]:
        with np.load(path) as data:
            if "__meta_keys__" not in data:
                return {}
            keys = data["__meta_keys__"]
            vals = data["__meta_vals__"]
            return {str(k): str(v) for k, v in zip(keys, vals)}


@dataclass(frozen=True)
class Activation:
    """Pointwise nonlinearity selector; slope only matters for leaky_relu."""

    kind: str
    slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "tanh", "shifted_softplus"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not (0.0 < self.slope < 1.0):
            raise ValueError(f"leaky slope must be in (0, 1), got {self.slope}")


RELU = Activation("relu")
TANH = Activation("tanh")
SHIFTED_SOFTPLUS = Activation("shifted_softplus")


def leaky(slope: float = 0.2) -> Activation:
    return Activation("leaky_relu", slope)


def shifted_softplus(x: NodeRef) -> NodeRef:
    """softplus(2x + 2) / 2 - 1: zero-centered, asymptotically linear."""
    return T.add_scalar(T.mul_scalar(T.softplus(T.add_scalar(T.mul_scalar(x, 2.0), 2.0)), 0.5), -1.0)


def apply_activation(act: Activation, x: NodeRef) -> NodeRef:
    if act.kind == "relu":
        return T.relu(x)
    if act.kind == "leaky_relu":
        return T.leaky_relu(x, act.slope)
    if act.kind == "tanh":
        return T.tanh(x)
    return shifted_softplus(x)


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform with bound sqrt(6/fan_in); variance 2/fan_in."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _weight_init(rng, shape, fan_in, fan_out, act: Activation) -> np.ndarray:
    if act.kind in ("relu", "leaky_relu"):
        return he_uniform(rng, shape, fan_in)
    return xavier_uniform(rng, shape, fan_in, fan_out)


def linear(x: NodeRef, w: NodeRef, b: NodeRef) -> NodeRef:
    """x [m,in] with w [out,in], b [out] -> x w^T + b per row."""
    y = T.matmul(x, T.transpose(w))
    return T.add(y, T.expand_first(b, x.shape[0]))


def layer_norm(x: NodeRef, gain: NodeRef, bias: NodeRef, eps: float = LN_EPS) -> NodeRef:
    """Normalize each row to zero mean, unit population variance, then affine."""
    d = x.shape[-1]
    mu = T.mul_scalar(T.sum_last(x), 1.0 / d)
    centered = T.sub(x, T.expand_last(mu, d))
    var = T.mul_scalar(T.sum_last(T.mul(centered, centered)), 1.0 / d)
    inv = T.expand_last(T.pow_scalar(T.add_scalar(var, eps), -0.5), d)
    y = T.mul(centered, inv)
    m = x.shape[0]
    return T.add(T.mul(y, T.expand_first(gain, m)), T.expand_first(bias, m))


def conv1d_layer(x: NodeRef, k: NodeRef, b: NodeRef) -> NodeRef:
    """conv1d plus per-output-channel bias: [m,ci,L] -> [m,co,L-w+1]."""
    y = T.conv1d(x, k)
    bias = T.expand_last(T.expand_first(b, x.shape[0]), y.shape[-1])
    return T.add(y, bias)


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected stack.

    ``widths`` lists the input size, each hidden size, and the output size.
    Activation (optionally preceded by layer norm) follows every linear map
    except the last, which stays affine so critics emit unsquashed scores.
    """

    widths: tuple[int, ...]
    activation: Activation = RELU
    layer_norm: bool = False

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


class Mlp:
    """Parameter naming, init, and forward for an :class:`MlpSpec`."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec

    def init_params(self, seed: int) -> ParamSet:
        rng = np.random.default_rng(seed)
        ps = ParamSet()
        ws = self.spec.widths
        for i in range(self.spec.n_layers):
            fan_in, fan_out = ws[i], ws[i + 1]
            last = i == self.spec.n_layers - 1
            act = self.spec.activation
            ps.add(f"w{i}", _weight_init(rng, (fan_out, fan_in), fan_in, fan_out, act))
            ps.add(f"b{i}", np.zeros(fan_out))
            if self.spec.layer_norm and not last:
                ps.add(f"ln{i}_g", np.ones(fan_out))
                ps.add(f"ln{i}_b", np.zeros(fan_out))
        return ps

    def forward(
        self,
        nodes: dict[str, NodeRef],
        x: NodeRef,
        taps: list[NodeRef] | None = None,
    ) -> NodeRef:
        """Batch forward pass; ``taps`` collects each post-activation tensor.

        Returns scores of shape [m] when the final width is 1, otherwise the
        final [m, out] tensor.
        """
        if len(x.shape) != 2 or x.shape[1] != self.spec.widths[0]:
            raise ValueError(
                f"input shape {x.shape} does not match spec width {self.spec.widths[0]}"
            )
        h = x
        for i in range(self.spec.n_layers):
            h = linear(h, nodes[f"w{i}"], nodes[f"b{i}"])
            if i < self.spec.n_layers - 1:
                if self.spec.layer_norm:
                    h = layer_norm(h, nodes[f"ln{i}_g"], nodes[f"ln{i}_b"])
                h = apply_activation(self.spec.activation, h)
            if taps is not None:
                taps.append(h)
        if self.spec.widths[-1] == 1:
            return T.reshape(h, (h.shape[0],))
        return h
