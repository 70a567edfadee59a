"""Tape-based reverse-mode autodiff on float64 numpy arrays.

Values are plain ``np.ndarray`` of dtype float64 (a scalar is a 0-d array).
Every operation appends one node to a :class:`Tape` and computes its value
eagerly, so a tape doubles as a record of the computation and a cache of all
intermediate values.

The property everything downstream relies on: :func:`grad` does not produce
detached arrays, it appends the backward pass to the same tape and returns
node references.  Each primitive's backward rule is written in terms of the
primitives themselves, so a gradient node is as differentiable as any other
node.  Scalar functions of gradients (for example a penalty on an input
gradient norm) can therefore be differentiated again with a second ``grad``
call, and a third, with no special casing.

Replay semantics: :func:`eval_forward` rebinds leaf values and re-executes the
recorded prefix of the tape through the exact same kernels, which makes the
replayed values bit-identical when the bindings are bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "NodeRef",
    "NonFiniteError",
    "as_tensor",
    "grad",
    "eval_forward",
]


class NonFiniteError(ArithmeticError):
    """A tensor picked up a NaN or Inf entry.

    Raised eagerly by the op that produced the value, never deferred, so the
    message can name the offending node.
    """

    def __init__(self, message: str, node_index: int | None = None):
        super().__init__(message)
        self.node_index = node_index


def as_tensor(value, shape=None) -> np.ndarray:
    """Coerce to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(value, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite entries in tensor")
    return arr


class _Node:
    __slots__ = ("op", "inputs", "shape", "meta", "value")

    def __init__(self, op, inputs, shape, meta, value):
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.meta = meta
        self.value = value


class NodeRef:
    """Handle to one tape node: the tape, an index, and a shape cache."""

    __slots__ = ("tape", "index", "shape")

    def __init__(self, tape: "Tape", index: int, shape: tuple):
        self.tape = tape
        self.index = index
        self.shape = shape

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"NodeRef({node.op}@{self.index}, shape={self.shape})"

    # Arithmetic sugar; scalars mean python floats, not 0-d nodes.
    def __add__(self, other):
        if isinstance(other, NodeRef):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, NodeRef):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, NodeRef):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, NodeRef):
            return div(self, other)
        return mul_scalar(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul_scalar(pow_scalar(self, -1.0), float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_scalar(self, float(p))


class Tape:
    """Append-only list of operation records, topological by construction."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, name: str, value) -> NodeRef:
        """Named entry point whose value can be rebound by eval_forward."""
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        arr = as_tensor(value)
        ref = self._emit("leaf", (), arr.shape, {"name": name}, arr)
        self.leaves[name] = ref.index
        return ref

    def const(self, value) -> NodeRef:
        """Fixed tensor; carries no gradient and never rebinds."""
        arr = as_tensor(value)
        return self._emit("const", (), arr.shape, {"value": arr}, arr)

    def _emit(self, op, inputs, shape, meta, value) -> NodeRef:
        if op not in _NO_CHECK_OPS and not np.all(np.isfinite(value)):
            raise NonFiniteError(
                f"non-finite value produced by op {op!r} at node {len(self.nodes)}",
                node_index=len(self.nodes),
            )
        self.nodes.append(_Node(op, inputs, tuple(shape), meta, value))
        return NodeRef(self, len(self.nodes) - 1, tuple(shape))


# Ops whose output is a rearrangement or thresholding of finite inputs and
# cannot introduce NaN or Inf, skipped by the per-node finiteness check.
_NO_CHECK_OPS = frozenset(
    {
        "leaf",
        "const",
        "reshape",
        "transpose",
        "swap01",
        "swap12",
        "flip_last",
        "concat_last",
        "slice_last",
        "pad_last",
        "fill",
        "expand_last",
        "expand_first",
        "relu",
        "leaky_relu",
        "step",
        "maxc",
        "step_between",
    }
)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _conv1d_value(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # x: [batch, in_ch, length], k: [out_ch, in_ch, width]; valid, stride 1.
    win = np.lib.stride_tricks.sliding_window_view(x, k.shape[2], axis=2)
    return np.einsum("bilk,oik->bol", win, k)


def _softmax_last_value(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


_FORWARD = {
    "leaf": lambda meta, ins: ins[0],
    "const": lambda meta, ins: meta["value"],
    "add": lambda meta, ins: ins[0] + ins[1],
    "sub": lambda meta, ins: ins[0] - ins[1],
    "mul": lambda meta, ins: ins[0] * ins[1],
    "div": lambda meta, ins: ins[0] / ins[1],
    "add_scalar": lambda meta, ins: ins[0] + meta["c"],
    "mul_scalar": lambda meta, ins: ins[0] * meta["c"],
    "pow_scalar": lambda meta, ins: ins[0] ** meta["p"],
    "matmul": lambda meta, ins: ins[0] @ ins[1],
    "transpose": lambda meta, ins: ins[0].T.copy(),
    "sum_all": lambda meta, ins: np.asarray(ins[0].sum()),
    "fill": lambda meta, ins: np.full(meta["shape"], float(ins[0])),
    "sum_last": lambda meta, ins: ins[0].sum(axis=-1),
    "expand_last": lambda meta, ins: np.repeat(ins[0][..., None], meta["n"], axis=-1),
    "sum_first": lambda meta, ins: ins[0].sum(axis=0),
    "expand_first": lambda meta, ins: np.repeat(ins[0][None, ...], meta["n"], axis=0),
    "reshape": lambda meta, ins: ins[0].reshape(meta["shape"]),
    "concat_last": lambda meta, ins: np.concatenate([ins[0], ins[1]], axis=-1),
    "slice_last": lambda meta, ins: ins[0][..., meta["start"] : meta["stop"]].copy(),
    "pad_last": lambda meta, ins: np.pad(
        ins[0], [(0, 0)] * (ins[0].ndim - 1) + [(meta["left"], meta["right"])]
    ),
    "swap01": lambda meta, ins: ins[0].swapaxes(0, 1).copy(),
    "swap12": lambda meta, ins: ins[0].swapaxes(1, 2).copy(),
    "flip_last": lambda meta, ins: np.flip(ins[0], axis=-1).copy(),
    "conv1d": lambda meta, ins: _conv1d_value(ins[0], ins[1]),
    "relu": lambda meta, ins: np.maximum(ins[0], 0.0),
    "leaky_relu": lambda meta, ins: np.where(ins[0] > 0.0, ins[0], meta["slope"] * ins[0]),
    "step": lambda meta, ins: (ins[0] > 0.0).astype(np.float64),
    "maxc": lambda meta, ins: np.maximum(ins[0], meta["c"]),
    "exp": lambda meta, ins: np.exp(ins[0]),
    "log": lambda meta, ins: np.log(ins[0]),
    "sqrt": lambda meta, ins: np.sqrt(ins[0]),
    "tanh": lambda meta, ins: np.tanh(ins[0]),
    "sigmoid": lambda meta, ins: _stable_sigmoid(ins[0]),
    "softplus": lambda meta, ins: np.maximum(ins[0], 0.0)
    + np.log1p(np.exp(-np.abs(ins[0]))),
    "softmax_last": lambda meta, ins: _softmax_last_value(ins[0]),
    "row_norm": lambda meta, ins: np.sqrt((ins[0] * ins[0]).sum(axis=-1) + meta["eps"]),
}


def _same_tape(*refs: NodeRef) -> Tape:
    tape = refs[0].tape
    for r in refs[1:]:
        if r.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _emit_op(op, refs, shape, meta) -> NodeRef:
    tape = _same_tape(*refs)
    # Non-finite results become NonFiniteError at emission; numpy's own
    # warnings about them are redundant noise.
    with np.errstate(all="ignore"):
        value = _FORWARD[op](meta, [r.value for r in refs])
    return tape._emit(op, tuple(r.index for r in refs), shape, meta, value)


def _require_same_shape(a: NodeRef, b: NodeRef, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Primitives.  Shape checks happen at build time; the forward kernels above
# run both at build time and at replay time.


def add(a: NodeRef, b: NodeRef) -> NodeRef:
    _require_same_shape(a, b, "add")
    return _emit_op("add", (a, b), a.shape, {})


def sub(a: NodeRef, b: NodeRef) -> NodeRef:
    _require_same_shape(a, b, "sub")
    return _emit_op("sub", (a, b), a.shape, {})


def mul(a: NodeRef, b: NodeRef) -> NodeRef:
    _require_same_shape(a, b, "mul")
    return _emit_op("mul", (a, b), a.shape, {})


def div(a: NodeRef, b: NodeRef) -> NodeRef:
    _require_same_shape(a, b, "div")
    return _emit_op("div", (a, b), a.shape, {})


def add_scalar(a: NodeRef, c: float) -> NodeRef:
    return _emit_op("add_scalar", (a,), a.shape, {"c": float(c)})


def mul_scalar(a: NodeRef, c: float) -> NodeRef:
    return _emit_op("mul_scalar", (a,), a.shape, {"c": float(c)})


def pow_scalar(a: NodeRef, p: float) -> NodeRef:
    return _emit_op("pow_scalar", (a,), a.shape, {"p": float(p)})


def matmul(a: NodeRef, b: NodeRef) -> NodeRef:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _emit_op("matmul", (a, b), (a.shape[0], b.shape[1]), {})


def transpose(a: NodeRef) -> NodeRef:
    if len(a.shape) != 2:
        raise ValueError(f"transpose: need a matrix, got shape {a.shape}")
    return _emit_op("transpose", (a,), (a.shape[1], a.shape[0]), {})


def sum_all(a: NodeRef) -> NodeRef:
    return _emit_op("sum_all", (a,), (), {})


def fill(a: NodeRef, shape) -> NodeRef:
    if a.shape != ():
        raise ValueError("fill: input must be scalar")
    return _emit_op("fill", (a,), tuple(shape), {"shape": tuple(shape)})


def sum_last(a: NodeRef) -> NodeRef:
    if len(a.shape) == 0:
        raise ValueError("sum_last: input has no axes")
    return _emit_op("sum_last", (a,), a.shape[:-1], {"n": a.shape[-1]})


def expand_last(a: NodeRef, n: int) -> NodeRef:
    return _emit_op("expand_last", (a,), a.shape + (int(n),), {"n": int(n)})


def sum_first(a: NodeRef) -> NodeRef:
    if len(a.shape) == 0:
        raise ValueError("sum_first: input has no axes")
    return _emit_op("sum_first", (a,), a.shape[1:], {"n": a.shape[0]})


def expand_first(a: NodeRef, n: int) -> NodeRef:
    return _emit_op("expand_first", (a,), (int(n),) + a.shape, {"n": int(n)})


def reshape(a: NodeRef, shape) -> NodeRef:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(a.shape, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"reshape: size mismatch {a.shape} -> {shape}")
    return _emit_op("reshape", (a,), shape, {"shape": shape, "orig": a.shape})


def concat_last(a: NodeRef, b: NodeRef) -> NodeRef:
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat_last: leading shapes differ {a.shape} vs {b.shape}")
    out = a.shape[:-1] + (a.shape[-1] + b.shape[-1],)
    return _emit_op("concat_last", (a, b), out, {"split": a.shape[-1]})


def slice_last(a: NodeRef, start: int, stop: int) -> NodeRef:
    n = a.shape[-1]
    if not (0 <= start <= stop <= n):
        raise ValueError(f"slice_last: bad bounds [{start}:{stop}] for axis of {n}")
    out = a.shape[:-1] + (stop - start,)
    return _emit_op(
        "slice_last", (a,), out, {"start": int(start), "stop": int(stop), "n": n}
    )


def pad_last(a: NodeRef, left: int, right: int) -> NodeRef:
    if left < 0 or right < 0:
        raise ValueError("pad_last: negative padding")
    out = a.shape[:-1] + (a.shape[-1] + left + right,)
    return _emit_op(
        "pad_last", (a,), out, {"left": int(left), "right": int(right), "n": a.shape[-1]}
    )


def swap01(a: NodeRef) -> NodeRef:
    if len(a.shape) < 2:
        raise ValueError("swap01: need at least two axes")
    out = (a.shape[1], a.shape[0]) + a.shape[2:]
    return _emit_op("swap01", (a,), out, {})


def swap12(a: NodeRef) -> NodeRef:
    if len(a.shape) < 3:
        raise ValueError("swap12: need at least three axes")
    out = (a.shape[0], a.shape[2], a.shape[1]) + a.shape[3:]
    return _emit_op("swap12", (a,), out, {})


def flip_last(a: NodeRef) -> NodeRef:
    if len(a.shape) == 0:
        raise ValueError("flip_last: input has no axes")
    return _emit_op("flip_last", (a,), a.shape, {})


def conv1d(x: NodeRef, k: NodeRef) -> NodeRef:
    """Valid cross-correlation, stride 1: [b,ci,L] x [co,ci,w] -> [b,co,L-w+1]."""
    if len(x.shape) != 3 or len(k.shape) != 3:
        raise ValueError(f"conv1d: need rank-3 operands, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"conv1d: channel mismatch {x.shape} vs {k.shape}")
    if k.shape[2] > x.shape[2]:
        raise ValueError(f"conv1d: kernel wider than input ({k.shape[2]} > {x.shape[2]})")
    out = (x.shape[0], k.shape[0], x.shape[2] - k.shape[2] + 1)
    return _emit_op("conv1d", (x, k), out, {})


def relu(a: NodeRef) -> NodeRef:
    return _emit_op("relu", (a,), a.shape, {})


def leaky_relu(a: NodeRef, slope: float = 0.2) -> NodeRef:
    if not (0.0 < slope < 1.0):
        raise ValueError(f"leaky_relu: slope must be in (0, 1), got {slope}")
    return _emit_op("leaky_relu", (a,), a.shape, {"slope": float(slope)})


def step(a: NodeRef) -> NodeRef:
    """Indicator of x > 0; derivative taken as zero everywhere."""
    return _emit_op("step", (a,), a.shape, {})


def maxc(a: NodeRef, c: float) -> NodeRef:
    return _emit_op("maxc", (a,), a.shape, {"c": float(c)})


def exp(a: NodeRef) -> NodeRef:
    return _emit_op("exp", (a,), a.shape, {})


def log(a: NodeRef) -> NodeRef:
    return _emit_op("log", (a,), a.shape, {})


def sqrt(a: NodeRef) -> NodeRef:
    return _emit_op("sqrt", (a,), a.shape, {})


def tanh(a: NodeRef) -> NodeRef:
    return _emit_op("tanh", (a,), a.shape, {})


def sigmoid(a: NodeRef) -> NodeRef:
    return _emit_op("sigmoid", (a,), a.shape, {})


def softplus(a: NodeRef) -> NodeRef:
    return _emit_op("softplus", (a,), a.shape, {})


def softmax_last(a: NodeRef) -> NodeRef:
    if len(a.shape) == 0:
        raise ValueError("softmax_last: input has no axes")
    return _emit_op("softmax_last", (a,), a.shape, {"n": a.shape[-1]})


def row_norm(a: NodeRef, eps: float = 1e-12) -> NodeRef:
    """L2 norm over the last axis, stabilized as sqrt(sum(x^2) + eps)."""
    if len(a.shape) == 0:
        raise ValueError("row_norm: input has no axes")
    return _emit_op("row_norm", (a,), a.shape[:-1], {"eps": float(eps), "n": a.shape[-1]})


# Convenience composites (differentiable through their primitive parts).


def mean_all(a: NodeRef) -> NodeRef:
    n = int(np.prod(a.shape, dtype=np.int64)) if a.shape else 1
    return mul_scalar(sum_all(a), 1.0 / n)


def minc(a: NodeRef, c: float) -> NodeRef:
    return mul_scalar(maxc(mul_scalar(a, -1.0), -float(c)), -1.0)


def clamp(a: NodeRef, lo: float, hi: float) -> NodeRef:
    return minc(maxc(a, lo), hi)


# ---------------------------------------------------------------------------
# Backward rules.  Each rule receives node references and returns
# (input_position, contribution) pairs built out of the primitives above,
# which is what makes gradients differentiable in their own right.
# Absent pairs mean a structurally zero contribution.


def _bw_add(out, g, ins, meta):
    return [(0, g), (1, g)]


def _bw_sub(out, g, ins, meta):
    return [(0, g), (1, mul_scalar(g, -1.0))]


def _bw_mul(out, g, ins, meta):
    return [(0, mul(g, ins[1])), (1, mul(g, ins[0]))]


def _bw_div(out, g, ins, meta):
    da = div(g, ins[1])
    return [(0, da), (1, mul_scalar(mul(da, out), -1.0))]


def _bw_add_scalar(out, g, ins, meta):
    return [(0, g)]


def _bw_mul_scalar(out, g, ins, meta):
    return [(0, mul_scalar(g, meta["c"]))]


def _bw_pow_scalar(out, g, ins, meta):
    p = meta["p"]
    return [(0, mul(g, mul_scalar(pow_scalar(ins[0], p - 1.0), p)))]


def _bw_matmul(out, g, ins, meta):
    return [(0, matmul(g, transpose(ins[1]))), (1, matmul(transpose(ins[0]), g))]


def _bw_transpose(out, g, ins, meta):
    return [(0, transpose(g))]


def _bw_sum_all(out, g, ins, meta):
    return [(0, fill(g, ins[0].shape))]


def _bw_fill(out, g, ins, meta):
    return [(0, sum_all(g))]


def _bw_sum_last(out, g, ins, meta):
    return [(0, expand_last(g, meta["n"]))]


def _bw_expand_last(out, g, ins, meta):
    return [(0, sum_last(g))]


def _bw_sum_first(out, g, ins, meta):
    return [(0, expand_first(g, meta["n"]))]


def _bw_expand_first(out, g, ins, meta):
    return [(0, sum_first(g))]


def _bw_reshape(out, g, ins, meta):
    return [(0, reshape(g, meta["orig"]))]


def _bw_concat_last(out, g, ins, meta):
    s = meta["split"]
    return [(0, slice_last(g, 0, s)), (1, slice_last(g, s, g.shape[-1]))]


def _bw_slice_last(out, g, ins, meta):
    return [(0, pad_last(g, meta["start"], meta["n"] - meta["stop"]))]


def _bw_pad_last(out, g, ins, meta):
    left = meta["left"]
    return [(0, slice_last(g, left, left + meta["n"]))]


def _bw_swap01(out, g, ins, meta):
    return [(0, swap01(g))]


def _bw_swap12(out, g, ins, meta):
    return [(0, swap12(g))]


def _bw_flip_last(out, g, ins, meta):
    return [(0, flip_last(g))]


def _bw_conv1d(out, g, ins, meta):
    x, k = ins
    w = k.shape[2]
    # Input gradient: full correlation of g with channel-swapped, time-flipped
    # kernels.  Kernel gradient: correlate x with g, batch playing the role of
    # channels on both sides.
    dx = conv1d(pad_last(g, w - 1, w - 1), flip_last(swap01(k)))
    dk = swap01(conv1d(swap01(x), swap01(g)))
    return [(0, dx), (1, dk)]


def _bw_relu(out, g, ins, meta):
    return [(0, mul(g, step(ins[0])))]


def _bw_leaky_relu(out, g, ins, meta):
    # Slope on the negative side, 1 on the positive side, 0 exactly at the kink.
    mask = add(step(ins[0]), mul_scalar(step(mul_scalar(ins[0], -1.0)), meta["slope"]))
    return [(0, mul(g, mask))]


def _bw_step(out, g, ins, meta):
    return []


def _bw_maxc(out, g, ins, meta):
    return [(0, mul(g, step(add_scalar(ins[0], -meta["c"]))))]


def _bw_exp(out, g, ins, meta):
    return [(0, mul(g, out))]


def _bw_log(out, g, ins, meta):
    return [(0, div(g, ins[0]))]


def _bw_sqrt(out, g, ins, meta):
    return [(0, div(mul_scalar(g, 0.5), out))]


def _bw_tanh(out, g, ins, meta):
    one_minus_sq = add_scalar(mul_scalar(mul(out, out), -1.0), 1.0)
    return [(0, mul(g, one_minus_sq))]


def _bw_sigmoid(out, g, ins, meta):
    one_minus = add_scalar(mul_scalar(out, -1.0), 1.0)
    return [(0, mul(g, mul(out, one_minus)))]


def _bw_softplus(out, g, ins, meta):
    return [(0, mul(g, sigmoid(ins[0])))]


def _bw_softmax_last(out, g, ins, meta):
    inner = sub(g, expand_last(sum_last(mul(g, out)), meta["n"]))
    return [(0, mul(out, inner))]


def _bw_row_norm(out, g, ins, meta):
    scale = expand_last(div(g, out), meta["n"])
    return [(0, mul(ins[0], scale))]


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "div": _bw_div,
    "add_scalar": _bw_add_scalar,
    "mul_scalar": _bw_mul_scalar,
    "pow_scalar": _bw_pow_scalar,
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "sum_all": _bw_sum_all,
    "fill": _bw_fill,
    "sum_last": _bw_sum_last,
    "expand_last": _bw_expand_last,
    "sum_first": _bw_sum_first,
    "expand_first": _bw_expand_first,
    "reshape": _bw_reshape,
    "concat_last": _bw_concat_last,
    "slice_last": _bw_slice_last,
    "pad_last": _bw_pad_last,
    "swap01": _bw_swap01,
    "swap12": _bw_swap12,
    "flip_last": _bw_flip_last,
    "conv1d": _bw_conv1d,
    "relu": _bw_relu,
    "leaky_relu": _bw_leaky_relu,
    "step": _bw_step,
    "maxc": _bw_maxc,
    "exp": _bw_exp,
    "log": _bw_log,
    "sqrt": _bw_sqrt,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "softplus": _bw_softplus,
    "softmax_last": _bw_softmax_last,
    "row_norm": _bw_row_norm,
}


def grad(tape: Tape, scalar_output: NodeRef, wrt: list[NodeRef]) -> list[NodeRef]:
    """Reverse sweep from a scalar node, appended to the same tape.

    Returns one node per entry of ``wrt``, in order.  A wrt node with no path
    to the output gets a zero constant of its shape rather than an error.
    The returned nodes are live tape nodes, so they can feed further ops and
    further ``grad`` calls.
    """
    if scalar_output.tape is not tape:
        raise ValueError("output node is not on this tape")
    if scalar_output.shape != ():
        raise ValueError(f"output must be scalar, got shape {scalar_output.shape}")
    for r in wrt:
        if r.tape is not tape:
            raise ValueError("wrt node is not on this tape")

    out_idx = scalar_output.index
    nodes = tape.nodes

    # Nodes whose adjoint can influence some wrt adjoint: ancestors of the
    # output intersected with descendants of the wrt set.
    ancestor = np.zeros(out_idx + 1, dtype=bool)
    ancestor[out_idx] = True
    for i in range(out_idx, -1, -1):
        if ancestor[i]:
            for j in nodes[i].inputs:
                ancestor[j] = True

    descendant = np.zeros(out_idx + 1, dtype=bool)
    for r in wrt:
        if r.index <= out_idx:
            descendant[r.index] = True
    for i in range(out_idx + 1):
        if not descendant[i]:
            for j in nodes[i].inputs:
                if descendant[j]:
                    descendant[i] = True
                    break

    needed = ancestor & descendant

    adjoint: dict[int, NodeRef] = {}
    if needed[out_idx]:
        adjoint[out_idx] = tape.const(np.asarray(1.0))

    for i in range(out_idx, -1, -1):
        if not needed[i] or i not in adjoint:
            continue
        node = nodes[i]
        rule = _BACKWARD.get(node.op)
        if rule is None:
            continue  # leaf and const terminate the sweep
        g_ref = adjoint[i]
        out_ref = NodeRef(tape, i, node.shape)
        in_refs = [NodeRef(tape, j, nodes[j].shape) for j in node.inputs]
        for pos, contrib in rule(out_ref, g_ref, in_refs, node.meta):
            j = node.inputs[pos]
            if not needed[j]:
                continue
            if j in adjoint:
                adjoint[j] = add(adjoint[j], contrib)
            else:
                adjoint[j] = contrib

    results = []
    for r in wrt:
        got = adjoint.get(r.index)
        if got is None:
            got = tape.const(np.zeros(r.shape))
        results.append(got)
    return results


def eval_forward(tape: Tape, leaf_values: dict[str, np.ndarray], output: NodeRef) -> np.ndarray:
    """Rebind leaves and replay the tape prefix up to ``output``.

    Requires a binding for every leaf on the tape and accepts no extras.
    Replay runs the identical kernels used at build time, so identical
    bindings reproduce every node value bit for bit.
    """
    if output.tape is not tape:
        raise ValueError("output node is not on this tape")
    missing = set(tape.leaves) - set(leaf_values)
    if missing:
        raise ValueError(f"unbound leaves: {sorted(missing)}")
    unknown = set(leaf_values) - set(tape.leaves)
    if unknown:
        raise ValueError(f"unknown leaves: {sorted(unknown)}")

    nodes = tape.nodes
    for name, value in leaf_values.items():
        idx = tape.leaves[name]
        nodes[idx].value = as_tensor(value, shape=nodes[idx].shape)

    with np.errstate(all="ignore"):
        for i in range(output.index + 1):
            node = nodes[i]
            if node.op == "leaf":
                continue
            ins = [nodes[j].value for j in node.inputs]
            value = _FORWARD[node.op](node.meta, ins)
            if node.op not in _NO_CHECK_OPS and not np.all(np.isfinite(value)):
                raise NonFiniteError(
                    f"non-finite value at node {i} (op {node.op!r}) during replay",
                    node_index=i,
                )
            node.value = value

    return nodes[output.index].value
