"""Finite-difference validation of tape gradients.

Order 1 compares the gradient nodes produced by :func:`wganlab.tape.grad`
against central differences of the scalar itself.  Order 2 re-derives each
row of the Hessian by differentiating the gradient components (reverse over
reverse) and compares them against central differences of the analytic
gradient, which is cheap to evaluate at shifted points because gradient
nodes replay like any other node.

``PROBES`` builds one scalar graph per primitive so the whole op set can be
swept at a given seed; ``grad_norm_scalar`` wraps a probe into the norm of
its own input gradient, the construction the penalty term uses, so the
second-order path through every primitive gets exercised directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tape as T
from .tape import NodeRef, Tape, eval_forward, grad

__all__ = [
    "check_gradient_fd",
    "check_critic_loss_fd",
    "grad_norm_scalar",
    "GradProbe",
    "make_probes",
    "run_grad_checks",
    "DEFAULT_H",
    "ORDER1_TOL",
    "ORDER2_TOL",
]

DEFAULT_H = 1e-5
ORDER1_TOL = 1e-5
ORDER2_TOL = 1e-4


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.abs(analytic))
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


def _fd_of_node(t: Tape, node: NodeRef, leaf: str, point: np.ndarray, h: float):
    """Central difference of any tape node with respect to one leaf."""
    base = {name: t.nodes[idx].value for name, idx in t.leaves.items()}
    flat = point.reshape(-1)
    cols = []
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        plus = (flat + bump).reshape(point.shape)
        minus = (flat - bump).reshape(point.shape)
        fp = eval_forward(t, {**base, leaf: plus}, node)
        fm = eval_forward(t, {**base, leaf: minus}, node)
        cols.append((np.asarray(fp) - np.asarray(fm)) / (2.0 * h))
    eval_forward(t, {**base, leaf: point}, node)  # restore values at the point
    return cols


def check_gradient_fd(
    t: Tape,
    output: NodeRef,
    leaf: str,
    point: np.ndarray,
    h: float = DEFAULT_H,
    order: int = 1,
) -> float:
    """Max relative disagreement between tape gradients and central differences.

    The error for a coordinate is |analytic - fd| / max(1, |analytic|); the
    returned value is the max over coordinates (order 1) or over all Hessian
    entries (order 2, analytic rows against fd columns of the gradient).
    Raises if the output is not scalar or if the differences all vanish while
    the analytic gradient does not, which means h was too small to resolve.
    """
    if leaf not in t.leaves:
        raise ValueError(f"unknown leaf {leaf!r}")
    if output.shape != ():
        raise ValueError("output must be a scalar node")
    point = np.asarray(point, dtype=np.float64)
    leaf_shape = t.nodes[t.leaves[leaf]].shape
    if point.shape != leaf_shape:
        raise ValueError(f"point shape {point.shape} does not match leaf {leaf_shape}")

    leaf_ref = NodeRef(t, t.leaves[leaf], leaf_shape)
    (g,) = grad(t, output, [leaf_ref])
    base = {name: t.nodes[idx].value for name, idx in t.leaves.items()}
    base[leaf] = point

    if order == 1:
        analytic = np.array(eval_forward(t, base, g), copy=True)
        fd_cols = _fd_of_node(t, output, leaf, point, h)
        numeric = np.array([float(c) for c in fd_cols]).reshape(point.shape)
        if np.all(numeric == 0.0) and np.any(analytic != 0.0):
            raise ValueError("step h too small to resolve any variation")
        return _relative_error(analytic, numeric)

    if order == 2:
        n = point.size
        g_flat = T.reshape(g, (n,))
        rows = []
        for i in range(n):
            comp = T.reshape(T.slice_last(g_flat, i, i + 1), ())
            (row,) = grad(t, comp, [leaf_ref])
            rows.append(row)
        analytic = np.empty((n, n))
        for i, row in enumerate(rows):
            analytic[i] = np.asarray(eval_forward(t, base, row)).reshape(-1)
        fd_cols = _fd_of_node(t, g, leaf, point, h)
        numeric = np.stack([np.asarray(c).reshape(-1) for c in fd_cols], axis=1)
        if np.all(numeric == 0.0) and np.any(analytic != 0.0):
            raise ValueError("step h too small to resolve any variation")
        # A column of fd is a row of the Hessian by symmetry of second partials.
        return _relative_error(analytic, numeric.T)

    raise ValueError(f"order must be 1 or 2, got {order}")


def grad_norm_scalar(t: Tape, output: NodeRef, leaf: str) -> NodeRef:
    """Stabilized L2 norm of d(output)/d(leaf), as a scalar node.

    This is the shape of the gradient penalty: a scalar built from gradient
    nodes, ready to be differentiated once more.
    """
    leaf_ref = NodeRef(t, t.leaves[leaf], t.nodes[t.leaves[leaf]].shape)
    (g,) = grad(t, output, [leaf_ref])
    n = int(np.prod(g.shape)) if g.shape else 1
    return T.row_norm(T.reshape(g, (n,)), eps=1e-12)


@dataclass(frozen=True)
class GradProbe:
    """A scalar graph exercising one primitive at a reproducible point."""

    name: str
    point: np.ndarray
    build: Callable[[Tape, NodeRef], NodeRef]

    def make(self) -> tuple[Tape, NodeRef]:
        t = Tape()
        x = t.leaf("x", self.point)
        return t, self.build(t, x)


def _away_from(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Standard normal draw with every entry pushed outside +-margin of 0."""
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)
    return np.where(x == 0.0, margin, x)


def make_probes(seed: int) -> list[GradProbe]:
    """One probe per primitive (two for the binary slots worth separating).

    Each probe reduces to a scalar through a fixed random weighting so that
    the pullback through the primitive is dense.  Points avoid kinks of the
    piecewise ops by a fixed margin, and positive-domain ops get shifted
    points.
    """
    rng = np.random.default_rng(seed)

    def weighted(w):
        w = np.asarray(w)

        def reduce(t: Tape, y: NodeRef) -> NodeRef:
            return T.sum_all(T.mul(y, t.const(w)))

        return reduce

    probes: list[GradProbe] = []

    def addp(name, shape, build, transform=None):
        pt = rng.standard_normal(shape)
        if transform is not None:
            pt = transform(pt)
        probes.append(GradProbe(name, pt, build))

    w23 = rng.standard_normal((2, 3))
    c23 = rng.standard_normal((2, 3))
    addp("add", (2, 3), lambda t, x: weighted(w23)(t, T.add(x, t.const(c23))))
    addp("sub", (2, 3), lambda t, x: weighted(w23)(t, T.sub(t.const(c23), x)))
    addp("mul", (2, 3), lambda t, x: weighted(w23)(t, T.mul(x, t.const(c23))))
    div_c = np.sign(c23) * (np.abs(c23) + 0.5)
    addp("div_num", (2, 3), lambda t, x: weighted(w23)(t, T.div(x, t.const(div_c))))
    addp(
        "div_den",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.div(t.const(c23), x)),
        transform=lambda p: np.sign(p) * (np.abs(p) + 0.5),
    )
    addp("add_scalar", (2, 3), lambda t, x: weighted(w23)(t, T.add_scalar(x, 1.7)))
    addp("mul_scalar", (2, 3), lambda t, x: weighted(w23)(t, T.mul_scalar(x, -2.5)))
    addp(
        "pow_scalar",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.pow_scalar(x, 3.0)),
    )
    w24 = rng.standard_normal((2, 4))
    m34 = rng.standard_normal((3, 4))
    addp("matmul_left", (2, 3), lambda t, x: weighted(w24)(t, T.matmul(x, t.const(m34))))
    m23 = rng.standard_normal((2, 3))
    addp("matmul_right", (3, 4), lambda t, x: weighted(w24)(t, T.matmul(t.const(m23), x)))
    w32 = rng.standard_normal((3, 2))
    addp("transpose", (2, 3), lambda t, x: weighted(w32)(t, T.transpose(x)))
    addp("sum_all", (2, 3), lambda t, x: T.sum_all(x))
    w23b = rng.standard_normal((2, 3))
    addp("fill", (), lambda t, x: weighted(w23b)(t, T.fill(x, (2, 3))))
    w2 = rng.standard_normal((2,))
    addp("sum_last", (2, 3), lambda t, x: weighted(w2)(t, T.sum_last(x)))
    addp("expand_last", (2,), lambda t, x: weighted(w23)(t, T.expand_last(x, 3)))
    w3 = rng.standard_normal((3,))
    addp("sum_first", (2, 3), lambda t, x: weighted(w3)(t, T.sum_first(x)))
    addp("expand_first", (3,), lambda t, x: weighted(w23)(t, T.expand_first(x, 2)))
    w6 = rng.standard_normal((6,))
    addp("reshape", (2, 3), lambda t, x: weighted(w6)(t, T.reshape(x, (6,))))
    w25 = rng.standard_normal((2, 5))
    c22 = rng.standard_normal((2, 2))
    addp(
        "concat_last",
        (2, 3),
        lambda t, x: weighted(w25)(t, T.concat_last(x, t.const(c22))),
    )
    w22 = rng.standard_normal((2, 2))
    addp("slice_last", (2, 4), lambda t, x: weighted(w22)(t, T.slice_last(x, 1, 3)))
    w27 = rng.standard_normal((2, 7))
    addp("pad_last", (2, 4), lambda t, x: weighted(w27)(t, T.pad_last(x, 1, 2)))
    w324 = rng.standard_normal((3, 2, 4))
    addp("swap01", (2, 3, 4), lambda t, x: weighted(w324)(t, T.swap01(x)))
    w243 = rng.standard_normal((2, 4, 3))
    addp("swap12", (2, 3, 4), lambda t, x: weighted(w243)(t, T.swap12(x)))
    w14 = rng.standard_normal((4,))
    addp("flip_last", (4,), lambda t, x: weighted(w14)(t, T.flip_last(x)))
    kern = rng.standard_normal((2, 3, 3))
    w224 = rng.standard_normal((2, 2, 4))
    addp(
        "conv1d_input",
        (2, 3, 6),
        lambda t, x: weighted(w224)(t, T.conv1d(x, t.const(kern))),
    )
    xin = rng.standard_normal((2, 3, 6))
    addp(
        "conv1d_kernel",
        (2, 3, 3),
        lambda t, x: weighted(w224)(t, T.conv1d(t.const(xin), x)),
    )
    addp(
        "relu",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.relu(x)),
        transform=lambda p: _away_from(rng, p.shape),
    )
    addp(
        "leaky_relu",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.leaky_relu(x, 0.2)),
        transform=lambda p: _away_from(rng, p.shape),
    )
    addp(
        "step",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.step(x)),
        transform=lambda p: _away_from(rng, p.shape),
    )
    addp(
        "maxc",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.maxc(x, 0.3)),
        transform=lambda p: np.where(np.abs(p - 0.3) < 0.05, p + 0.2, p),
    )
    addp("exp", (2, 3), lambda t, x: weighted(w23)(t, T.exp(x)))
    addp(
        "log",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.log(x)),
        transform=lambda p: np.abs(p) + 0.5,
    )
    addp(
        "sqrt",
        (2, 3),
        lambda t, x: weighted(w23)(t, T.sqrt(x)),
        transform=lambda p: np.abs(p) + 0.5,
    )
    addp("tanh", (2, 3), lambda t, x: weighted(w23)(t, T.tanh(x)))
    addp("sigmoid", (2, 3), lambda t, x: weighted(w23)(t, T.sigmoid(x)))
    addp("softplus", (2, 3), lambda t, x: weighted(w23)(t, T.softplus(x)))
    addp("softmax_last", (2, 3), lambda t, x: weighted(w23)(t, T.softmax_last(x)))
    addp("row_norm", (2, 3), lambda t, x: weighted(w2)(t, T.row_norm(x, 1e-12)))
    return probes


def _unpack_params(theta: NodeRef, shapes: list[tuple[str, tuple]]) -> dict[str, NodeRef]:
    """Slice a flat parameter vector node into named parameter nodes."""
    nodes: dict[str, NodeRef] = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        piece = T.slice_last(theta, offset, offset + count)
        nodes[name] = T.reshape(piece, shape)
        offset += count
    return nodes


def _min_kink_margin(params, xs: np.ndarray, n_layers: int) -> float:
    """Smallest |preactivation| any hidden relu sees for the batch."""
    margin = np.inf
    h = xs
    for i in range(n_layers):
        pre = h @ params[f"w{i}"].T + params[f"b{i}"]
        if i < n_layers - 1:
            margin = min(margin, float(np.abs(pre).min()))
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return margin


def check_critic_loss_fd(
    seed: int, order: int = 1, h: float = DEFAULT_H, batch: int = 3
) -> float:
    """FD error of the penalized critic loss w.r.t. all critic parameters.

    The parameters of a small MLP critic are packed into a single flat leaf
    so the order-2 sweep covers cross-parameter Hessian entries, not just
    per-tensor blocks.  The loss is the two-sided penalty objective on fixed
    real/fake/interpolate batches; differentiating it already goes through
    the gradient nodes of the penalty, so order 1 here is a second-order
    test of the engine and order 2 a third-order one.  Batches are redrawn
    (deterministically, from the seeded stream) until every relu
    preactivation clears a margin, because differences across a kink do not
    estimate the one-sided derivative the tape reports.
    """
    from .gan import CriticRegime, critic_loss, interpolate_samples
    from .nn import Mlp, MlpSpec

    rng = np.random.default_rng(seed)
    model = Mlp(MlpSpec(widths=(2, 4, 3, 1)))
    params = model.init_params(seed)
    n_layers = model.spec.n_layers
    shapes = [(name, params[name].shape) for name in params.names()]
    theta0 = np.concatenate([params[name].reshape(-1) for name in params.names()])

    for _ in range(100):
        x_real = rng.standard_normal((batch, 2)) + 1.0
        x_fake = rng.standard_normal((batch, 2)) - 1.0
        eps = rng.uniform(0.0, 1.0, size=batch)
        xhat = interpolate_samples(x_real, x_fake, eps)
        margin = min(
            _min_kink_margin(params, xs, n_layers) for xs in (x_real, x_fake, xhat)
        )
        if margin > 1e-3:
            break
    else:
        raise RuntimeError("could not find a batch clear of relu kinks")

    t = Tape()
    theta = t.leaf("theta", theta0)
    nodes = _unpack_params(theta, shapes)
    loss, _ = critic_loss(t, CriticRegime("gp"), model, nodes, x_real, x_fake, xhat=xhat)
    return check_gradient_fd(t, loss, "theta", theta0, h=h, order=order)


def run_grad_checks(seed: int = 0, h: float = DEFAULT_H, include_loss: bool = True):
    """Sweep every primitive probe plus the critic loss at both orders.

    Returns (name, order, error, tolerance) rows; a row passes when
    error < tolerance.
    """
    rows: list[tuple[str, int, float, float]] = []
    for probe in make_probes(seed):
        for order, tol in ((1, ORDER1_TOL), (2, ORDER2_TOL)):
            t, out = probe.make()
            err = check_gradient_fd(t, out, "x", probe.point, h=h, order=order)
            rows.append((probe.name, order, err, tol))
    if include_loss:
        for order, tol in ((1, ORDER1_TOL), (2, ORDER2_TOL)):
            err = check_critic_loss_fd(seed, order=order, h=h)
            rows.append(("critic_loss_gp", order, err, tol))
    return rows
