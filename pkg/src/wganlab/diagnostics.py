"""Instruments for looking inside a critic: value surfaces, per-layer
gradient norms, weight histograms, penalty statistics, and an
overfitting tracker that follows train/validation score gaps.

Everything here evaluates models with parameters mounted as constants, so
diagnostics never perturb training state or its random streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .tape import Tape, grad
from .nn import ParamSet
from .gan import scores_of

__all__ = [
    "value_surface",
    "format_surface_csv",
    "layer_gradient_norms",
    "critic_loss_layer_norms",
    "format_gradnorm_csv",
    "weight_histogram",
    "format_histogram_csv",
    "penalty_norm_stats",
    "TrainValTracker",
    "svg_line_chart",
    "svg_heatmap",
]


def value_surface(
    model, params: ParamSet, xs: np.ndarray, ys: np.ndarray, chunk: int = 4096
) -> np.ndarray:
    """Critic values over a 2-d grid, returned as rows (x, y, value).

    Rows iterate x outer, y inner, matching the CSV layout.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    vals = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        vals[lo:hi] = scores_of(model, params, pts[lo:hi])
    return np.concatenate([pts, vals[:, None]], axis=1)


def format_surface_csv(rows: np.ndarray, comment: str) -> str:
    out = [f"# {comment}", "x,y,value"]
    for x, y, v in rows:
        out.append(f"{x:.17g},{y:.17g},{v:.17g}")
    return "\n".join(out) + "\n"


def layer_gradient_norms(model, params: ParamSet, batch: np.ndarray, loss_of_scores=None) -> list[float]:
    """L2 norm of d(loss)/d(activation) for each layer, input side first.

    ``loss_of_scores`` maps the score node to a scalar node; the default is
    the plain sum.  Layers the loss never touches get an exact zero.
    """
    t = Tape()
    nodes = params.to_consts(t)
    taps: list = []
    scores = model.forward(nodes, t.const(batch), taps=taps)
    loss = loss_of_scores(t, scores) if loss_of_scores else T.sum_all(scores)
    grads = grad(t, loss, taps)
    return [float(np.sqrt((np.asarray(g.value) ** 2).sum())) for g in grads]


def critic_loss_layer_norms(
    model, params: ParamSet, x_real: np.ndarray, x_fake: np.ndarray
) -> list[float]:
    """Per-layer gradient norms of the unpenalized critic objective
    mean D(fake) - mean D(real), with both batches stacked into one pass."""
    m = x_real.shape[0]
    batch = np.concatenate([np.asarray(x_fake), np.asarray(x_real)], axis=0)

    def loss_of_scores(t, scores):
        fake_mean = T.mean_all(T.slice_last(scores, 0, m))
        real_mean = T.mean_all(T.slice_last(scores, m, 2 * m))
        return T.sub(fake_mean, real_mean)

    return layer_gradient_norms(model, params, batch, loss_of_scores)


def format_gradnorm_csv(records: list[tuple[int, int, float]], comment: str) -> str:
    """Rows of (iteration, layer index, norm)."""
    out = [f"# {comment}", "iter,layer,norm"]
    for it, layer, norm in records:
        out.append(f"{it},{layer},{norm:.17g}")
    return "\n".join(out) + "\n"


def weight_histogram(
    params: ParamSet,
    bins: int,
    lo: float | None = None,
    hi: float | None = None,
    matrices_only: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Histogram of parameter entries as (bin_lo, bin_hi, counts).

    By default only weight matrices and kernels count (entries of rank >= 2
    parameters); the range defaults to symmetric around the largest
    magnitude.  Values outside an explicit range land in the edge bins.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    chunks = [
        v.reshape(-1) for v in (params[n] for n in params) if (not matrices_only or v.ndim >= 2)
    ]
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    if lo is None or hi is None:
        peak = float(np.abs(flat).max()) if flat.size else 1.0
        peak = peak if peak > 0 else 1.0
        lo, hi = -peak, peak
    if not lo < hi:
        raise ValueError("empty histogram range")
    clipped = np.clip(flat, lo, hi)
    counts, edges = np.histogram(clipped, bins=bins, range=(lo, hi))
    return edges[:-1], edges[1:], counts


def format_histogram_csv(bin_lo, bin_hi, counts, comment: str) -> str:
    out = [f"# {comment}", "bin_lo,bin_hi,count"]
    for lo, hi, c in zip(bin_lo, bin_hi, counts):
        out.append(f"{lo:.17g},{hi:.17g},{int(c)}")
    return "\n".join(out) + "\n"


def penalty_norm_stats(model, params: ParamSet, xhat: np.ndarray, chunk: int = 2048) -> tuple[float, float]:
    """(mean, mean squared distance from 1) of the critic's input-gradient
    norms at the given interpolates."""
    xhat = np.asarray(xhat, dtype=np.float64)
    norms = []
    for lo in range(0, xhat.shape[0], chunk):
        part = xhat[lo : lo + chunk]
        t = Tape()
        nodes = params.to_consts(t)
        xnode = t.const(part)
        total = T.sum_all(model.forward(nodes, xnode))
        (gx,) = grad(t, total, [xnode])
        flat = np.asarray(gx.value).reshape(part.shape[0], -1)
        norms.append(np.sqrt((flat**2).sum(axis=1) + 1e-12))
    vals = np.concatenate(norms)
    return float(vals.mean()), float(((vals - 1.0) ** 2).mean())


@dataclass
class TrainValTracker:
    """Metric sink recording mean D(train) - mean D(fake) and the same for a
    held-out set, sharing one fake batch per measurement.

    A critic that memorizes its training set sends the train series up while
    the validation series stalls, so the gap between the two series is the
    overfitting signal.  The tracker owns its fake batch source so that
    measuring never advances the training streams.
    """

    train_points: np.ndarray
    val_points: np.ndarray
    fake_fn: object  # callable n -> [n, ...] fake batch
    cadence: int = 10
    batch: int = 256
    records: list[tuple[int, float, float]] = field(default_factory=list)

    def __call__(self, state) -> None:
        if state.iteration % self.cadence != 0:
            return
        fake = self.fake_fn(self.batch)
        fake_mean = float(scores_of(state.critic_model, state.critic_params, fake).mean())
        train_mean = float(
            scores_of(state.critic_model, state.critic_params, self.train_points).mean()
        )
        val_mean = float(
            scores_of(state.critic_model, state.critic_params, self.val_points).mean()
        )
        self.records.append((state.iteration, train_mean - fake_mean, val_mean - fake_mean))

    def format_csv(self, comment: str) -> str:
        out = [f"# {comment}", "iter,train_score,val_score"]
        for it, tr, va in self.records:
            out.append(f"{it},{tr:.17g},{va:.17g}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Small self-contained SVG writers (rectilinear, no external renderer).


def _svg_header(w: int, h: int) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}"><rect width="{w}" height="{h}" fill="white"/>'
    )


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(series: dict[str, tuple[np.ndarray, np.ndarray]], path, log_y: bool = False, width: int = 640, height: int = 400) -> None:
    """Plot named (x, y) series as polylines with a legend."""
    margin = 50
    pieces = [_svg_header(width, height)]
    all_x = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    all_y = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    if log_y:
        all_y = np.log10(np.maximum(all_y, 1e-300))
    x0, x1 = float(all_x.min()), float(all_x.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return margin + (v - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y0) / (y1 - y0) * (height - 2 * margin)

    pieces.append(
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>'
    )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=float)
        if log_y:
            ys = np.log10(np.maximum(ys, 1e-300))
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        color = _PALETTE[i % len(_PALETTE)]
        pieces.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        pieces.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i + 10}" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    lo_label = f"{y0:.3g}" + (" (log10)" if log_y else "")
    pieces.append(
        f'<text x="{margin}" y="{height - margin + 16}" font-size="11">{x0:.3g}</text>'
        f'<text x="{width - margin - 20}" y="{height - margin + 16}" font-size="11">{x1:.3g}</text>'
        f'<text x="4" y="{height - margin}" font-size="11">{lo_label}</text>'
        f'<text x="4" y="{margin}" font-size="11">{y1:.3g}</text>'
    )
    pieces.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(pieces))


def svg_heatmap(xs: np.ndarray, ys: np.ndarray, values: np.ndarray, path, width: int = 520, height: int = 520) -> None:
    """Grid of colored cells for values indexed [len(xs), len(ys)]."""
    margin = 30
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    values = np.asarray(values, dtype=float)
    if values.shape != (xs.size, ys.size):
        raise ValueError(f"values shape {values.shape} does not match grid")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    cw = (width - 2 * margin) / xs.size
    ch = (height - 2 * margin) / ys.size
    pieces = [_svg_header(width, height)]
    for i in range(xs.size):
        for j in range(ys.size):
            z = (values[i, j] - lo) / span
            r = int(255 * z)
            b = int(255 * (1 - z))
            x = margin + i * cw
            y = height - margin - (j + 1) * ch
            pieces.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw + 0.5:.2f}" height="{ch + 0.5:.2f}" '
                f'fill="rgb({r},64,{b})"/>'
            )
    pieces.append(
        f'<text x="{margin}" y="{height - 8}" font-size="11">value range [{lo:.3g}, {hi:.3g}]</text>'
    )
    pieces.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(pieces))
