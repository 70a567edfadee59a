"""Critic/generator objectives and the alternating training loop.

One training step mounts parameters as leaves on a fresh tape, builds the
regime's loss, and reads parameter gradients off the tape.  For the
gradient-penalty regimes the loss itself contains gradient nodes (the norm
of the critic's input gradient at interpolated points), so the parameter
gradient is a second reverse sweep through the first one.

Fake samples are detached during critic updates: the critic tape sees them
as constants.  The generator update is a separate tape where the critic's
parameters are the constants.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tape as T
from .tape import NodeRef, NonFiniteError, Tape, grad
from .nn import ParamSet
from .optim import clip_weights, make_optimizer

__all__ = [
    "CriticRegime",
    "TrainConfig",
    "MetricsRow",
    "TrainResult",
    "TrainDiverged",
    "LearnedGenerator",
    "FixedFake",
    "interpolate_samples",
    "critic_loss",
    "generator_loss",
    "estimate_wasserstein",
    "fixed_noisy_generator",
    "FixedNoisySampler",
    "train",
    "format_metrics_csv",
    "METRICS_HEADER",
]

NORM_EPS = 1e-12
PROB_CLAMP = 1e-7

REGIME_KINDS = ("gp", "gp1", "clip", "gan")


@dataclass(frozen=True)
class CriticRegime:
    """How the critic is constrained: penalty (two- or one-sided), hard
    clipping after each update, or the original cross-entropy game."""

    kind: str = "gp"
    clip_c: float = 0.01
    penalty_lambda: float = 10.0

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ValueError(f"regime must be one of {REGIME_KINDS}, got {self.kind!r}")
        if self.clip_c <= 0:
            raise ValueError("clip threshold must be positive")
        if self.penalty_lambda < 0:
            raise ValueError("penalty weight must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 1000
    n_critic: int = 5
    batch_size: int = 64
    regime: CriticRegime = field(default_factory=CriticRegime)
    opt: str = "adam"
    alpha: float = 1e-4
    alpha_gen: float | None = None
    beta1: float = 0.0
    beta2: float = 0.9
    rms_decay: float = 0.9
    seed: int = 0
    timing: bool = True
    metric_eval_n: int = 0  # >0: w_estimate from probe sets frozen at startup

    def __post_init__(self):
        if self.iters < 0 or self.n_critic < 1 or self.batch_size < 1:
            raise ValueError("iters must be >= 0, n_critic and batch_size >= 1")
        if self.metric_eval_n < 0:
            raise ValueError("metric_eval_n must be non-negative")

    @property
    def gen_alpha(self) -> float:
        return self.alpha if self.alpha_gen is None else self.alpha_gen


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    critic_loss: float
    gen_loss: float
    w_estimate: float
    gp_mean_norm: float
    gp_msd: float
    seconds: float
    layer_grad_norms: tuple[float, ...] | None = None


METRICS_HEADER = "iter,critic_loss,gen_loss,w_estimate,gp_mean_norm,gp_msd,seconds"


def format_metrics_csv(rows, comment: str) -> str:
    """Comment line, fixed header, then one row per generator iteration."""
    out = [f"# {comment}", METRICS_HEADER]
    for r in rows:
        out.append(
            f"{r.iteration},{r.critic_loss:.17g},{r.gen_loss:.17g},"
            f"{r.w_estimate:.17g},{r.gp_mean_norm:.17g},{r.gp_msd:.17g},"
            f"{r.seconds:.17g}"
        )
    return "\n".join(out) + "\n"


class TrainDiverged(RuntimeError):
    """Training hit a non-finite value; carries the last finite parameters."""

    def __init__(self, iteration: int, critic_params: ParamSet, gen_params: ParamSet | None, cause):
        super().__init__(f"non-finite value at generator iteration {iteration}: {cause}")
        self.iteration = iteration
        self.critic_params = critic_params
        self.gen_params = gen_params


@dataclass
class LearnedGenerator:
    """A trainable generator: model plus parameters plus its noise source."""

    model: object
    params: ParamSet
    latent: object

    def sample_detached(self, n: int) -> np.ndarray:
        t = Tape()
        nodes = self.params.to_consts(t)
        z = t.const(self.latent.sample(n))
        return np.asarray(self.model.forward(nodes, z).value)


@dataclass
class FixedFake:
    """A frozen fake distribution standing in for a generator."""

    sampler: object

    def sample_detached(self, n: int) -> np.ndarray:
        return np.asarray(self.sampler.sample(n))


def _draw_fake(source, n: int) -> np.ndarray:
    if hasattr(source, "sample_detached"):
        return source.sample_detached(n)
    return np.asarray(source.sample(n))


def interpolate_samples(x_real: np.ndarray, x_fake: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per-example convex mix eps*x_real + (1-eps)*x_fake.

    ``eps`` has one entry per example and broadcasts over the remaining axes.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch {x_real.shape} vs {x_fake.shape}")
    if eps.shape != (x_real.shape[0],):
        raise ValueError(f"eps must have shape ({x_real.shape[0]},), got {eps.shape}")
    if eps.size and (eps.min() < 0.0 or eps.max() > 1.0):
        raise ValueError("eps entries must lie in [0, 1]")
    e = eps.reshape((-1,) + (1,) * (x_real.ndim - 1))
    return e * x_real + (1.0 - e) * x_fake


def _mean_scores(scores: NodeRef) -> NodeRef:
    return T.mean_all(scores)


def _grad_norms_at(t: Tape, model, nodes, xhat: np.ndarray) -> NodeRef:
    """Per-example L2 norm of the critic's input gradient at xhat.

    Scores never couple examples, so the gradient of the batch-summed score
    separates into the per-example input gradients.
    """
    xhat_node = t.const(xhat)
    scores = model.forward(nodes, xhat_node)
    total = T.sum_all(scores)
    (gx,) = grad(t, total, [xhat_node])
    m = xhat.shape[0]
    flat = T.reshape(gx, (m, int(np.prod(xhat.shape[1:]))))
    return T.row_norm(flat, eps=NORM_EPS)


def gradient_penalty(
    t: Tape, model, nodes, xhat: np.ndarray, lam: float, one_sided: bool = False
) -> tuple[NodeRef, float, float]:
    """Penalty node plus (mean norm, mean squared distance from 1) floats."""
    norms = _grad_norms_at(t, model, nodes, xhat)
    excess = T.add_scalar(norms, -1.0)
    if one_sided:
        excess = T.maxc(excess, 0.0)
    pen = T.mul_scalar(T.mean_all(T.mul(excess, excess)), lam)
    vals = np.asarray(norms.value)
    return pen, float(vals.mean()), float(((vals - 1.0) ** 2).mean())


def _clamped_log_prob(scores: NodeRef, of_real: bool) -> NodeRef:
    p = T.sigmoid(scores)
    if not of_real:
        p = T.add_scalar(T.mul_scalar(p, -1.0), 1.0)
    return T.log(T.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


@dataclass(frozen=True)
class CriticStepInfo:
    loss: float
    mean_real: float
    mean_fake: float
    gp_mean_norm: float
    gp_msd: float

    @property
    def w_estimate(self) -> float:
        return self.mean_real - self.mean_fake


def critic_loss(
    t: Tape,
    regime: CriticRegime,
    model,
    nodes,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    xhat: np.ndarray | None = None,
    want_norm_stats: bool = False,
) -> tuple[NodeRef, CriticStepInfo]:
    """Build the critic's minimization objective for one batch triple.

    Penalty regimes require ``xhat``; the other regimes compute interpolate
    gradient-norm statistics only when asked, since they are diagnostic there.
    """
    s_real = model.forward(nodes, t.const(x_real))
    s_fake = model.forward(nodes, t.const(x_fake))
    mean_real = _mean_scores(s_real)
    mean_fake = _mean_scores(s_fake)

    gp_mean = float("nan")
    gp_msd = float("nan")
    if regime.kind in ("gp", "gp1"):
        if xhat is None:
            raise ValueError("penalty regimes need interpolated samples")
        loss = T.sub(mean_fake, mean_real)
        pen, gp_mean, gp_msd = gradient_penalty(
            t, model, nodes, xhat, regime.penalty_lambda, one_sided=(regime.kind == "gp1")
        )
        loss = T.add(loss, pen)
    elif regime.kind == "clip":
        loss = T.sub(mean_fake, mean_real)
    else:  # standard cross-entropy discriminator
        real_term = T.mean_all(_clamped_log_prob(s_real, of_real=True))
        fake_term = T.mean_all(_clamped_log_prob(s_fake, of_real=False))
        loss = T.mul_scalar(T.add(real_term, fake_term), -1.0)

    if want_norm_stats and regime.kind not in ("gp", "gp1"):
        if xhat is None:
            raise ValueError("norm statistics need interpolated samples")
        vals = np.asarray(_grad_norms_at(t, model, nodes, xhat).value)
        gp_mean = float(vals.mean())
        gp_msd = float(((vals - 1.0) ** 2).mean())

    info = CriticStepInfo(
        loss=float(loss.value),
        mean_real=float(mean_real.value),
        mean_fake=float(mean_fake.value),
        gp_mean_norm=gp_mean,
        gp_msd=gp_msd,
    )
    return loss, info


def generator_loss(t: Tape, regime: CriticRegime, critic_model, critic_nodes, fake: NodeRef) -> NodeRef:
    """Wasserstein regimes push scores up; the cross-entropy regime uses the
    non-saturating form, maximizing log of the fake's real-probability."""
    scores = critic_model.forward(critic_nodes, fake)
    if regime.kind == "gan":
        return T.mul_scalar(T.mean_all(_clamped_log_prob(scores, of_real=True)), -1.0)
    return T.mul_scalar(T.mean_all(scores), -1.0)


def scores_of(model, params: ParamSet, batch: np.ndarray) -> np.ndarray:
    """Forward pass outside training: parameters as constants."""
    t = Tape()
    nodes = params.to_consts(t)
    return np.asarray(model.forward(nodes, t.const(batch)).value)


def estimate_wasserstein(
    model, params: ParamSet, real_sampler, fake_source, n: int, batch: int = 8192
) -> float:
    """mean D(real) - mean D(fake) over n fresh draws from each side."""
    if n < 1:
        raise ValueError("need at least one sample")
    total_real = 0.0
    total_fake = 0.0
    done = 0
    while done < n:
        k = min(batch, n - done)
        total_real += scores_of(model, params, real_sampler.sample(k)).sum()
        total_fake += scores_of(model, params, _draw_fake(fake_source, k)).sum()
        done += k
    return (total_real - total_fake) / n


@dataclass
class FixedNoisySampler:
    """The base distribution plus Gaussian jitter, as a frozen fake source."""

    base: object
    sigma: float
    seed: int

    def __post_init__(self):
        self._noise = np.random.default_rng(self.seed)

    def sample(self, n: int) -> np.ndarray:
        x = np.asarray(self.base.sample(n))
        return x + self.sigma * self._noise.standard_normal(x.shape)


def fixed_noisy_generator(base_sampler, sigma: float, seed: int = 0) -> FixedFake:
    if sigma < 0:
        raise ValueError("noise scale must be non-negative")
    return FixedFake(FixedNoisySampler(base=base_sampler, sigma=sigma, seed=seed))


@dataclass
class TrainState:
    """What metric sinks get to see after each generator iteration."""

    iteration: int
    config: TrainConfig
    critic_model: object
    critic_params: ParamSet
    fake: object
    row: MetricsRow


@dataclass
class TrainResult:
    critic_params: ParamSet
    gen_params: ParamSet | None
    rows: list[MetricsRow]


def train(
    config: TrainConfig,
    real_sampler,
    fake,
    critic_model,
    critic_params: ParamSet,
    sinks: tuple = (),
) -> TrainResult:
    """Alternating updates: n_critic critic steps, then one generator step.

    ``fake`` is either a :class:`LearnedGenerator` (trained) or a
    :class:`FixedFake` (the generator iteration only reads metrics).  The
    passed ParamSets are updated in place and returned.  A non-finite loss,
    gradient, or sample aborts with :class:`TrainDiverged` carrying the
    parameters from the last completed iteration.

    With ``metric_eval_n`` set, the recorded Wasserstein estimate is scored
    on probe sets drawn once at startup, so the metric series reflects
    parameter movement rather than minibatch sampling noise.
    """
    regime = config.regime
    m = config.batch_size
    rng = np.random.default_rng(config.seed)
    learned = isinstance(fake, LearnedGenerator)

    critic_opt = make_optimizer(config.opt, config.alpha, config.beta1, config.beta2, config.rms_decay)
    gen_opt = (
        make_optimizer(config.opt, config.gen_alpha, config.beta1, config.beta2, config.rms_decay)
        if learned
        else None
    )

    names = critic_params.names()
    last_good_critic = critic_params.copy()
    last_good_gen = fake.params.copy() if learned else None

    eval_real = eval_latents = eval_fake = None
    if config.metric_eval_n > 0:
        eval_real = np.asarray(real_sampler.sample(config.metric_eval_n))
        if learned:
            eval_latents = np.asarray(fake.latent.sample(config.metric_eval_n))
        else:
            eval_fake = _draw_fake(fake, config.metric_eval_n)

    rows: list[MetricsRow] = []
    start = time.perf_counter()

    for it in range(1, config.iters + 1):
        try:
            info = None
            for k in range(config.n_critic):
                x_real = real_sampler.sample(m)
                x_fake = _draw_fake(fake, m)
                eps = rng.uniform(0.0, 1.0, size=m)
                xhat = interpolate_samples(x_real, x_fake, eps)
                last = k == config.n_critic - 1

                t = Tape()
                nodes = critic_params.to_leaves(t)
                loss, info = critic_loss(
                    t, regime, critic_model, nodes, x_real, x_fake,
                    xhat=xhat, want_norm_stats=last,
                )
                grad_nodes = grad(t, loss, [nodes[n] for n in names])
                grads = {n: np.asarray(g.value) for n, g in zip(names, grad_nodes)}
                critic_opt.step(critic_params, grads)
                if regime.kind == "clip":
                    clip_weights(critic_params, regime.clip_c)

            if learned:
                z = fake.latent.sample(m)
                t = Tape()
                gen_nodes = fake.params.to_leaves(t)
                critic_nodes = critic_params.to_consts(t)
                fake_node = fake.model.forward(gen_nodes, t.const(z))
                gloss = generator_loss(t, regime, critic_model, critic_nodes, fake_node)
                gen_names = fake.params.names()
                grad_nodes = grad(t, gloss, [gen_nodes[n] for n in gen_names])
                grads = {n: np.asarray(g.value) for n, g in zip(gen_names, grad_nodes)}
                gen_opt.step(fake.params, grads)
                gen_loss_val = float(gloss.value)
            else:
                gen_loss_val = -info.mean_fake
            w_est = info.w_estimate
            if config.metric_eval_n > 0:
                if learned:
                    te = Tape()
                    gnodes = fake.params.to_consts(te)
                    eval_fake = np.asarray(
                        fake.model.forward(gnodes, te.const(eval_latents)).value
                    )
                w_est = float(
                    scores_of(critic_model, critic_params, eval_real).mean()
                    - scores_of(critic_model, critic_params, eval_fake).mean()
                )
        except NonFiniteError as exc:
            raise TrainDiverged(it, last_good_critic, last_good_gen, exc) from exc

        seconds = (time.perf_counter() - start) if config.timing else 0.0
        row = MetricsRow(
            iteration=it,
            critic_loss=info.loss,
            gen_loss=gen_loss_val,
            w_estimate=w_est,
            gp_mean_norm=info.gp_mean_norm,
            gp_msd=info.gp_msd,
            seconds=seconds,
        )
        rows.append(row)
        if sinks:
            state = TrainState(
                iteration=it,
                config=config,
                critic_model=critic_model,
                critic_params=critic_params,
                fake=fake,
                row=row,
            )
            for sink in sinks:
                sink(state)

        last_good_critic = critic_params.copy()
        if learned:
            last_good_gen = fake.params.copy()

    return TrainResult(
        critic_params=critic_params,
        gen_params=fake.params if learned else None,
        rows=rows,
    )
