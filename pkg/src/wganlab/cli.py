"""Command-line entry point: reproducible experiments with CSV/SVG artifacts.

Each subcommand resolves a flat key=value config (file, then flag overrides,
then regime-dependent defaults), stamps the resolved form into the first
comment line of every file it writes, and runs one experiment per process.
The ``run_*`` functions are importable so the test suite drives the exact
code paths the command line does.

Exit codes: 0 success, 1 config error (message names the offending key),
2 numeric failure (message carries the iteration where training lost
finiteness, or the failing gradient check).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    GrammarSpec,
    LatentSampler,
    SplitSpec,
    load_corpus,
    make_toy,
    synth_corpus,
    _TOYS,
)
from .diagnostics import (
    TrainValTracker,
    critic_loss_layer_norms,
    format_gradnorm_csv,
    format_histogram_csv,
    format_surface_csv,
    penalty_norm_stats,
    svg_heatmap,
    svg_line_chart,
    value_surface,
    weight_histogram,
)
from .fdcheck import run_grad_checks
from .gan import (
    CriticRegime,
    FixedFake,
    LearnedGenerator,
    TrainConfig,
    TrainDiverged,
    estimate_wasserstein,
    fixed_noisy_generator,
    format_metrics_csv,
    interpolate_samples,
    train,
)
from .langmodel import (
    CorpusSampler,
    LmCritic,
    LmCriticSpec,
    LmGenerator,
    LmGeneratorSpec,
    decode_argmax,
    mean_max_prob,
    ngram_divergence,
)
from .nn import RELU, TANH, Activation, Mlp, MlpSpec, ParamSet, leaky
from .tape import NonFiniteError

__all__ = [
    "ConfigError",
    "main",
    "resolve_config",
    "run_train",
    "run_surface",
    "run_pathology",
    "run_wdist",
    "run_overfit",
    "run_lm_train",
    "run_lm_sample",
    "PathologyRun",
    "WdistResult",
    "OverfitResult",
    "LmResult",
]


class ConfigError(Exception):
    """Bad config file, unknown key, or unusable value."""


# ---------------------------------------------------------------------------
# Config keys: casters, per-command key order, defaults.


def _as_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _as_opt_float(raw: str):
    return None if raw.lower() in ("none", "") else float(raw)


def _as_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(p) for p in raw.split(",") if p.strip())


def _as_float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(p) for p in raw.split(",") if p.strip())


def _choice(*options: str):
    def cast(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {options}, got {raw!r}")
        return raw

    return cast


_CASTERS = {
    "seed": int,
    "out": str,
    "data": _choice(*sorted(_TOYS)),
    "regime": _choice("gp", "gp1", "clip", "gan"),
    "clip": float,
    "lambda": float,
    "iters": int,
    "ncritic": int,
    "batch": int,
    "opt": _choice("adam", "rmsprop"),
    "alpha": float,
    "alpha_gen": _as_opt_float,
    "beta1": float,
    "beta2": float,
    "rms_decay": float,
    "timing": _as_bool,
    "metric_eval": int,
    "latent": int,
    "latent_kind": _choice("uniform", "gauss"),
    "gen_widths": _as_int_tuple,
    "critic_widths": _as_int_tuple,
    "layer_norm": _as_bool,
    "params": str,
    "xmin": float,
    "xmax": float,
    "ymin": float,
    "ymax": float,
    "nx": int,
    "ny": int,
    "act": _choice("relu", "leaky", "tanh"),
    "clips": _as_float_tuple,
    "steps": int,
    "depth": int,
    "width": int,
    "noise": float,
    "cadence": int,
    "mu_real": float,
    "sigma_real": float,
    "mu_fake": float,
    "sigma_fake": float,
    "widths": _as_int_tuple,
    "eval_n": int,
    "norm_n": int,
    "subset": int,
    "val": int,
    "corpus": str,
    "count": int,
    "stop": float,
    "channels": int,
    "kernel": int,
    "samples": int,
    "n": int,
}

_TRAIN_KEYS = (
    "regime", "clip", "lambda", "iters", "ncritic", "batch",
    "opt", "alpha", "alpha_gen", "beta1", "beta2", "rms_decay",
)
_TRAIN_DEFAULTS = {
    "regime": "gp", "clip": 0.01, "lambda": 10.0, "ncritic": 5, "batch": 64,
    "opt": None, "alpha": None, "alpha_gen": None,
    "beta1": 0.0, "beta2": 0.9, "rms_decay": 0.9,
}

_COMMANDS: dict[str, tuple[tuple[str, ...], dict]] = {
    "check-grad": (("seed",), {"seed": 0}),
    "train": (
        ("data", *_TRAIN_KEYS, "latent", "latent_kind", "gen_widths",
         "critic_widths", "layer_norm", "metric_eval", "timing", "seed", "out"),
        {**_TRAIN_DEFAULTS, "data": "eight_gaussians", "iters": 1000,
         "latent": 2, "latent_kind": "uniform", "gen_widths": (64, 64, 64),
         "critic_widths": (64, 64, 64), "layer_norm": False, "metric_eval": 0,
         "timing": True, "seed": 0, "out": "runs/train"},
    ),
    "surface": (
        ("params", "xmin", "xmax", "ymin", "ymax", "nx", "ny", "act",
         "seed", "out"),
        {"params": None, "xmin": -2.5, "xmax": 2.5, "ymin": -2.5, "ymax": 2.5,
         "nx": 101, "ny": 101, "act": "relu", "seed": 0, "out": "runs/surface"},
    ),
    "gradnorms": (
        ("data", "clips", "steps", "depth", "width", "batch", "noise",
         "lambda", "cadence", "timing", "seed", "out"),
        {"data": "swiss_roll", "clips": (0.1, 0.01, 0.001), "steps": 2000,
         "depth": 12, "width": 64, "batch": 64, "noise": 1.0, "lambda": 10.0,
         "cadence": 0, "timing": True, "seed": 0, "out": "runs/gradnorms"},
    ),
    "wdist": (
        ("regime", "lambda", "steps", "batch", "opt", "alpha", "beta1",
         "beta2", "rms_decay", "mu_real", "sigma_real", "mu_fake",
         "sigma_fake", "widths", "eval_n", "norm_n", "timing", "seed", "out"),
        {"regime": "gp", "lambda": 10.0, "steps": 10000, "batch": 64,
         "opt": None, "alpha": None, "beta1": 0.0, "beta2": 0.9,
         "rms_decay": 0.9, "mu_real": 3.0, "sigma_real": 1.0, "mu_fake": 0.0,
         "sigma_fake": 1.0, "widths": (64, 64, 64), "eval_n": 100000,
         "norm_n": 10000, "timing": True, "seed": 0, "out": "runs/wdist"},
    ),
    "overfit": (
        ("data", *_TRAIN_KEYS, "latent", "latent_kind", "gen_widths",
         "critic_widths", "subset", "val", "cadence", "timing", "seed", "out"),
        {**_TRAIN_DEFAULTS, "data": "eight_gaussians", "iters": 3000,
         "latent": 2, "latent_kind": "uniform", "gen_widths": (64, 64, 64),
         "critic_widths": (64, 64, 64), "subset": 64, "val": 256,
         "cadence": 10, "timing": True, "seed": 0, "out": "runs/overfit"},
    ),
    "lm-train": (
        ("corpus", "count", "stop", "channels", "kernel", "latent",
         *_TRAIN_KEYS, "samples", "timing", "seed", "out"),
        {**_TRAIN_DEFAULTS, "corpus": "synth", "count": 2000, "stop": 0.15,
         "channels": 16, "kernel": 3, "latent": 128, "iters": 1200,
         "batch": 32, "alpha": 0.0002, "beta2": 0.99, "samples": 1000,
         "timing": True, "seed": 0, "out": "runs/lm"},
    ),
    "lm-sample": (
        ("params", "n", "seed", "out"),
        {"params": None, "n": 16, "seed": 0, "out": ""},
    ),
}

_REQUIRED = {"surface": ("params",), "lm-sample": ("params",)}


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def resolve_config(command: str, overrides: dict | None = None,
                   file_pairs: dict[str, str] | None = None) -> dict:
    """Defaults, then config-file pairs, then typed overrides, in key order.

    Regime-sensitive holes are filled last: clipping pairs with rmsprop at
    5e-5 and everything else with adam at 1e-4 unless explicitly set.
    """
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    keys, defaults = _COMMANDS[command]
    cfg = dict(defaults)
    for key, raw in (file_pairs or {}).items():
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        try:
            cfg[key] = _CASTERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for key {key!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        cfg[key] = value
    if "opt" in keys and cfg.get("opt") is None:
        cfg["opt"] = "rmsprop" if cfg.get("regime") == "clip" else "adam"
    if "alpha" in keys and cfg.get("alpha") is None:
        cfg["alpha"] = 5e-05 if cfg["opt"] == "rmsprop" else 0.0001
    for key in _REQUIRED.get(command, ()):
        if cfg.get(key) is None:
            raise ConfigError(f"missing required key {key!r} for {command}")
    return {k: cfg[k] for k in keys}


def resolved_line(command: str, cfg: dict) -> str:
    return " ".join([f"cmd={command}"] + [f"{k}={_fmt_value(v)}" for k, v in cfg.items()])


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_resolved(out: Path, command: str, cfg: dict) -> None:
    lines = [f"# {resolved_line(command, cfg)}"]
    lines += [f"{k}={_fmt_value(v)}" for k, v in cfg.items()]
    _write(out / "resolved.cfg", "\n".join(lines) + "\n")


def _train_config(cfg: dict) -> TrainConfig:
    regime = CriticRegime(
        kind=cfg["regime"], clip_c=cfg["clip"], penalty_lambda=cfg["lambda"]
    )
    return TrainConfig(
        iters=cfg["iters"], n_critic=cfg["ncritic"], batch_size=cfg["batch"],
        regime=regime, opt=cfg["opt"], alpha=cfg["alpha"],
        alpha_gen=cfg["alpha_gen"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        rms_decay=cfg["rms_decay"], seed=cfg["seed"], timing=cfg["timing"],
        metric_eval_n=cfg.get("metric_eval", 0),
    )


# ---------------------------------------------------------------------------
# Experiment runners (also the substance behind the acceptance tests).


def run_train(cfg: dict, sinks: tuple = ()):
    """Adversarial training on a toy distribution; writes metrics + params."""
    seed = cfg["seed"]
    toy = make_toy(cfg["data"], seed=seed + 1)
    dim = toy.dim
    gen_model = Mlp(MlpSpec((cfg["latent"], *cfg["gen_widths"], dim)))
    gen_params = gen_model.init_params(seed + 2)
    critic_model = Mlp(MlpSpec((dim, *cfg["critic_widths"], 1), layer_norm=cfg["layer_norm"]))
    critic_params = critic_model.init_params(seed + 3)
    fake = LearnedGenerator(
        gen_model, gen_params, LatentSampler(cfg["latent"], kind=cfg["latent_kind"], seed=seed + 4)
    )
    result = train(_train_config(cfg), toy, fake, critic_model, critic_params, sinks=sinks)

    out = Path(cfg["out"])
    comment = resolved_line("train", cfg)
    _write(out / "metrics.csv", format_metrics_csv(result.rows, comment))
    out.mkdir(parents=True, exist_ok=True)
    critic_params.save(out / "critic.npz")
    gen_params.save(out / "generator.npz")
    _write_resolved(out, "train", cfg)
    if result.rows:
        its = np.array([r.iteration for r in result.rows], dtype=float)
        west = np.array([r.w_estimate for r in result.rows])
        svg_line_chart({"w_estimate": (its, west)}, out / "metrics.svg")
    return result


_ACTS = {"relu": RELU, "leaky": leaky(0.2), "tanh": TANH}


def mlp_spec_from_params(params: ParamSet, activation: Activation = RELU) -> MlpSpec:
    """Recover the layer widths (and layer-norm flag) from saved arrays."""
    widths = []
    i = 0
    while f"w{i}" in params:
        if i == 0:
            widths.append(params["w0"].shape[1])
        widths.append(params[f"w{i}"].shape[0])
        i += 1
    if not widths:
        raise ConfigError("parameter file holds no linear layers (w0 missing)")
    return MlpSpec(tuple(widths), activation=activation, layer_norm="ln0_g" in params)


def run_surface(cfg: dict) -> np.ndarray:
    """Critic value surface on a grid, from saved parameters."""
    if cfg["xmin"] >= cfg["xmax"] or cfg["ymin"] >= cfg["ymax"]:
        raise ConfigError("bad value for key 'xmin'/'ymin': empty grid range")
    if cfg["nx"] < 2 or cfg["ny"] < 2:
        raise ConfigError("bad value for key 'nx'/'ny': need at least 2 points")
    try:
        params = ParamSet.load(cfg["params"])
    except OSError as exc:
        raise ConfigError(f"bad value for key 'params': {exc}") from exc
    spec = mlp_spec_from_params(params, _ACTS[cfg["act"]])
    if spec.widths[0] != 2:
        raise ConfigError("bad value for key 'params': critic input is not 2-d")
    model = Mlp(spec)
    xs = np.linspace(cfg["xmin"], cfg["xmax"], cfg["nx"])
    ys = np.linspace(cfg["ymin"], cfg["ymax"], cfg["ny"])
    rows = value_surface(model, params, xs, ys)

    out = Path(cfg["out"])
    comment = resolved_line("surface", cfg)
    _write(out / "surface.csv", format_surface_csv(rows, comment))
    svg_heatmap(xs, ys, rows[:, 2].reshape(cfg["nx"], cfg["ny"]), out / "surface.svg")
    _write_resolved(out, "surface", cfg)
    return rows


@dataclass
class PathologyRun:
    """One critic trained to measure signal propagation through depth."""

    tag: str
    regime: CriticRegime
    params: ParamSet
    layer_norms: list[float]
    norm_records: list[tuple[int, int, float]]
    histogram: tuple[np.ndarray, np.ndarray, np.ndarray]


def run_pathology(cfg: dict, write: bool = True) -> list[PathologyRun]:
    """Deep-critic comparison: weight clipping at several thresholds vs the
    penalty, trained against the data-plus-noise fake, then probed for
    per-layer gradient norms and weight concentration."""
    seed = cfg["seed"]
    real = make_toy(cfg["data"], seed=seed + 1)
    eval_real = make_toy(cfg["data"], seed=seed + 7).sample(256)
    eval_fake = fixed_noisy_generator(
        make_toy(cfg["data"], seed=seed + 8), sigma=cfg["noise"], seed=seed + 9
    ).sampler.sample(256)

    runs: list[PathologyRun] = []
    specs = [("gp", CriticRegime("gp", penalty_lambda=cfg["lambda"]))]
    specs += [(f"clip{c:g}", CriticRegime("clip", clip_c=c)) for c in cfg["clips"]]
    widths = (real.dim, *([cfg["width"]] * cfg["depth"]), 1)

    for tag, regime in specs:
        model = Mlp(MlpSpec(widths))
        params = model.init_params(seed + 5)
        fake = fixed_noisy_generator(
            make_toy(cfg["data"], seed=seed + 2), sigma=cfg["noise"], seed=seed + 3
        )
        opt = "rmsprop" if regime.kind == "clip" else "adam"
        config = TrainConfig(
            iters=cfg["steps"], n_critic=1, batch_size=cfg["batch"], regime=regime,
            opt=opt, alpha=5e-05 if opt == "rmsprop" else 0.0001,
            seed=seed, timing=cfg["timing"],
        )
        records: list[tuple[int, int, float]] = []
        cadence = cfg["cadence"]

        def sink(state, _records=records):
            if cadence and state.iteration % cadence == 0:
                norms = critic_loss_layer_norms(
                    state.critic_model, state.critic_params, eval_real, eval_fake
                )
                _records.extend((state.iteration, i, v) for i, v in enumerate(norms))

        train(config, real, fake, model, params, sinks=(sink,) if cadence else ())
        layer_norms = critic_loss_layer_norms(model, params, eval_real, eval_fake)
        if not records or records[-1][0] != cfg["steps"]:
            records.extend((cfg["steps"], i, v) for i, v in enumerate(layer_norms))
        if regime.kind == "clip":
            hist = weight_histogram(params, bins=100, lo=-regime.clip_c, hi=regime.clip_c)
        else:
            hist = weight_histogram(params, bins=100)
        runs.append(PathologyRun(tag, regime, params, layer_norms, records, hist))

    if write:
        out = Path(cfg["out"])
        comment = resolved_line("gradnorms", cfg)
        series = {}
        for run in runs:
            _write(out / f"gradnorms_{run.tag}.csv", format_gradnorm_csv(run.norm_records, comment))
            lo, hi, counts = run.histogram
            _write(out / f"hist_{run.tag}.csv", format_histogram_csv(lo, hi, counts, comment))
            idx = np.arange(len(run.layer_norms), dtype=float)
            series[run.tag] = (idx, np.array(run.layer_norms))
        svg_line_chart(series, out / "gradnorms.svg", log_y=True)
        _write_resolved(out, "gradnorms", cfg)
    return runs


@dataclass
class WdistResult:
    estimate: float
    mean_norm: float
    msd: float
    params: ParamSet
    rows: list


def run_wdist(cfg: dict, write: bool = True) -> WdistResult:
    """Critic-only training between two fixed 1-d Gaussians, then a
    large-sample estimate of the distance and of the interpolate gradient
    norms."""
    if cfg["regime"] not in ("gp", "gp1"):
        raise ConfigError("bad value for key 'regime': wdist needs gp or gp1")
    seed = cfg["seed"]
    real = make_toy("gaussian_1d", seed=seed + 1, mu=cfg["mu_real"], sigma=cfg["sigma_real"])
    fake = FixedFake(make_toy("gaussian_1d", seed=seed + 2, mu=cfg["mu_fake"], sigma=cfg["sigma_fake"]))
    model = Mlp(MlpSpec((1, *cfg["widths"], 1)))
    params = model.init_params(seed + 3)
    regime = CriticRegime(cfg["regime"], penalty_lambda=cfg["lambda"])
    config = TrainConfig(
        iters=cfg["steps"], n_critic=1, batch_size=cfg["batch"], regime=regime,
        opt=cfg["opt"], alpha=cfg["alpha"], beta1=cfg["beta1"], beta2=cfg["beta2"],
        rms_decay=cfg["rms_decay"], seed=seed, timing=cfg["timing"],
    )
    result = train(config, real, fake, model, params)

    eval_real = make_toy("gaussian_1d", seed=seed + 10, mu=cfg["mu_real"], sigma=cfg["sigma_real"])
    eval_fake = make_toy("gaussian_1d", seed=seed + 11, mu=cfg["mu_fake"], sigma=cfg["sigma_fake"])
    estimate = estimate_wasserstein(model, params, eval_real, FixedFake(eval_fake), cfg["eval_n"])
    xr = eval_real.sample(cfg["norm_n"])
    xf = eval_fake.sample(cfg["norm_n"])
    eps = np.random.default_rng(seed + 13).uniform(0.0, 1.0, size=cfg["norm_n"])
    mean_norm, msd = penalty_norm_stats(model, params, interpolate_samples(xr, xf, eps))

    if write:
        out = Path(cfg["out"])
        comment = resolved_line("wdist", cfg)
        _write(out / "metrics.csv", format_metrics_csv(result.rows, comment))
        out.mkdir(parents=True, exist_ok=True)
        params.save(out / "critic.npz")
        _write_resolved(out, "wdist", cfg)
    return WdistResult(estimate, mean_norm, msd, params, result.rows)


@dataclass
class OverfitResult:
    records: list[tuple[int, float, float]]
    rows: list
    critic_params: ParamSet
    gen_params: ParamSet


def run_overfit(cfg: dict, write: bool = True) -> OverfitResult:
    """Adversarial training where the critic sees only a small frozen subset;
    tracks the train/validation score gap that memorization opens."""
    seed = cfg["seed"]
    base = make_toy(cfg["data"], seed=seed + 1)
    train_sampler, val_sampler = SplitSpec(cfg["subset"], cfg["val"], seed=seed + 2).split(base)
    dim = base.dim
    gen_model = Mlp(MlpSpec((cfg["latent"], *cfg["gen_widths"], dim)))
    gen_params = gen_model.init_params(seed + 3)
    critic_model = Mlp(MlpSpec((dim, *cfg["critic_widths"], 1)))
    critic_params = critic_model.init_params(seed + 4)
    fake = LearnedGenerator(
        gen_model, gen_params, LatentSampler(cfg["latent"], kind=cfg["latent_kind"], seed=seed + 5)
    )
    probe = LearnedGenerator(
        gen_model, gen_params, LatentSampler(cfg["latent"], kind=cfg["latent_kind"], seed=seed + 6)
    )
    tracker = TrainValTracker(
        train_points=train_sampler.points, val_points=val_sampler.points,
        fake_fn=probe.sample_detached, cadence=cfg["cadence"],
    )
    result = train(_train_config(cfg), train_sampler, fake, critic_model, critic_params,
                   sinks=(tracker,))

    if write:
        out = Path(cfg["out"])
        comment = resolved_line("overfit", cfg)
        _write(out / "trainval.csv", tracker.format_csv(comment))
        _write(out / "metrics.csv", format_metrics_csv(result.rows, comment))
        if tracker.records:
            its = np.array([r[0] for r in tracker.records], dtype=float)
            tr = np.array([r[1] for r in tracker.records])
            va = np.array([r[2] for r in tracker.records])
            svg_line_chart({"train": (its, tr), "validation": (its, va)}, out / "trainval.svg")
        _write_resolved(out, "overfit", cfg)
    return OverfitResult(tracker.records, result.rows, critic_params, gen_params)


@dataclass
class LmResult:
    js1_init: float
    js2_init: float
    maxp_init: float
    js1: float
    js2: float
    maxp: float
    samples: list[str]
    rows: list
    gen_params: ParamSet
    critic_params: ParamSet
    vocab: tuple[str, ...]


def _lm_corpus(cfg: dict):
    if cfg["corpus"] == "synth":
        grammar = GrammarSpec(stop=cfg["stop"])
        return synth_corpus(grammar, count=cfg["count"], seed=cfg["seed"] + 1)
    try:
        return load_corpus(cfg["corpus"])
    except OSError as exc:
        raise ConfigError(f"bad value for key 'corpus': {exc}") from exc


def run_lm_train(cfg: dict, write: bool = True) -> LmResult:
    """Character-level sequence GAN over simplex rows; measures n-gram
    divergence and argmax confidence before and after training."""
    seed = cfg["seed"]
    corpus = _lm_corpus(cfg)
    vocab_size = len(corpus.vocab)
    gen_model = LmGenerator(LmGeneratorSpec(
        vocab_size=vocab_size, latent=cfg["latent"], channels=cfg["channels"], kernel=cfg["kernel"],
    ))
    gen_params = gen_model.init_params(seed + 2)
    critic_model = LmCritic(LmCriticSpec(
        vocab_size=vocab_size, channels=cfg["channels"], kernel=cfg["kernel"],
    ))
    critic_params = critic_model.init_params(seed + 3)
    fake = LearnedGenerator(gen_model, gen_params, LatentSampler(cfg["latent"], seed=seed + 4))
    sampler = CorpusSampler(corpus, seed=seed + 5)

    def evaluate():
        probe = LearnedGenerator(gen_model, gen_params, LatentSampler(cfg["latent"], seed=seed + 100))
        probs = probe.sample_detached(cfg["samples"])
        decoded = decode_argmax(probs, corpus.vocab)
        return (
            ngram_divergence(decoded, corpus, 1),
            ngram_divergence(decoded, corpus, 2),
            mean_max_prob(probs),
            decoded,
        )

    js1_init, js2_init, maxp_init, _ = evaluate()
    result = train(_train_config(cfg), sampler, fake, critic_model, critic_params)
    js1, js2, maxp, decoded = evaluate()

    if write:
        out = Path(cfg["out"])
        comment = resolved_line("lm-train", cfg)
        _write(out / "metrics.csv", format_metrics_csv(result.rows, comment))
        out.mkdir(parents=True, exist_ok=True)
        gen_params.save(out / "generator.npz", meta={"vocab": "".join(corpus.vocab)})
        critic_params.save(out / "critic.npz")
        _write(out / "samples.txt", f"# {comment}\n" + "\n".join(decoded) + "\n")
        _write_resolved(out, "lm-train", cfg)
    return LmResult(js1_init, js2_init, maxp_init, js1, js2, maxp,
                    decoded, result.rows, gen_params, critic_params, corpus.vocab)


def lm_generator_from_params(path) -> tuple[LmGenerator, ParamSet, tuple[str, ...]]:
    """Rebuild the generator spec from saved array shapes plus vocab metadata."""
    try:
        params = ParamSet.load(path)
        meta = ParamSet.load_meta(path)
    except OSError as exc:
        raise ConfigError(f"bad value for key 'params': {exc}") from exc
    if "vocab" not in meta:
        raise ConfigError("bad value for key 'params': file lacks vocab metadata")
    vocab = tuple(meta["vocab"])
    if "k_out" not in params or "w_in" not in params or "k1" not in params:
        raise ConfigError("bad value for key 'params': not a sequence generator file")
    vocab_size, channels, kernel = params["k_out"].shape
    latent = params["w_in"].shape[1]
    base_len = params["w_in"].shape[0] // channels
    if vocab_size != len(vocab):
        raise ConfigError("bad value for key 'params': vocab metadata does not match shapes")
    spec = LmGeneratorSpec(vocab_size=vocab_size, latent=latent, channels=channels,
                           kernel=kernel, seq_len=base_len * 4)
    return LmGenerator(spec), params, vocab


def run_lm_sample(cfg: dict) -> list[str]:
    """Decode fresh draws from a saved generator."""
    if cfg["n"] < 1:
        raise ConfigError("bad value for key 'n': need at least one sample")
    model, params, vocab = lm_generator_from_params(cfg["params"])
    probe = LearnedGenerator(model, params, LatentSampler(model.spec.latent, seed=cfg["seed"]))
    decoded = decode_argmax(probe.sample_detached(cfg["n"]), vocab)
    if cfg["out"]:
        comment = resolved_line("lm-sample", cfg)
        _write(Path(cfg["out"]), f"# {comment}\n" + "\n".join(decoded) + "\n")
    return decoded


# ---------------------------------------------------------------------------
# Argument parsing and dispatch.


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="wganlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    flags: dict[str, list[tuple]] = {}

    def add(name: str, *flagspecs):
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for args, kwargs, key in flagspecs:
            p.add_argument(*args, default=argparse.SUPPRESS, **kwargs)
            flags.setdefault(name, []).append((kwargs.get("dest", args[0].lstrip("-")), key))
        return p

    seed = (("--seed",), {"type": int}, "seed")
    out = (("--out",), {}, "out")
    regime = (("--regime",), {"choices": ["gp", "gp1", "clip", "gan"]}, "regime")
    clip = (("--clip",), {"type": float}, "clip")
    lam = (("--lambda",), {"type": float, "dest": "lam"}, "lambda")
    ncritic = (("--ncritic",), {"type": int}, "ncritic")
    iters = (("--iters",), {"type": int}, "iters")
    opt = (("--opt",), {"choices": ["adam", "rmsprop"]}, "opt")
    data = (("--data",), {"choices": sorted(_TOYS)}, "data")
    params = (("--params",), {}, "params")

    steps = (("--iters",), {"type": int, "dest": "iters"}, "steps")

    add("check-grad", seed)
    add("train", seed, out, regime, clip, lam, ncritic, iters, opt, data)
    add("surface", seed, out, params)
    add("gradnorms", seed, out, steps, data)
    add("wdist", seed, out, regime, lam, steps)
    add("overfit", seed, out, regime, clip, lam, ncritic, iters, opt, data)
    add("lm-train", seed, out, regime, clip, lam, ncritic, iters, opt)
    add("lm-sample", seed, out, params, (("--n",), {"type": int}, "n"))
    parser._flag_keys = flags  # consumed by main()
    return parser


def _dispatch(command: str, cfg: dict) -> int:
    if command == "check-grad":
        rows = run_grad_checks(cfg["seed"])
        failed = 0
        for name, order, err, tol in rows:
            ok = err < tol
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'} order={order} err={err:.3e} tol={tol:g} {name}")
        print(f"{len(rows) - failed}/{len(rows)} gradient checks passed (seed {cfg['seed']})")
        return 0 if failed == 0 else 2
    if command == "train":
        result = run_train(cfg)
        last = result.rows[-1] if result.rows else None
        if last:
            print(f"iter={last.iteration} critic_loss={last.critic_loss:.6g} "
                  f"w_estimate={last.w_estimate:.6g}")
        print(f"wrote {cfg['out']}/metrics.csv, critic.npz, generator.npz")
        return 0
    if command == "surface":
        rows = run_surface(cfg)
        print(f"wrote {cfg['out']}/surface.csv ({rows.shape[0]} points) and surface.svg")
        return 0
    if command == "gradnorms":
        runs = run_pathology(cfg)
        for run in runs:
            norms = np.array(run.layer_norms[:-1])  # probe hidden activations
            ratio = norms.max() / norms.min() if norms.min() > 0 else float("inf")
            slope = float(np.polyfit(np.arange(norms.size), np.log10(norms), 1)[0])
            print(f"{run.tag}: layer-norm ratio {ratio:.3g}, log10 slope {slope:+.3f}")
        print(f"wrote per-run gradnorms_*.csv and hist_*.csv under {cfg['out']}")
        return 0
    if command == "wdist":
        res = run_wdist(cfg)
        print(f"w_estimate={res.estimate:.6g}")
        print(f"interpolate_grad_norm mean={res.mean_norm:.4f} msd={res.msd:.5f}")
        return 0
    if command == "overfit":
        res = run_overfit(cfg)
        if res.records:
            it, tr, va = res.records[-1]
            print(f"iter={it} train_score={tr:.6g} val_score={va:.6g} gap={tr - va:.6g}")
        print(f"wrote {cfg['out']}/trainval.csv and metrics.csv")
        return 0
    if command == "lm-train":
        res = run_lm_train(cfg)
        print(f"init:  js1={res.js1_init:.4f} js2={res.js2_init:.4f} maxp={res.maxp_init:.4f}")
        print(f"final: js1={res.js1:.4f} js2={res.js2:.4f} maxp={res.maxp:.4f} "
              f"gain={res.maxp - res.maxp_init:+.4f}")
        print(f"wrote {cfg['out']}/metrics.csv, generator.npz, samples.txt")
        return 0
    if command == "lm-sample":
        for line in run_lm_sample(cfg):
            print(line)
        return 0
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("missing command (try --help)")
        file_pairs = parse_config_file(args.config) if args.config else None
        overrides = {}
        for attr, key in parser._flag_keys.get(args.command, []):
            if hasattr(args, attr):
                overrides[key] = getattr(args, attr)
        cfg = resolve_config(args.command, overrides, file_pairs)
        return _dispatch(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
