"""Desk-scale WGAN laboratory built on a replayable autodiff tape."""

from . import data, diagnostics, fdcheck, gan, langmodel, nn, optim, tape
from .data import GrammarSpec, LatentSampler, SplitSpec, make_toy, synth_corpus
from .fdcheck import check_gradient_fd, run_grad_checks
from .gan import (
    CriticRegime,
    LearnedGenerator,
    TrainConfig,
    TrainDiverged,
    critic_loss,
    estimate_wasserstein,
    generator_loss,
    gradient_penalty,
    interpolate_samples,
    train,
)
from .nn import Mlp, MlpSpec, ParamSet
from .optim import Adam, RMSProp, clip_weights, make_optimizer
from .tape import NodeRef, NonFiniteError, Tape, eval_forward, grad

__all__ = [
    "data",
    "diagnostics",
    "fdcheck",
    "gan",
    "langmodel",
    "nn",
    "optim",
    "tape",
    "GrammarSpec",
    "LatentSampler",
    "SplitSpec",
    "make_toy",
    "synth_corpus",
    "check_gradient_fd",
    "run_grad_checks",
    "CriticRegime",
    "LearnedGenerator",
    "TrainConfig",
    "TrainDiverged",
    "critic_loss",
    "generator_loss",
    "gradient_penalty",
    "interpolate_samples",
    "estimate_wasserstein",
    "train",
    "Mlp",
    "MlpSpec",
    "ParamSet",
    "Adam",
    "RMSProp",
    "clip_weights",
    "make_optimizer",
    "NodeRef",
    "NonFiniteError",
    "Tape",
    "eval_forward",
    "grad",
]
