"""Character-level sequence GAN with a continuous generator.

The generator emits a full sequence of per-position softmax rows in one
shot, so its output is a point on the product of simplices rather than a
discrete string; the critic consumes those rows directly (real data enters
as one-hot rows, which are just simplex corners).  Sampling a readable
string is a hard argmax per position, done outside the tape.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .tape import NodeRef, Tape
from .nn import ParamSet, conv1d_layer, he_uniform, linear, xavier_uniform
from .data import CharCorpus, SEQ_LEN, encode_onehot
from .gan import interpolate_samples

__all__ = [
    "LmGeneratorSpec",
    "LmGenerator",
    "LmCriticSpec",
    "LmCritic",
    "CorpusSampler",
    "upsample2_last",
    "decode_argmax",
    "lm_interpolate",
    "ngram_divergence",
    "mean_max_prob",
]


def upsample2_last(x: NodeRef) -> NodeRef:
    """Nearest-neighbor doubling along the last axis: each entry repeats twice."""
    lead = x.shape[:-1]
    n = int(np.prod(x.shape))
    col = T.reshape(x, (n, 1))
    return T.reshape(T.concat_last(col, col), lead + (2 * x.shape[-1],))


@dataclass(frozen=True)
class LmGeneratorSpec:
    """Latent vector to [seq_len, vocab] simplex rows.

    A linear map seeds seq_len/4 positions, two upsample+conv stages bring
    the resolution to seq_len, and a final conv maps channels onto the
    vocabulary before a per-position softmax.  Convolutions are valid with
    explicit zero padding, preserving length.
    """

    vocab_size: int
    latent: int = 128
    channels: int = 64
    kernel: int = 3
    seq_len: int = SEQ_LEN

    def __post_init__(self):
        if self.seq_len % 4 != 0:
            raise ValueError("sequence length must be divisible by 4")
        if self.kernel % 2 != 1:
            raise ValueError("kernel width must be odd to preserve length")
        if self.vocab_size < 2:
            raise ValueError("need at least two symbols")

    @property
    def base_len(self) -> int:
        return self.seq_len // 4


class LmGenerator:
    def __init__(self, spec: LmGeneratorSpec):
        self.spec = spec

    def init_params(self, seed: int) -> ParamSet:
        s = self.spec
        rng = np.random.default_rng(seed)
        ps = ParamSet()
        out0 = s.channels * s.base_len
        ps.add("w_in", he_uniform(rng, (out0, s.latent), s.latent))
        ps.add("b_in", np.zeros(out0))
        fan = s.channels * s.kernel
        for i in (1, 2):
            ps.add(f"k{i}", he_uniform(rng, (s.channels, s.channels, s.kernel), fan))
            ps.add(f"kb{i}", np.zeros(s.channels))
        ps.add("k_out", xavier_uniform(rng, (s.vocab_size, s.channels, s.kernel), fan, s.vocab_size * s.kernel))
        ps.add("kb_out", np.zeros(s.vocab_size))
        return ps

    def forward(self, nodes, z: NodeRef) -> NodeRef:
        """[m, latent] -> [m, seq_len, vocab], each position a simplex row."""
        s = self.spec
        pad = (s.kernel - 1) // 2
        m = z.shape[0]
        h = T.relu(linear(z, nodes["w_in"], nodes["b_in"]))
        h = T.reshape(h, (m, s.channels, s.base_len))
        for i in (1, 2):
            h = upsample2_last(h)
            h = T.relu(conv1d_layer(T.pad_last(h, pad, pad), nodes[f"k{i}"], nodes[f"kb{i}"]))
        h = conv1d_layer(T.pad_last(h, pad, pad), nodes["k_out"], nodes["kb_out"])
        return T.softmax_last(T.swap12(h))


@dataclass(frozen=True)
class LmCriticSpec:
    """Mirror of the generator: convolutions over the simplex rows, mean
    pooled over positions, then a linear head to one scalar score."""

    vocab_size: int
    channels: int = 64
    kernel: int = 3
    seq_len: int = SEQ_LEN


class LmCritic:
    def __init__(self, spec: LmCriticSpec):
        self.spec = spec

    def init_params(self, seed: int) -> ParamSet:
        s = self.spec
        rng = np.random.default_rng(seed)
        ps = ParamSet()
        ps.add("k1", he_uniform(rng, (s.channels, s.vocab_size, s.kernel), s.vocab_size * s.kernel))
        ps.add("kb1", np.zeros(s.channels))
        ps.add("k2", he_uniform(rng, (s.channels, s.channels, s.kernel), s.channels * s.kernel))
        ps.add("kb2", np.zeros(s.channels))
        ps.add("w_out", xavier_uniform(rng, (1, s.channels), s.channels, 1))
        ps.add("b_out", np.zeros(1))
        return ps

    def forward(self, nodes, x: NodeRef) -> NodeRef:
        """[m, seq_len, vocab] -> [m] scores; no nonlinearity on the head."""
        h = T.swap12(x)
        h = T.relu(conv1d_layer(h, nodes["k1"], nodes["kb1"]))
        h = T.relu(conv1d_layer(h, nodes["k2"], nodes["kb2"]))
        pooled = T.mul_scalar(T.sum_last(h), 1.0 / h.shape[-1])
        scores = linear(pooled, nodes["w_out"], nodes["b_out"])
        return T.reshape(scores, (x.shape[0],))


@dataclass
class CorpusSampler:
    """Minibatches of one-hot rows drawn from an encoded corpus."""

    corpus: CharCorpus
    seed: int
    _onehot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._onehot = encode_onehot(self.corpus)
        self._rng = np.random.default_rng(self.seed)

    def sample(self, n: int) -> np.ndarray:
        idx = self._rng.integers(0, self._onehot.shape[0], size=n)
        return self._onehot[idx].copy()


def decode_argmax(probs: np.ndarray, vocab: tuple[str, ...]) -> list[str]:
    """Hard per-position decode; ties go to the lowest index."""
    probs = np.asarray(probs)
    if probs.ndim == 2:
        probs = probs[None]
    idx = probs.argmax(axis=-1)
    return ["".join(vocab[i] for i in row) for row in idx]


def lm_interpolate(real_onehot: np.ndarray, fake_probs: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Convex mix of one-hot rows and softmax rows; stays on the simplex."""
    return interpolate_samples(real_onehot, fake_probs, eps)


def _ngram_counts(strings: list[str], pad_char: str, n: int) -> Counter:
    counts: Counter = Counter()
    for s in strings:
        cut = s.find(pad_char)
        if cut >= 0:
            s = s[:cut]
        for i in range(len(s) - n + 1):
            counts[s[i : i + n]] += 1
    return counts


def ngram_divergence(samples: list[str], corpus: CharCorpus, n: int) -> float:
    """Jensen-Shannon divergence between n-gram distributions, natural log.

    The pad character terminates a string: n-grams are counted on the prefix
    before the first pad.  Lies in [0, ln 2]; an empty distribution against a
    non-empty one is maximally divergent.
    """
    if n not in (1, 2):
        raise ValueError("only unigrams and bigrams are supported")
    if not samples:
        raise ValueError("no sample strings")
    if corpus.seqs.shape[0] == 0:
        raise ValueError("empty corpus")
    pad = corpus.pad_char
    corpus_strings = [corpus.decode_row(row) for row in corpus.seqs]
    p = _ngram_counts(samples, pad, n)
    q = _ngram_counts(corpus_strings, pad, n)
    if not p and not q:
        return 0.0
    if not p or not q:
        return math.log(2.0)
    keys = sorted(set(p) | set(q))
    pv = np.array([p.get(k, 0) for k in keys], dtype=np.float64)
    qv = np.array([q.get(k, 0) for k in keys], dtype=np.float64)
    pv /= pv.sum()
    qv /= qv.sum()
    mv = 0.5 * (pv + qv)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log(a[mask] / b[mask])).sum())

    return 0.5 * kl(pv, mv) + 0.5 * kl(qv, mv)


def mean_max_prob(probs: np.ndarray) -> float:
    """How committed the generator is: mean over positions of the peak
    per-position probability."""
    return float(np.asarray(probs).max(axis=-1).mean())
