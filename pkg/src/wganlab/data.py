"""Toy distributions, latent noise, and character corpora.

Samplers are small stateful objects: construction fixes a seed, and the
draw sequence is then a pure function of (seed, call order).  Training code
gives each sampler its own child seed so streams never interleave.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SwissRoll",
    "EightGaussians",
    "TwentyFiveGaussians",
    "Gaussian1d",
    "PointPair",
    "FixedSetSampler",
    "SplitSpec",
    "make_toy",
    "LatentSampler",
    "sample_latent",
    "GrammarSpec",
    "CharCorpus",
    "synth_corpus",
    "load_corpus",
    "encode_onehot",
    "SEQ_LEN",
]

SEQ_LEN = 32


class _Seeded:
    def _rng(self) -> np.random.Generator:
        if not hasattr(self, "_gen"):
            self._gen = np.random.default_rng(self.seed)
        return self._gen


@dataclass
class SwissRoll(_Seeded):
    """Planar spiral (t cos t, t sin t), t in [1.5 pi, 4.5 pi], scaled into [-2, 2]^2."""

    seed: int
    noise: float = 0.02
    dim: int = field(default=2, init=False)

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
        pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
        pts /= 4.5 * np.pi / 2.0
        return pts + self.noise * rng.standard_normal((n, 2))


def _ring_centers(k: int, radius: float) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass
class EightGaussians(_Seeded):
    seed: int
    radius: float = 2.0
    sigma: float = 0.05
    dim: int = field(default=2, init=False)

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        centers = _ring_centers(8, self.radius)
        idx = rng.integers(0, 8, size=n)
        return centers[idx] + self.sigma * rng.standard_normal((n, 2))


@dataclass
class TwentyFiveGaussians(_Seeded):
    seed: int
    spacing: float = 1.0
    sigma: float = 0.05
    dim: int = field(default=2, init=False)

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        line = self.spacing * (np.arange(5) - 2.0)
        centers = np.stack(np.meshgrid(line, line), axis=-1).reshape(25, 2)
        idx = rng.integers(0, 25, size=n)
        return centers[idx] + self.sigma * rng.standard_normal((n, 2))


@dataclass
class Gaussian1d(_Seeded):
    seed: int
    mu: float = 0.0
    sigma: float = 1.0
    dim: int = field(default=1, init=False)

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        return (self.mu + self.sigma * rng.standard_normal(n)).reshape(n, 1)


@dataclass
class PointPair(_Seeded):
    """Fair coin over two point masses on the line."""

    seed: int
    a: float = 0.0
    b: float = 1.0
    dim: int = field(default=1, init=False)

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        picks = rng.integers(0, 2, size=n).astype(np.float64)
        return (self.a + picks * (self.b - self.a)).reshape(n, 1)


@dataclass
class FixedSetSampler(_Seeded):
    """Uniform draws with replacement from a frozen point set."""

    points: np.ndarray
    seed: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.dim = self.points.shape[1]

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        idx = rng.integers(0, self.points.shape[0], size=n)
        return self.points[idx].copy()


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/validation point sets carved from one base sampler."""

    train_size: int
    val_size: int
    seed: int = 0

    def __post_init__(self):
        if self.train_size < 1 or self.val_size < 1:
            raise ValueError("both split sizes must be positive")

    def split(self, sampler) -> tuple[FixedSetSampler, FixedSetSampler]:
        pool = np.asarray(sampler.sample(self.train_size + self.val_size))
        perm = np.random.default_rng(self.seed).permutation(pool.shape[0])
        train = pool[perm[: self.train_size]]
        val = pool[perm[self.train_size :]]
        return (
            FixedSetSampler(train, seed=self.seed + 1),
            FixedSetSampler(val, seed=self.seed + 2),
        )


_TOYS = {
    "swiss_roll": SwissRoll,
    "eight_gaussians": EightGaussians,
    "twenty_five_gaussians": TwentyFiveGaussians,
    "gaussian_1d": Gaussian1d,
    "point_pair": PointPair,
}


def make_toy(name: str, seed: int, **kwargs):
    if name not in _TOYS:
        raise ValueError(f"unknown toy distribution {name!r} (have {sorted(_TOYS)})")
    return _TOYS[name](seed=seed, **kwargs)


@dataclass
class LatentSampler(_Seeded):
    """Noise source for generators: uniform on [-1, 1]^dim or standard normal."""

    dim: int
    kind: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "gauss"):
            raise ValueError(f"latent kind must be uniform or gauss, got {self.kind!r}")

    def sample(self, n: int) -> np.ndarray:
        rng = self._rng()
        if self.kind == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.dim))
        return rng.standard_normal((n, self.dim))


def sample_latent(dim: int, n: int, kind: str = "uniform", seed: int = 0) -> np.ndarray:
    return LatentSampler(dim=dim, kind=kind, seed=seed).sample(n)


# ---------------------------------------------------------------------------
# Character corpora.


@dataclass(frozen=True)
class GrammarSpec:
    """Strings formed by concatenating blocks drawn from ``alternatives``.

    The default blocks give the language (ab|ba|abb)* over {a, b}.
    ``stop`` is the per-block probability of ending a string early; the
    sequence length cap ends it regardless.
    """

    alternatives: tuple[str, ...] = ("ab", "ba", "abb")
    stop: float = 0.15

    def __post_init__(self):
        if not self.alternatives or any(not a for a in self.alternatives):
            raise ValueError("alternatives must be non-empty strings")
        if not (0.0 < self.stop < 1.0):
            raise ValueError("stop probability must be in (0, 1)")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(sorted({ch for alt in self.alternatives for ch in alt}))

    def matches(self, s: str) -> bool:
        pattern = "(" + "|".join(re.escape(a) for a in self.alternatives) + ")*"
        return re.fullmatch(pattern, s) is not None


@dataclass(frozen=True)
class CharCorpus:
    """Fixed-length index sequences over an ordered vocabulary.

    The pad character occupies the final vocabulary slot and fills each
    sequence out to :data:`SEQ_LEN`.
    """

    vocab: tuple[str, ...]
    seqs: np.ndarray  # [n, SEQ_LEN] int array of vocab indices
    pad_index: int
    source: str

    def __post_init__(self):
        if self.seqs.ndim != 2 or self.seqs.shape[1] != SEQ_LEN:
            raise ValueError(f"sequences must be [n, {SEQ_LEN}], got {self.seqs.shape}")
        if self.seqs.size and (self.seqs.min() < 0 or self.seqs.max() >= len(self.vocab)):
            raise ValueError("sequence indices out of vocabulary range")

    @property
    def pad_char(self) -> str:
        return self.vocab[self.pad_index]

    def decode_row(self, row: np.ndarray) -> str:
        return "".join(self.vocab[i] for i in row)


PAD_CHAR = "_"


def _encode_strings(strings: list[str], vocab: tuple[str, ...], pad_index: int) -> np.ndarray:
    index = {ch: i for i, ch in enumerate(vocab)}
    out = np.full((len(strings), SEQ_LEN), pad_index, dtype=np.int64)
    for r, s in enumerate(strings):
        s = s[:SEQ_LEN]
        out[r, : len(s)] = [index[ch] for ch in s]
    return out


def synth_corpus(grammar: GrammarSpec | None = None, count: int = 2000, seed: int = 0) -> CharCorpus:
    """Draw grammar strings, validate membership, pad to fixed length."""
    if count < 0:
        raise ValueError("count must be non-negative")
    grammar = grammar or GrammarSpec()
    if PAD_CHAR in "".join(grammar.alphabet):
        raise ValueError(f"pad character {PAD_CHAR!r} collides with the alphabet")
    rng = np.random.default_rng(seed)
    alts = grammar.alternatives
    strings = []
    for _ in range(count):
        parts: list[str] = []
        length = 0
        while True:
            if parts and rng.random() < grammar.stop:
                break
            block = alts[rng.integers(0, len(alts))]
            if length + len(block) > SEQ_LEN:
                break
            parts.append(block)
            length += len(block)
        s = "".join(parts)
        if not grammar.matches(s):
            raise AssertionError(f"generated string violates grammar: {s!r}")
        strings.append(s)
    vocab = grammar.alphabet + (PAD_CHAR,)
    seqs = _encode_strings(strings, vocab, len(vocab) - 1)
    return CharCorpus(vocab=vocab, seqs=seqs, pad_index=len(vocab) - 1, source="synthetic")


def load_corpus(path, pad_char: str = PAD_CHAR) -> CharCorpus:
    """One sequence per line, UTF-8, truncated to the fixed length.

    The pad character must not occur in the text, it is reserved for filling
    short lines.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line]
    text_chars = {ch for line in lines for ch in line}
    if pad_char in text_chars:
        raise ValueError(f"pad character {pad_char!r} occurs in the corpus text")
    vocab = tuple(sorted(text_chars)) + (pad_char,)
    seqs = _encode_strings(lines, vocab, len(vocab) - 1)
    return CharCorpus(vocab=vocab, seqs=seqs, pad_index=len(vocab) - 1, source=str(path))


def encode_onehot(corpus: CharCorpus) -> np.ndarray:
    """[n, length, vocab] one-hot rows; each row sums to exactly 1."""
    n, length = corpus.seqs.shape
    v = len(corpus.vocab)
    out = np.zeros((n, length, v))
    rows = np.repeat(np.arange(n), length)
    cols = np.tile(np.arange(length), n)
    out[rows, cols, corpus.seqs.reshape(-1)] = 1.0
    return out
