"""Deterministic, splittable random streams.

A stream is identified by a 64-bit seed plus a path of labels, e.g.
``RngStream(seed).child("sample", round_index)``. Every draw builds a
fresh counter-based Philox generator keyed by
``numpy.random.SeedSequence(entropy=seed, spawn_key=path)``, so each
function here is a pure function of (seed, path, arguments): calling it
twice on the same stream returns the same values, and distinct paths give
statistically independent streams.

String labels are folded to 64-bit words with BLAKE2b, integer labels are
reduced mod 2**64; both are platform independent. Value sequences are
bit-reproducible across platforms for a fixed numpy version (numpy's
stream-compatibility guarantee for ``Generator``).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

_WORD = 2**64


class SampleError(ValueError):
    """Requested more distinct draws than the population holds."""


def _label_word(label: int | str) -> int:
    if isinstance(label, bool) or not isinstance(label, (int, str)):
        raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")
    if isinstance(label, str):
        return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "big")
    return label % _WORD


@dataclass(frozen=True)
class RngStream:
    """Identity of one random stream: (seed, path)."""

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) % _WORD)
        object.__setattr__(self, "path", tuple(_label_word(p) for p in self.path))

    def child(self, *labels: int | str) -> "RngStream":
        """Derived stream with the labels appended to the path."""
        return RngStream(self.seed, self.path + tuple(_label_word(x) for x in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def uniform(stream: RngStream, lo: float, hi: float, n: int) -> Tensor:
    """n draws from U[lo, hi) as a flat tensor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Tensor(stream.generator().uniform(lo, hi, n))


def normal(stream: RngStream, mean: float, std: float, n: int) -> Tensor:
    """n draws from N(mean, std^2) as a flat tensor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Tensor(mean + std * stream.generator().standard_normal(n))


def integers(stream: RngStream, low: int, high: int, n: int) -> np.ndarray:
    """n draws from the integers low..high-1, uniform."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if high <= low:
        raise ValueError("need high > low")
    return stream.generator().integers(low, high, size=n, dtype=np.int64)


def shuffle(stream: RngStream, n: int) -> np.ndarray:
    """Uniformly random permutation of 0..n-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return stream.generator().permutation(n)


def sample_without_replacement(stream: RngStream, population: int, m: int) -> np.ndarray:
    """m distinct indices drawn uniformly from 0..population-1."""
    if m > population:
        raise SampleError(f"cannot draw {m} distinct indices from population {population}")
    if m < 1:
        raise ValueError("m must be >= 1")
    return stream.generator().choice(population, size=m, replace=False)
