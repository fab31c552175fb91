"""Deterministic, path-addressed random number streams.

A stream is identified by a 64-bit master seed plus a path of integers
(for example ``(cell, study, purpose)``).  Streams with distinct paths are
statistically independent, and the sequence produced for a given
``(seed, path)`` pair does not depend on execution order or worker count.
This is what makes parallel simulation bit-reproducible: workers never
share a generator, they derive their own from the path.

Derivation uses ``numpy.random.SeedSequence`` spawn keys on top of the
counter-based Philox generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "multinomial_sample",
    "normal_sample",
    "uniform_sample",
]

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Handle for one reproducible random stream.

    Parameters
    ----------
    seed : int
        Master seed, any 64-bit integer.
    path : tuple of int
        Derivation path.  ``child(*steps)`` appends to it.
    """

    seed: int
    path: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *steps: int) -> "RngStream":
        """Derive a sub-stream by extending the path."""
        return RngStream(self.seed, self.path + tuple(int(s) for s in steps))

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator for this (seed, path).

        Each call returns a generator in the same initial state, so one
        stream should drive one logical unit of work.
        """
        # spawn_key entries must be non-negative; fold path ints into uint32 pairs
        key = []
        for p in self.path:
            p &= (1 << 64) - 1
            key.extend((p & 0xFFFFFFFF, p >> 32))
        ss = np.random.SeedSequence(self.seed & ((1 << 64) - 1), spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if np.any(probs < 0):
        raise ValueError("probabilities must be nonnegative")
    total = probs.sum()
    if abs(total - 1.0) > _PROB_TOL:
        raise ValueError(f"probabilities must sum to 1 (got {total!r})")
    # renormalize so numpy's own simplex check cannot trip on float drift
    return probs / total


def multinomial_sample(rng: RngStream | np.random.Generator, trials: int, probs) -> np.ndarray:
    """Single multinomial draw: counts over the categories of ``probs``.

    ``trials`` may be 0 (all-zero vector).  The component sums equal
    ``trials`` exactly.
    """
    if trials < 0:
        raise ValueError("trials must be nonnegative")
    probs = _check_probs(probs)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.multinomial(int(trials), probs)


def normal_sample(rng: RngStream | np.random.Generator, mean=0.0, sd=1.0, size=None) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.normal(mean, sd, size=size)


def uniform_sample(rng: RngStream | np.random.Generator, low=0.0, high=1.0, size=None) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return gen.uniform(low, high, size=size)
