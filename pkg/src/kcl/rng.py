"""Counter-based noise streams.

Every stochastic component draws from a Philox generator keyed by
(seed, stream) with the 256-bit counter positioned by step index, so the
Gaussian block consumed at step k is a pure function of
(seed, stream, k, particle, component).  Reruns are bit-identical and no
state is threaded between steps.
"""
from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1


def stream_key(*parts) -> int:
    """Derive a 64-bit stream id from a tuple of labels.

    Stable across runs and platforms (blake2b of the repr of the parts).
    Used to give each (experiment, N, replica, copy) its own noise stream.
    """
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _generator(seed: int, stream: int, step: int) -> Generator:
    key = ((seed & _MASK64) << 64) | (stream & _MASK64)
    return Generator(Philox(key=key, counter=(step & _MASK64) << 192))


def normal_block(seed: int, stream: int, step: int, shape) -> np.ndarray:
    """Standard-normal block for one step of one stream."""
    return _generator(seed, stream, step).standard_normal(shape)


def uniform_block(seed: int, stream: int, step: int, shape) -> np.ndarray:
    """Uniform(0,1) block for one step of one stream."""
    return _generator(seed, stream, step).random(shape)
