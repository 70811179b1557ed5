"""Deterministic random-stream derivation.

Every random consumer (curve generator, sweep trial, posterior sampler)
derives its own independent stream from one 64-bit root seed plus a key
tuple.  Streams are keyed, not drawn sequentially, so adding a new consumer
never perturbs the bits seen by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_words(keys) -> list[int]:
    words = []
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        elif isinstance(key, (int, np.integer)):
            words.append(int(key) & _MASK64)
        else:
            raise TypeError(f"stream key must be str or int, got {type(key)!r}")
    return words


def substream(root_seed: int, *keys) -> np.random.Generator:
    """Return a generator for the stream identified by ``(root_seed, *keys)``.

    String keys are hashed with CRC-32 (stable across platforms and Python
    versions); integer keys are used as-is.
    """
    entropy = [int(root_seed) & _MASK64] + _key_words(keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(root_seed: int, *keys) -> int:
    """Collapse a stream key into a single reproducible 63-bit integer seed."""
    entropy = [int(root_seed) & _MASK64] + _key_words(keys)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
