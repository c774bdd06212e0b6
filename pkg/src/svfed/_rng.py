"""Seed derivation: every random consumer gets its own stream from (seed, tags)."""
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_words(tag):
    if isinstance(tag, bool):
        return [int(tag)]
    if isinstance(tag, (int, np.integer)):
        v = int(tag) & _MASK64
        return [v & 0xFFFFFFFF, v >> 32]
    if isinstance(tag, float):
        tag = repr(tag)
    return [zlib.crc32(str(tag).encode())]


def derive_seed(seed, *tags) -> int:
    """Stable 64-bit seed for ``(seed, *tags)``."""
    words = _tag_words(seed)
    for t in tags:
        words += _tag_words(t)
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
