"""Keyed random streams.

Every random draw in the package comes from ``stream(seed, *key)``: a Philox
(counter-based) generator whose key is derived from the master seed and a tuple
of integers/strings. Streams are pure functions of their key, so results do not
depend on evaluation order or thread count.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        # tag strings into a range disjoint from small integers
        return (1 << 40) | zlib.crc32(part.encode())
    if isinstance(part, float):
        return int(np.float64(part).view(np.uint64))
    raise TypeError(f"unsupported stream key part {part!r}")


def stream(seed: int, *key) -> np.random.Generator:
    words = []
    for w in [_word(seed)] + [_word(k) for k in key]:
        # fixed two-word encoding keeps distinct key tuples distinct
        words += [w & 0xFFFFFFFF, w >> 32]
    state = np.random.SeedSequence(words).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=state))


def entropy_seed() -> int:
    """Fresh 63-bit seed from OS entropy (printed by the CLI when --seed is omitted)."""
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))
