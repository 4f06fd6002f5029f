"""Counter-based random streams.

Samples are produced in fixed-size blocks; block ``b`` of a computation keyed
by ``key`` draws from ``SeedSequence([*key, b])``.  Results therefore depend
only on the key and the sample count, never on how blocks are scheduled.
"""

from __future__ import annotations

import zlib
from collections.abc import Iterator, Sequence

import numpy as np

BLOCK = 4096


def as_key(seed) -> tuple[int, ...]:
    if seed is None:
        raise ValueError("an explicit seed is required")
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    key = []
    for s in seed:
        key.append(tag(s) if isinstance(s, str) else int(s))
    return tuple(key)


def tag(name: str) -> int:
    """Stable integer id for a string (``hash`` is salted per process)."""
    return zlib.crc32(name.encode("utf-8"))


def child(seed, *more) -> tuple[int, ...]:
    return as_key(seed) + as_key(more)


def generator(seed, *more) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(child(seed, *more))))


def blocks(seed, M: int, block: int = BLOCK) -> Iterator[tuple[int, int, np.random.Generator]]:
    """Yield ``(start, stop, rng)`` covering ``range(M)``."""
    key = as_key(seed)
    for b, start in enumerate(range(0, M, block)):
        stop = min(start + block, M)
        yield start, stop, np.random.default_rng(np.random.SeedSequence([*key, b]))


def seed_repr(seed) -> Sequence[int] | int:
    key = as_key(seed)
    return key[0] if len(key) == 1 else key
