"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by the
master seed plus a tuple of integers naming the task (realization chunk,
worker, sub-experiment...).  Two runs with the same key path see the same
numbers no matter how the work is partitioned.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key_part(p) -> int:
    if isinstance(p, str):
        return zlib.crc32(p.encode())
    return int(p) & 0xFFFFFFFF


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for the task ``path`` under master ``seed``.

    ``path`` entries may be ints or short strings (hashed with crc32).
    """
    ss = np.random.SeedSequence(entropy=int(seed) & SEED_MASK,
                                spawn_key=tuple(_key_part(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(n: int, chunk: int) -> list[int]:
    """Split ``n`` draws into chunks of at most ``chunk``."""
    if n <= 0:
        return []
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def derive_seed(seed: int, *path) -> int:
    """A 63-bit child seed, for handing to code that wants a plain int."""
    return int(stream(seed, *path).integers(0, 2**63 - 1))
