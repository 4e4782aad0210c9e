"""Deterministic stream derivation for all randomness in the package.

Every random quantity is a pure function of a user-supplied master seed and a
structural path (experiment name, replicate index, tree node label, ...).
Streams are derived with a splitmix64-style hash chain:

    key(seed)            = mix64(seed)
    key(seed, p1, p2)    = mix64(mix64(mix64(seed) + GOLDEN*(h(p1)+1)) + GOLDEN*(h(p2)+1))

where ``mix64`` is the splitmix64 finalizer and ``h`` maps strings through
crc32.  Two further derivations are used by the tree sampler and must stay in
sync with the compiled kernels in ``_kernels``:

    child_key(key, j) = mix64(key + CHILD_GAMMA * j)        (j >= 1)
    draw(key, n)      = mix64(key + GOLDEN * (n + 1))       (n >= 0)

Draw outputs are mapped to [0, 1) by taking the top 53 bits.  Worker count and
evaluation order never enter a key, so results are reproducible under any
parallel schedule.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
CHILD_GAMMA = 0xC2B2AE3D27D4EB4F
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer (Steele et al.), on 64-bit wrapping arithmetic."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _component(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    raise TypeError(f"stream path components must be int or str, got {type(part)!r}")


def derive_key(seed: int, *path) -> int:
    """64-bit stream key for (seed, path). Pure, order-sensitive."""
    key = mix64(int(seed))
    for part in path:
        key = mix64((key + GOLDEN * (_component(part) + 1)) & MASK64)
    return key


def child_key(key: int, j: int) -> int:
    """Key of the j-th child stream (j >= 1) of a tree-node stream."""
    return mix64((key + CHILD_GAMMA * j) & MASK64)


def draw(key: int, n: int) -> int:
    """n-th raw 64-bit output of the stream with the given key."""
    return mix64((key + GOLDEN * (n + 1)) & MASK64)


def to_unit(u: int) -> float:
    """Map a 64-bit word to [0, 1) using its top 53 bits."""
    return (u >> 11) * 2.0**-53


def generator(seed: int, *path) -> np.random.Generator:
    """numpy Generator seeded from the derived key (PCG64)."""
    return np.random.Generator(np.random.PCG64(derive_key(seed, *path)))
