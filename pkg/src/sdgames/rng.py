"""Counter-based random streams for reproducible, schedule-independent Monte Carlo.

Every consumer of randomness draws Gaussian blocks through :func:`block_normals`,
which keys a Philox generator by ``(seed, stream, chunk, block)``.  Blocks have a
fixed shape (``CHUNK_PATHS`` x ``BLOCK_STEPS`` x dims) regardless of how many paths
or steps a batch actually uses; callers slice.  Consequences:

* path ``p`` sees the same noise whether the batch holds ``p+1`` or ``10^6`` paths,
* workers can pick up whole chunks in any order and results do not change,
* sequential and parallel runs are bit-identical.

Philox is counter-based, so there is no generator state to share or hand off.
"""

from __future__ import annotations

import numpy as np

# Fixed generation granularity.  These are part of the reproducibility contract:
# changing them changes every stream.
CHUNK_PATHS = 1024
BLOCK_STEPS = 256

# Stream ids keep independent uses of the same seed from colliding.
STREAM_SIM = 0
STREAM_VALIDATE = 1
STREAM_OPPONENTS = 2

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV = 0x100000001B3


def _key(seed: int, stream: int, chunk: int, block: int) -> int:
    """128-bit Philox key from the four coordinates (order-sensitive mix)."""
    lo = (seed * _GOLDEN + stream * _FNV + 0x9E37) & _MASK64
    hi = (chunk * _FNV + block * _GOLDEN + 0x79B9) & _MASK64
    return lo | (hi << 64)


def block_normals(seed: int, stream: int, chunk: int, block: int, dims: int) -> np.ndarray:
    """Standard normals of shape (CHUNK_PATHS, BLOCK_STEPS, dims) for one block."""
    gen = np.random.Generator(np.random.Philox(key=_key(seed, stream, chunk, block)))
    return gen.standard_normal((CHUNK_PATHS, BLOCK_STEPS, dims))


def scalar_rng(seed: int, stream: int, tag: int = 0) -> np.random.Generator:
    """Generator for low-volume draws (validation samples, opponent schedules)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, stream, tag, 0)))


def chunk_count(paths: int) -> int:
    return (paths + CHUNK_PATHS - 1) // CHUNK_PATHS


def block_count(steps: int) -> int:
    return (steps + BLOCK_STEPS - 1) // BLOCK_STEPS
