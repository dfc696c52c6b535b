"""Counter-based random streams.

Every draw is keyed by ``(seed, block, kind)`` where a block is a fixed
range of ``BLOCK_SIZE`` consecutive path indices.  Philox is a counter-based
generator, so a stream is a pure function of its key: the numbers assigned to
a path never depend on how many other paths are simulated or on the order in
which blocks are produced.
"""

import numpy as np

BLOCK_SIZE = 1024

# stream kinds; never renumber
NORMAL = 0
EXPONENTIAL = 1
UNIFORM = 2
INITIAL = 3
AUXILIARY = 4


def stream(seed, block, kind):
    """Generator for one (seed, block, kind) key."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block), int(kind)))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(n_paths):
    for b in range(0, (n_paths + BLOCK_SIZE - 1) // BLOCK_SIZE):
        lo = b * BLOCK_SIZE
        yield b, min(BLOCK_SIZE, n_paths - lo)


def standard_normal(seed, kind, n_paths, shape):
    """Array of shape ``(n_paths, *shape)``; row ``i`` depends only on (seed, i)."""
    shape = tuple(shape)
    out = np.empty((n_paths,) + shape)
    for b, size in _blocks(n_paths):
        lo = b * BLOCK_SIZE
        out[lo:lo + size] = stream(seed, b, kind).standard_normal((size,) + shape)
    return out


def standard_exponential(seed, kind, n_paths, shape):
    shape = tuple(shape)
    out = np.empty((n_paths,) + shape)
    for b, size in _blocks(n_paths):
        lo = b * BLOCK_SIZE
        out[lo:lo + size] = stream(seed, b, kind).standard_exponential((size,) + shape)
    return out


def uniform(seed, kind, n_paths, shape):
    shape = tuple(shape)
    out = np.empty((n_paths,) + shape)
    for b, size in _blocks(n_paths):
        lo = b * BLOCK_SIZE
        out[lo:lo + size] = stream(seed, b, kind).random((size,) + shape)
    return out
