"""Reproducible counter-based random streams.

Every stochastic unit of work (a replication, a block of draws, a model in an
ensemble) gets its own Philox stream keyed by ``(seed, *path)``.  Because the
key depends only on the logical position of the work and never on which
worker executes it, results do not depend on the number of threads.
"""

import numpy as np

# Draws are grouped into fixed-size blocks, each with its own stream.  The
# block size is part of the reproducibility contract: changing it changes
# results for a given seed.
BLOCK_SIZE = 256


def stream(seed, *path):
    """Return a Generator for the stream identified by ``(seed, *path)``."""
    if seed is None:
        raise ValueError("a seed is required for reproducible streams")
    keys = tuple(int(p) for p in path)
    ss = np.random.SeedSequence(int(seed), spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))


def blocks(n, block_size=BLOCK_SIZE):
    """Yield ``(block_index, start, stop)`` covering ``range(n)``."""
    for b, start in enumerate(range(0, n, block_size)):
        yield b, start, min(start + block_size, n)


# Stream namespaces, so that seeds reused across subsystems never collide.
NS_BOOTSTRAP = 1
NS_POWER = 2
NS_IMPORTANCE = 3
NS_RESAMPLE = 4
NS_FORECAST = 5
NS_COMPLETION = 6
NS_SIMULATION = 7
NS_DELAYS = 8
NS_EXPECTED_INFO = 9
NS_QQ = 10
