"""Counter-based random number generation.

All randomness in the lab flows from a single 64-bit master seed through
Philox counters keyed by (master seed, path index) with the step index and a
purpose tag in the counter block.  Draws are therefore independent of
execution order: Monte Carlo paths can run in any schedule (or in parallel)
and reproduce bit-identically.
"""

from __future__ import annotations

import numpy as np

# Purpose tags keep independent noise consumers on disjoint counter blocks.
PURPOSE_WIENER = 0
PURPOSE_OU = 1
PURPOSE_FIELD = 2
PURPOSE_PROBE = 3


def normals(master_seed: int, path: int, step: int, n: int,
            purpose: int = PURPOSE_WIENER) -> np.ndarray:
    """Return ``n`` standard normals for the (seed, path, step, purpose) cell."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    counter = np.array([step, purpose, 0, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=counter)
    return np.random.Generator(bitgen).standard_normal(n)


def generator(master_seed: int, path: int = 0, step: int = 0,
              purpose: int = PURPOSE_FIELD) -> np.random.Generator:
    """A full Generator pinned to one counter cell (for bulk/utility draws)."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    counter = np.array([step, purpose, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
