"""Deterministic random-stream management.

Every random draw in the package comes from a counter-based generator
(Philox) derived from one root seed plus an integer path.  Components
that must not interfere (data synthesis, partitioning, per-client model
init, per-client batch shuffling, ...) each get their own path, so
results are independent of call order and of any parallel execution of
clients.  There is no global RNG state anywhere.
"""

from __future__ import annotations

import numpy as np

# Stream namespaces (first path element).
DATA = 0
PARTITION = 1
SERVER = 2
CLIENT = 3
SHUFFLE = 4
PRETRAIN = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for `path` under the root `seed`.

    Identical (seed, path) always yields an identical stream; distinct
    paths yield statistically independent streams.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
