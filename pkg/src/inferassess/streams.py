"""Counter-based random streams for reproducible parallel simulation.

Every replicate (and every nested resampling loop) gets its own Philox
stream keyed by the assessment seed plus an integer path, so results are
identical for any worker count or scheduling order.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *path)``.

    ``substream(s, b)`` and ``substream(s, b, 1)`` never collide; the path
    acts like a spawn key, so callers can carve out nested streams (outer
    replicate id, inner loop id) without coordination.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
