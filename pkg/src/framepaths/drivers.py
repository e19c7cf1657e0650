"""Counter-based noise streams: every path owns a disjoint block of one
Philox stream, addressed by path index and retry count. Results are then
bit-identical for a given seed regardless of how paths are chunked, and a
rejected path can be resampled without disturbing any other path."""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

PATH_STRIDE = 1 << 40
RETRY_STRIDE = 1 << 20


class IncrementDriver:
    """Per-path Brownian increments with deterministic addressing."""

    def __init__(self, seed):
        self.seed = int(seed)

    def path_generator(self, path_index, retry=0):
        bg = Philox(key=self.seed)
        bg.advance(int(path_index) * PATH_STRIDE + int(retry) * RETRY_STRIDE)
        return Generator(bg)

    def normals(self, path_indices, retries, n_steps, dim):
        """Increment block of shape (len(path_indices), n_steps, dim)."""
        path_indices = np.asarray(path_indices)
        retries = np.broadcast_to(np.asarray(retries), path_indices.shape)
        out = np.empty((path_indices.size, n_steps, dim))
        for k in range(path_indices.size):
            gen = self.path_generator(path_indices[k], retries[k])
            out[k] = gen.standard_normal((n_steps, dim))
        return out
