"""Counter-based random streams.

Every draw is a pure function of ``(seed, domain, sample index, stream)``, so
output does not depend on batching, thread count or evaluation order.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from ._kernels import counter_uniforms

# stream-space offsets so different uses of the same key never collide
PARAM_DOMAIN_BASE = 1 << 40


def uniforms(seed: int, domain: int, start: int, count: int, n_streams: int) -> np.ndarray:
    return counter_uniforms(
        int(seed) & 0xFFFFFFFFFFFFFFFF, int(domain), int(start), int(count), int(n_streams)
    )


def normals(seed: int, domain: int, start: int, count: int, n_streams: int) -> np.ndarray:
    return ndtri(uniforms(seed, domain, start, count, n_streams))


def generator(seed: int, *keys: int) -> np.random.Generator:
    """A NumPy generator seeded from a counter-hash of ``keys``.

    Used for construction-time randomness (parameters, restarts), never for
    per-sample draws.
    """
    u = uniforms(seed, PARAM_DOMAIN_BASE + len(keys), 0, 1, 1 + len(keys))
    words = [int(v * 2**53) for v in u[0]] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))
