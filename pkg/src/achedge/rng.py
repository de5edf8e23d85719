"""Counter-based normal streams.

Every draw is a pure function of ``(seed, stream, index)``: a Philox4x64 generator
keyed by ``(seed, stream)`` yields one 64-bit word per index, and the top 53 bits
map to a standard normal by the inverse CDF.  Prefixes are therefore stable when
``count`` grows, and streams never share state.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_UINT64 = 1 << 64
BRIDGE_STREAM_BASE = 1 << 63


def _key(seed: int, stream: int) -> np.ndarray:
    if not 0 <= seed < _UINT64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if not 0 <= stream < _UINT64:
        raise ValueError(f"stream must be an unsigned 64-bit integer, got {stream!r}")
    return np.array([seed, stream], dtype=np.uint64)


def normals(seed: int, stream: int, count: int) -> np.ndarray:
    raw = np.random.Philox(key=_key(seed, stream)).random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def normal_block(seed: int, streams, count: int) -> np.ndarray:
    """Rows ``normals(seed, s, count)`` for each ``s`` in ``streams``."""
    streams = list(streams)
    out = np.empty((len(streams), count))
    for row, s in enumerate(streams):
        out[row] = normals(seed, s, count)
    return out


def brownian_grid(seed: int, t_horizon: float, n_steps: int) -> np.ndarray:
    """Brownian motion at ``n_steps + 1`` uniform points, built by midpoint refinement.

    ``n_steps = m * 2**k`` with ``m`` odd: the coarse ``m``-step walk comes from one
    stream, each halving level from its own.  Paths for ``n`` and ``2n`` steps drawn
    with the same seed agree on the common points, so grid-refinement studies
    compare the same realization.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    m, levels = n_steps, 0
    while m % 2 == 0:
        m //= 2
        levels += 1
    dt = t_horizon / m
    w = np.concatenate(([0.0], np.cumsum(np.sqrt(dt) * normals(seed, BRIDGE_STREAM_BASE, m))))
    for level in range(1, levels + 1):
        z = normals(seed, BRIDGE_STREAM_BASE + level, w.size - 1)
        mid = 0.5 * (w[:-1] + w[1:]) + 0.5 * np.sqrt(dt) * z
        finer = np.empty(2 * w.size - 1)
        finer[0::2] = w
        finer[1::2] = mid
        w = finer
        dt /= 2.0
    return w
