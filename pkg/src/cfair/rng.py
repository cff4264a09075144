"""Pinned random streams.

Every random number in the toolkit comes from Philox4x64-10 (numpy's
``Philox`` bit generator, whose raw output is stable across numpy releases)
keyed by ``(seed, stream)``.  Raw 64-bit words become uniforms on (0, 1) as
``((w >> 11) + 0.5) / 2**53`` and Gaussians come in pairs from Box-Muller:
``sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))``.
"""

import numpy as np

TWO_POW_53 = float(2**53)

# stream ids
SYNTH_STREAM = 0
SAMPLER_STREAM_BASE = 1 << 32


def raw_words(seed: int, stream: int, n: int) -> np.ndarray:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Philox(key=key).random_raw(n)


def uniforms(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` uniforms strictly inside (0, 1)."""
    w = raw_words(seed, stream, n)
    return ((w >> np.uint64(11)).astype(np.float64) + 0.5) / TWO_POW_53


def gaussians(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` standard normal draws via Box-Muller."""
    pairs = (n + 1) // 2
    u = uniforms(seed, stream, 2 * pairs)
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n]
