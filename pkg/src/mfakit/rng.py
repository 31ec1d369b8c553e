"""Seeded random streams.

All randomness in the package comes from numpy's Philox 4x64 counter-based
bit generator.  Gaussian variates are produced from its uniforms with the
Box-Muller transform, so the mapping seed -> numbers depends only on Philox
and the code below, not on numpy's choice of normal sampler.
"""

import numpy as np


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def standard_normal(rng, shape):
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape, dtype=np.int64))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1], keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def categorical(rng, probs, n):
    """Draw ``n`` indices with probabilities ``probs``."""
    cdf = np.cumsum(probs)
    u = rng.random(n) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)
