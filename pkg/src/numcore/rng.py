"""
Seeded random streams.

Every stream is a PCG64 generator seeded through `SeedSequence([seed, *stream])`,
so (seed, split, scene) or (seed, epoch) tuples give independent, reproducible
streams.
"""

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(s) for s in stream]
    if any(e < 0 for e in entropy):
        raise ValueError(f"seed and stream ids must be non-negative, got {entropy}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within `bound` standard deviations."""
    values = rng.standard_normal(shape)
    outside = np.abs(values) > bound
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > bound
    return values * std
