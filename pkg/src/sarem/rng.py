"""Keyed random streams.

Every stochastic component in this repository draws from a PCG64 generator
seeded through ``numpy.random.SeedSequence(master_seed, spawn_key=key)``.
Two calls with the same ``(master_seed, *key)`` produce identical streams,
independent of thread scheduling or call order, which is what makes data
generation, training restarts, and benchmark sweeps replayable.

The first key component is a namespace tag so that, e.g., episode 3 of a
simulation run and restart thread 3 of a training run never share a stream.
"""

from __future__ import annotations

import numpy as np

# namespace tags (first element of every spawn key)
NS_INIT = 1      # controller parameter initialization
NS_EPISODE = 2   # one simulated episode
NS_SPLIT = 3     # dataset partitioning
NS_RESTART = 4   # random-restart training threads, keyed (tag, thread, outer)
NS_SCENARIO = 5  # scenario-level randomness (victim placement uses episode streams)


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator keyed by ``(master_seed, *key)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw an index from a probability vector via one uniform variate."""
    u = rng.random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)
