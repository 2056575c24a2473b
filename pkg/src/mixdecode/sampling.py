"""Temperature-scaled categorical sampling with per-draw seeding.

Every draw is seeded independently with an explicit 64-bit value supplied
by the decode loop, so backends (in-process or remote) reproduce the same
token stream from the same seed schedule without sharing generator state.
"""

from __future__ import annotations

import numpy as np

from .types import ConfigError, TokenId


def sample_token(probs: np.ndarray, temperature: float, seed_draw: int) -> TokenId:
    """Draw one token id from probs at the given temperature.

    temperature == 0.0 is greedy: argmax with the lowest index winning
    ties.  Otherwise probabilities are re-scaled as p**(1/temperature)
    (equivalent to dividing logits by the temperature) and sampled by
    inverse CDF using a single uniform from a generator seeded with
    seed_draw.
    """
    if temperature < 0.0:
        raise ConfigError("temperature must be >= 0")
    if temperature == 0.0:
        return int(np.argmax(probs))
    p = np.asarray(probs, dtype=np.float64)
    if temperature != 1.0:
        p = p ** (1.0 / temperature)
        p = p / p.sum()
    u = np.random.default_rng(seed_draw).random()
    cum = np.cumsum(p)
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, p.shape[0] - 1)
