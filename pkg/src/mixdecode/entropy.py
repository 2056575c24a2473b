"""Normalized token-level entropy.

The uncertainty signal driving mode switches is Shannon entropy of the
next-token distribution divided by its maximum value log(vocab_size), so
the result is comparable across vocabularies and lies in [0, 1].
"""

from __future__ import annotations

import math

import numpy as np

from .types import DistributionError, NextTokenDistribution

# Treat a ratio within one part in 1e12 of an exact bound as that bound.
# Guards uniform distributions over vocabularies like 3 or 6 where the
# accumulated sum lands one ulp below log(V).
_SNAP = 1e-12


def normalized_entropy(dist: NextTokenDistribution) -> float:
    """Entropy of dist divided by log vocab size, clamped to [0, 1].

    Zero-probability entries contribute zero (the 0 * log 0 := 0
    convention).  The log base cancels in the ratio; natural log is used
    internally.
    """
    p = dist.probs
    vocab = dist.vocab_size
    if vocab < 2:
        raise DistributionError("normalized entropy requires vocab_size >= 2")
    nz = p[p > 0.0]
    h = -float(np.sum(nz * np.log(nz)))
    ratio = h / math.log(vocab)
    if abs(ratio - 1.0) <= _SNAP:
        return 1.0
    if abs(ratio) <= _SNAP:
        return 0.0
    return min(1.0, max(0.0, ratio))
