"""Shared domain types for the mixed-depth decoding engine.

Everything downstream (controller, engine, backends, metrics) builds on the
types in this module.  Validation happens at construction time so invalid
states cannot circulate: a distribution that does not sum to one, a trigger
threshold at or below the anneal threshold, or a window annotation on a
concise-mode state are all rejected here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Token ids are plain ints; they must be < vocab_size wherever a vocabulary
# is in scope (enforced at the sampling / backend boundary).
TokenId = int

# Absolute tolerance on probability mass when validating a distribution.
PROB_SUM_TOL = 1e-9


class DistributionError(ValueError):
    """A next-token distribution failed validation."""


class ConfigError(ValueError):
    """A configuration object failed validation."""


class InternalError(RuntimeError):
    """An internal contract was violated (indicates a bug, not bad input)."""


class Mode(str, Enum):
    """Decoding mode: thinking (low adapter strength) or concise (high)."""

    THINKING = "thinking"
    CONCISE = "concise"

    def __str__(self) -> str:  # serialized form used in traces
        return self.value


@dataclass(eq=False)
class NextTokenDistribution:
    """A full next-token probability vector over a fixed vocabulary.

    probs is stored as a float64 array.  Entries must be non-negative and
    sum to 1 within PROB_SUM_TOL; the vocabulary must have at least two
    entries, otherwise normalized entropy is undefined.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1:
            raise DistributionError(f"probs must be 1-D, got shape {p.shape}")
        if p.shape[0] < 2:
            raise DistributionError("vocabulary must contain at least 2 tokens")
        if np.any(p < 0.0):
            raise DistributionError("probabilities must be non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise DistributionError(f"probabilities sum to {total!r}, not 1")
        self.probs = p

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class AdapterStrength:
    """A scalar adapter strength and the decoding role it plays."""

    alpha: float
    role: Mode

    def __post_init__(self) -> None:
        if not math.isfinite(self.alpha):
            raise ConfigError("adapter strength must be finite")


def validate_strength_pair(low: AdapterStrength, high: AdapterStrength) -> None:
    """Check that a thinking/concise strength pair is usable together."""
    if low.role is not Mode.THINKING or high.role is not Mode.CONCISE:
        raise ConfigError("strength pair must be (thinking, concise)")
    if not low.alpha < high.alpha:
        raise ConfigError("thinking strength must be strictly below concise strength")


@dataclass(frozen=True)
class ControllerConfig:
    """Thresholds and window bounds for the mode-switching controller.

    tau_up is the trigger threshold on normalized entropy (enter thinking at
    H >= tau_up); tau_down is the anneal threshold (return to concise at
    H <= tau_down).  Values of tau_up above 1.0 are permitted and make the
    trigger unreachable, which is the supported way to run a pure-concise
    policy.  back/fwd are the window extents B and F in token positions.
    """

    tau_up: float
    tau_down: float
    back: int
    fwd: int
    alpha_low: float = 0.0
    alpha_high: float = 1.0

    def __post_init__(self) -> None:
        if not (isinstance(self.back, int) and isinstance(self.fwd, int)):
            raise ConfigError("window bounds back/fwd must be integers")
        if self.back < 0 or self.fwd < 0:
            raise ConfigError("window bounds back/fwd must be >= 0")
        if not self.tau_up > 0.0:
            raise ConfigError("tau_up must be > 0")
        if not (0.0 <= self.tau_down < 1.0):
            raise ConfigError("tau_down must lie in [0, 1)")
        if not self.tau_down < self.tau_up:
            raise ConfigError("tau_down must be strictly below tau_up")
        if not self.alpha_low < self.alpha_high:
            raise ConfigError("alpha_low must be strictly below alpha_high")

    def alpha_for(self, mode: Mode) -> float:
        return self.alpha_low if mode is Mode.THINKING else self.alpha_high


@dataclass(frozen=True)
class ModeState:
    """Controller state at one decoding position.

    in_window marks positions inside an open uncertainty window; such
    positions are always decoded in thinking mode, so in_window requires
    mode == THINKING, and window_end is present exactly when in_window.
    """

    mode: Mode
    in_window: bool = False
    window_end: int | None = None

    def __post_init__(self) -> None:
        if self.in_window:
            if self.mode is not Mode.THINKING:
                raise ConfigError("in_window requires thinking mode")
            if self.window_end is None:
                raise ConfigError("in_window requires window_end")
        elif self.window_end is not None:
            raise ConfigError("window_end is only meaningful inside a window")


@dataclass(frozen=True)
class EngineConfig:
    """Decode-loop budget, sampling and seeding parameters.

    max_kept_tokens caps the final answer length; max_compute_tokens caps
    kept plus discarded tokens and therefore bounds regeneration churn.
    temperature == 0.0 selects greedy decoding (argmax, lowest index wins
    ties).  seed is a 64-bit unsigned integer.
    """

    controller: ControllerConfig
    max_kept_tokens: int = 256
    max_compute_tokens: int = 1024
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_kept_tokens <= 0:
            raise ConfigError("max_kept_tokens must be positive")
        if self.max_compute_tokens < self.max_kept_tokens:
            raise ConfigError("max_compute_tokens must be >= max_kept_tokens")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer")
