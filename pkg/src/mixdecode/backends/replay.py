"""Replay backend: drive the controller from a recorded entropy stream.

Entropy values are indexed by completion position and re-read unchanged
after a rollback, so there is deliberately no feedback from regeneration
to the signal.  That makes the effect of the control knobs on thinking
coverage analyzable in isolation: replay_coverage computes, for a fixed
trace, the set of positions any window or hysteresis tail would label
thinking.  Because every above-threshold position contributes its full
window to that set, coverage is provably monotone, non-decreasing in the
forward extent and non-increasing in the trigger threshold.

Trace file format: one entropy value per line; blank lines and lines
starting with '#' are ignored.
"""

from __future__ import annotations

import numpy as np

from ..types import ConfigError, ControllerConfig, TokenId
from .base import BackendCapabilities, BackendError, BackendSession, ModelBackend, StepResult


def load_entropy_trace(path: str) -> np.ndarray:
    values: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ConfigError(f"entropy trace {path!r}: bad value {line!r}") from None
    if not values:
        raise ConfigError(f"entropy trace {path!r} is empty")
    arr = np.asarray(values, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ConfigError("entropy trace values must lie in [0, 1]")
    return arr


class ReplaySession(BackendSession):
    """Cursor over a fixed entropy sequence; tokens are placeholders."""

    def __init__(self, entropies: np.ndarray, session_id: int):
        self._entropies = entropies
        self.session_id = session_id
        self._prompt_len = 0
        self._cursor = 0  # completion position of the next step

    def prefill(self, alpha: float, tokens: list[TokenId]) -> int:
        self._prompt_len += len(tokens)
        return self._prompt_len + self._cursor

    def step(self, alpha: float, temperature: float, seed_draw: int) -> StepResult:
        if self._cursor >= len(self._entropies):
            return StepResult(eos=True)
        h = float(self._entropies[self._cursor])
        self._cursor += 1
        return StepResult(token=0, entropy=h)

    def rollback(self, to_len: int) -> None:
        total = self._prompt_len + self._cursor
        if to_len < self._prompt_len or to_len > total:
            raise BackendError(
                f"rollback to {to_len} outside [{self._prompt_len}, {total}]",
                session_id=self.session_id,
                code="bad_rollback",
            )
        self._cursor = to_len - self._prompt_len


class ReplayBackend(ModelBackend):
    capabilities = BackendCapabilities(
        emits_full_dist=False, kv_invariant_adapter=False, concurrent_sessions=True
    )

    def __init__(self, entropies: np.ndarray):
        self.entropies = np.asarray(entropies, dtype=np.float64)
        self.vocab_size = 2  # placeholder tokens only
        self._next_id = 0

    def open_session(self) -> ReplaySession:
        self._next_id += 1
        return ReplaySession(self.entropies, self._next_id)


def replay_triggers(entropies: np.ndarray, cfg: ControllerConfig) -> list[int]:
    """Positions whose recorded entropy reaches the trigger threshold."""
    return [int(i) for i in np.flatnonzero(np.asarray(entropies) >= cfg.tau_up)]


def replay_coverage(entropies: np.ndarray, cfg: ControllerConfig) -> float:
    """Fraction of positions labeled thinking on a fixed entropy trace.

    Every position with entropy >= tau_up contributes the window
    [pos - back, pos + fwd] (clipped to the trace); the union of windows
    is then extended by the hysteresis rule, a position staying thinking
    while its predecessor was thinking with entropy > tau_down.
    """
    h = np.asarray(entropies, dtype=np.float64)
    n = len(h)
    if n == 0:
        return 0.0
    thinking = np.zeros(n, dtype=bool)
    for t in replay_triggers(h, cfg):
        left = max(0, t - cfg.back)
        right = min(n - 1, t + cfg.fwd)
        thinking[left : right + 1] = True
    for p in range(1, n):
        if thinking[p - 1] and h[p - 1] > cfg.tau_down:
            thinking[p] = True
    return float(thinking.sum()) / n
