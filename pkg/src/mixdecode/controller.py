"""Hysteresis mode controller with bounded uncertainty windows.

The controller decides, one position at a time, whether decoding runs in
thinking mode (low adapter strength) or concise mode (high strength):

* concise, entropy >= tau_up at an uncovered position: open an uncertainty
  window spanning [trigger - back, trigger + fwd] (clamped so windows never
  overlap) and switch to thinking;
* inside an open window: stay in thinking regardless of entropy;
* thinking past the window: stay while entropy > tau_down, anneal back to
  concise once entropy <= tau_down.

The two thresholds are deliberately asymmetric (tau_down < tau_up) so a
signal sitting between them never causes chatter.  Positions covered by a
committed window never re-trigger, which bounds the number of windows per
trace and guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .types import ControllerConfig, InternalError, Mode, ModeState


class Action(Enum):
    NONE = "none"
    OPEN_WINDOW = "open_window"
    CLOSE_WINDOW = "close_window"
    ANNEAL = "anneal"


@dataclass
class CoverageMap:
    """Positions already claimed by committed uncertainty windows.

    Windows are disjoint by construction; marking a span that intersects
    existing coverage is an internal error.
    """

    covered: set[int] = field(default_factory=set)
    _max_covered: int = -1

    def mark(self, left: int, right: int) -> None:
        if left < 0 or right < left:
            raise InternalError(f"bad window span [{left}, {right}]")
        span = range(left, right + 1)
        if any(p in self.covered for p in span):
            raise InternalError(f"window [{left}, {right}] overlaps existing coverage")
        self.covered.update(span)
        self._max_covered = max(self._max_covered, right)

    def __contains__(self, pos: int) -> bool:
        return pos in self.covered

    @property
    def clamp_left(self) -> int:
        """Leftmost position a new window may reach (one past newest window)."""
        return self._max_covered + 1


@dataclass(frozen=True)
class ControllerDecision:
    """Outcome of one controller step.

    next_mode is the mode for the following position.  action reports what
    happened at the current position: OPEN_WINDOW carries the window span
    and instructs the engine to roll back and regenerate; CLOSE_WINDOW
    fires exactly at the window's last position; ANNEAL marks the
    thinking -> concise transition outside a window.
    """

    next_mode: Mode
    action: Action = Action.NONE
    window: tuple[int, int] | None = None


def open_window(trigger_pos: int, cfg: ControllerConfig, clamp_left: int) -> tuple[int, int]:
    """Compute the span of a new uncertainty window around trigger_pos.

    left = max(clamp_left, trigger_pos - back); right = trigger_pos + fwd.
    The window therefore spans (trigger_pos - left) + fwd + 1 positions.
    """
    if clamp_left < 0 or trigger_pos < clamp_left:
        raise InternalError(
            f"trigger position {trigger_pos} precedes clamp boundary {clamp_left}"
        )
    left = max(clamp_left, trigger_pos - cfg.back)
    right = trigger_pos + cfg.fwd
    return left, right


def mark_covered(cov: CoverageMap, left: int, right: int) -> CoverageMap:
    """Record a committed window span in the coverage map."""
    cov.mark(left, right)
    return cov


def step(
    state: ModeState,
    entropy: float,
    pos: int,
    cfg: ControllerConfig,
    cov: CoverageMap,
) -> ControllerDecision:
    """One controller transition given the entropy observed at pos.

    The decision's next_mode applies to position pos + 1, except for
    OPEN_WINDOW where the engine rolls back and position pos itself is
    regenerated in thinking mode.
    """
    if state.mode is Mode.CONCISE:
        if entropy >= cfg.tau_up and pos not in cov:
            window = open_window(pos, cfg, cov.clamp_left)
            return ControllerDecision(Mode.THINKING, Action.OPEN_WINDOW, window)
        return ControllerDecision(Mode.CONCISE)

    # Thinking mode.
    if state.in_window:
        end = state.window_end
        assert end is not None
        if pos < end:
            return ControllerDecision(Mode.THINKING)
        if pos == end:
            if entropy > cfg.tau_down:
                return ControllerDecision(Mode.THINKING, Action.CLOSE_WINDOW)
            return ControllerDecision(Mode.CONCISE, Action.CLOSE_WINDOW)
        raise InternalError(f"position {pos} is past window end {end}")
    if entropy > cfg.tau_down:
        return ControllerDecision(Mode.THINKING)
    return ControllerDecision(Mode.CONCISE, Action.ANNEAL)


def apply_decision(state: ModeState, decision: ControllerDecision) -> ModeState:
    """Fold a non-trigger decision into the state for the next position."""
    if decision.action is Action.OPEN_WINDOW:
        assert decision.window is not None
        return ModeState(Mode.THINKING, in_window=True, window_end=decision.window[1])
    if decision.action is Action.CLOSE_WINDOW:
        return ModeState(decision.next_mode)
    if decision.action is Action.ANNEAL:
        return ModeState(Mode.CONCISE)
    if state.in_window:
        return state
    return ModeState(decision.next_mode)


def label_modes(entropies: list[float], cfg: ControllerConfig) -> list[Mode]:
    """Mode labels the controller assigns to a fixed entropy sequence.

    Drives step() forward over the sequence with no regeneration: a trigger
    at position t forces thinking from t through t + fwd, after which the
    hysteresis rule applies.  Used to check the controller against an
    independent transcription of the switching rule and to re-derive mode
    annotations from recorded traces.
    """
    cov = CoverageMap()
    state = ModeState(Mode.CONCISE)
    labels: list[Mode] = []
    for pos, h in enumerate(entropies):
        decision = step(state, float(h), pos, cfg, cov)
        if decision.action is Action.OPEN_WINDOW:
            assert decision.window is not None
            mark_covered(cov, *decision.window)
            labels.append(Mode.THINKING)
            state = apply_decision(state, decision)
            if pos == decision.window[1]:
                # fwd == 0: the window ends at the trigger itself, so the
                # close transition fires on the same observation.
                state = apply_decision(state, step(state, float(h), pos, cfg, cov))
        else:
            labels.append(state.mode)
            state = apply_decision(state, decision)
    return labels
