"""Deterministic in-process backend over a synthetic routine/fork task.

An episode is an ordered list of segments.  Routine segments are filler
the model emits with near-zero entropy; fork segments are decision points
where exactly one branch token is correct.  Two policies over the same
3-token vocabulary (filler plus two branch tokens) differ in depth:

* the short (concise) policy spends one token per routine segment and
  answers forks immediately, correct with probability p_short_correct,
  from a high-entropy distribution;
* the long (thinking) policy spends routine_len_long tokens per routine
  segment and, at forks, deliberates for fork_deliberation_len filler
  tokens before answering, correct with probability p_long_correct, from
  a low-entropy distribution.

Adapter strength interpolates between the two policies' logits; the engine
only ever requests the endpoints.  A routine segment that was already
completed once (its filler survived an earlier pass before a rollback
re-entered it) re-renders at short length under either policy: its content
is settled, so regeneration does not expand it.  Forks, by contrast, are
always re-deliberated when re-entered, which is the entire point of
rolling back into them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..entropy import normalized_entropy
from ..sampling import sample_token
from ..types import ConfigError, NextTokenDistribution, TokenId
from .base import BackendCapabilities, BackendError, BackendSession, ModelBackend, StepResult

FILLER = 0
BRANCH_A = 1
BRANCH_B = 2
VOCAB_SIZE = 3

ROUTINE = "routine"
FORK = "fork"

# Policy-table state keys.
_STATE_ROUTINE = "routine"
_STATE_DELIB = "delib"


def peaked_distribution(vocab_size: int, peak: int, target_entropy: float) -> np.ndarray:
    """Distribution with one dominant token hitting a target normalized entropy.

    Mass (1 - q) is spread uniformly over the non-peak tokens and q is
    solved by bisection so the normalized entropy equals target_entropy.
    """
    if not (0.0 < target_entropy < 1.0):
        raise ConfigError("target_entropy must lie in (0, 1)")
    log_v = math.log(vocab_size)

    def h_norm(q: float) -> float:
        rest = (1.0 - q) / (vocab_size - 1)
        return -(q * math.log(q) + (1.0 - q) * math.log(rest)) / log_v

    lo, hi = 1.0 / vocab_size, 1.0 - 1e-12  # h_norm: 1.0 at lo, -> 0 at hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h_norm(mid) > target_entropy:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    probs = np.full(vocab_size, (1.0 - q) / (vocab_size - 1))
    probs[peak] = q
    return probs / probs.sum()


def branch_distribution(vocab_size: int, correct: int, p_correct: float) -> np.ndarray:
    """Distribution putting p_correct on the correct branch, rest uniform."""
    if not (0.0 < p_correct <= 1.0):
        raise ConfigError("p_correct must lie in (0, 1]")
    p_correct = min(p_correct, 1.0 - 1e-9)  # keep every logit finite
    probs = np.full(vocab_size, (1.0 - p_correct) / (vocab_size - 1))
    probs[correct] = p_correct
    return probs


@dataclass(frozen=True)
class ToyEpisodeSpec:
    """Parameters of one synthetic routine/fork episode."""

    segments: tuple[str, ...]
    p_short_correct: float
    p_long_correct: float
    routine_len_long: int = 4
    routine_len_short: int = 1
    fork_deliberation_len: int = 6
    fork_entropy_concise: float = 0.9
    routine_entropy: float = 0.05

    def __post_init__(self) -> None:
        if not self.segments:
            raise ConfigError("episode needs at least one segment")
        if any(s not in (ROUTINE, FORK) for s in self.segments):
            raise ConfigError(f"segments must be {ROUTINE!r} or {FORK!r}")
        if self.routine_len_short < 1 or self.routine_len_long < 1:
            raise ConfigError("routine lengths must be >= 1")
        if self.fork_deliberation_len < 0:
            raise ConfigError("fork_deliberation_len must be >= 0")
        if not (0.0 < self.p_short_correct < self.p_long_correct <= 1.0):
            raise ConfigError("need 0 < p_short_correct < p_long_correct <= 1")
        if not (0.0 < self.routine_entropy < self.fork_entropy_concise <= 1.0):
            raise ConfigError("need 0 < routine_entropy < fork_entropy_concise <= 1")
        fork_h = normalized_entropy(
            NextTokenDistribution(branch_distribution(VOCAB_SIZE, BRANCH_A, self.p_short_correct))
        )
        if fork_h < self.fork_entropy_concise:
            raise ConfigError(
                f"infeasible episode: the concise fork distribution tops out at "
                f"normalized entropy {fork_h:.4f} for p_short_correct="
                f"{self.p_short_correct}, below the required floor "
                f"{self.fork_entropy_concise}"
            )

    @property
    def fork_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.segments) if s == FORK)

    def correct_branch(self, seg_idx: int) -> TokenId:
        """Designated correct branch token for a fork segment (alternates)."""
        ordinal = self.fork_indices.index(seg_idx)
        return BRANCH_A + (ordinal % 2)

    @cached_property
    def policy(self) -> "PolicyPair":
        routine = peaked_distribution(VOCAB_SIZE, FILLER, self.routine_entropy)
        long_logits: dict[object, np.ndarray] = {
            _STATE_ROUTINE: np.log(routine),
            _STATE_DELIB: np.log(routine),
        }
        short_logits: dict[object, np.ndarray] = {
            _STATE_ROUTINE: np.log(routine),
            _STATE_DELIB: np.log(routine),
        }
        for correct in (BRANCH_A, BRANCH_B):
            key = ("branch", correct)
            long_logits[key] = np.log(branch_distribution(VOCAB_SIZE, correct, self.p_long_correct))
            short_logits[key] = np.log(branch_distribution(VOCAB_SIZE, correct, self.p_short_correct))
        return PolicyPair(VOCAB_SIZE, long_logits, short_logits)


@dataclass(frozen=True)
class PolicyPair:
    """Per-state logit tables for the long and short policies."""

    vocab_size: int
    long_logits: dict[object, np.ndarray]
    short_logits: dict[object, np.ndarray]

    def __post_init__(self) -> None:
        if set(self.long_logits) != set(self.short_logits):
            raise ConfigError("policies must define logits for the same states")
        for table in (self.long_logits, self.short_logits):
            for key, vec in table.items():
                if vec.shape != (self.vocab_size,):
                    raise ConfigError(f"logit vector for state {key!r} has wrong shape")


def interpolate_logits(
    pair: PolicyPair,
    state: object,
    alpha: float,
    alpha_low: float,
    alpha_high: float,
) -> NextTokenDistribution:
    """Distribution from logits blended between the two policies.

    alpha == alpha_low selects the long (thinking) policy, alpha ==
    alpha_high the short (concise) policy.  Out-of-range alpha is clamped
    with a warning.
    """
    if state not in pair.long_logits:
        raise ConfigError(f"unknown policy state {state!r}")
    w = (alpha - alpha_low) / (alpha_high - alpha_low)
    if w < 0.0 or w > 1.0:
        warnings.warn(
            f"alpha {alpha} outside [{alpha_low}, {alpha_high}]; clamping",
            RuntimeWarning,
            stacklevel=2,
        )
        w = min(1.0, max(0.0, w))
    logits = (1.0 - w) * pair.long_logits[state] + w * pair.short_logits[state]
    z = logits - logits.max()
    probs = np.exp(z)
    return NextTokenDistribution(probs / probs.sum())


class ScriptedSession(BackendSession):
    """Session state machine over one ToyEpisodeSpec.

    Each emission records a checkpoint of the machine position (segment,
    phase, tokens-in-phase); rollback truncates the emitted prefix and
    restores the checkpoint at the cut.  The set of routine segments that
    ever completed is deliberately monotone: it survives rollback, so a
    re-entered routine segment re-renders at short length under either
    policy while forks are always re-deliberated.
    """

    def __init__(self, spec: ToyEpisodeSpec, session_id: int, alpha_low: float, alpha_high: float):
        self.spec = spec
        self.session_id = session_id
        self.alpha_low = alpha_low
        self.alpha_high = alpha_high
        self._prompt_len = 0
        self._emitted: list[tuple[TokenId, bool]] = []  # (token, was_long_policy)
        self._ann: list[tuple[int, str, int]] = []  # (seg, phase, count) after emission
        self._completed_routine: set[int] = set()
        self._seg = 0
        self._phase = self._phase_for(0)
        self._count = 0
        # Endpoint distributions are the hot path; cache them per state.
        self._endpoint: dict[tuple[object, bool], NextTokenDistribution] = {}
        for key in spec.policy.long_logits:
            self._endpoint[(key, True)] = interpolate_logits(
                spec.policy, key, alpha_low, alpha_low, alpha_high
            )
            self._endpoint[(key, False)] = interpolate_logits(
                spec.policy, key, alpha_high, alpha_low, alpha_high
            )

    # -- state machine -------------------------------------------------

    def _phase_for(self, seg: int) -> str:
        if seg >= len(self.spec.segments):
            return "done"
        return ROUTINE if self.spec.segments[seg] == ROUTINE else "delib"

    def _routine_target(self, seg: int, is_long: bool) -> int:
        if seg in self._completed_routine or not is_long:
            return self.spec.routine_len_short
        return self.spec.routine_len_long

    def _advance_segment(self) -> None:
        if self.spec.segments[self._seg] == ROUTINE:
            self._completed_routine.add(self._seg)
        self._seg += 1
        self._phase = self._phase_for(self._seg)
        self._count = 0

    def _normalize(self, is_long: bool) -> None:
        """Advance past any segment/phase satisfied under the active policy."""
        while self._seg < len(self.spec.segments):
            kind = self.spec.segments[self._seg]
            if kind == ROUTINE:
                if self._count >= self._routine_target(self._seg, is_long):
                    self._advance_segment()
                    continue
                return
            if self._phase == "delib":
                target = self.spec.fork_deliberation_len if is_long else 0
                if self._count >= target:
                    self._phase = "branch"
                    self._count = 0
                    continue
                return
            if self._count >= 1:  # branch answered
                self._advance_segment()
                continue
            return

    def _state_key(self) -> object:
        if self.spec.segments[self._seg] == ROUTINE:
            return _STATE_ROUTINE
        if self._phase == "delib":
            return _STATE_DELIB
        return ("branch", self.spec.correct_branch(self._seg))

    def _weight(self, alpha: float) -> float:
        w = (alpha - self.alpha_low) / (self.alpha_high - self.alpha_low)
        return min(1.0, max(0.0, w))

    # -- BackendSession API ----------------------------------------------

    def prefill(self, alpha: float, tokens: list[TokenId]) -> int:
        self._prompt_len += len(tokens)
        return self._prompt_len + len(self._emitted)

    def step(self, alpha: float, temperature: float, seed_draw: int) -> StepResult:
        is_long = self._weight(alpha) < 0.5
        self._normalize(is_long)
        if self._seg >= len(self.spec.segments):
            return StepResult(eos=True)
        key = self._state_key()
        w = self._weight(alpha)
        if w == 0.0 or w == 1.0:
            dist = self._endpoint[(key, w == 0.0)]
        else:
            dist = interpolate_logits(self.spec.policy, key, alpha, self.alpha_low, self.alpha_high)
        token = sample_token(dist.probs, temperature, seed_draw)
        self._emitted.append((token, is_long))
        self._count += 1
        self._ann.append((self._seg, self._phase, self._count))
        return StepResult(token=token, dist=dist, logprob=float(np.log(dist.probs[token])))

    def rollback(self, to_len: int) -> None:
        total = self._prompt_len + len(self._emitted)
        if to_len < self._prompt_len or to_len > total:
            raise BackendError(
                f"rollback to {to_len} outside [{self._prompt_len}, {total}]",
                session_id=self.session_id,
                code="bad_rollback",
            )
        keep = to_len - self._prompt_len
        del self._emitted[keep:]
        del self._ann[keep:]
        if keep:
            self._seg, self._phase, self._count = self._ann[-1]
        else:
            self._seg = 0
            self._phase = self._phase_for(0)
            self._count = 0

    def outcome(self) -> bool:
        """True iff every fork resolved to its designated correct branch."""
        resolved: dict[int, TokenId] = {}
        for (seg, phase, _), (token, _) in zip(self._ann, self._emitted):
            if phase == "branch":
                resolved[seg] = token
        return all(
            resolved.get(seg) == self.spec.correct_branch(seg)
            for seg in self.spec.fork_indices
        )


class ScriptedBackend(ModelBackend):
    """Backend over a fixed ToyEpisodeSpec; every session replays the task."""

    capabilities = BackendCapabilities(
        emits_full_dist=True, kv_invariant_adapter=False, concurrent_sessions=True
    )

    def __init__(self, spec: ToyEpisodeSpec, alpha_low: float = 0.0, alpha_high: float = 1.0):
        self.spec = spec
        self.vocab_size = VOCAB_SIZE
        self.alpha_low = alpha_low
        self.alpha_high = alpha_high
        self._next_id = 0

    def open_session(self) -> ScriptedSession:
        self._next_id += 1
        return ScriptedSession(self.spec, self._next_id, self.alpha_low, self.alpha_high)


def _scenario_specs() -> dict[str, ToyEpisodeSpec]:
    return {
        # Three routine segments then one fork, with a short deliberation so
        # a [trigger-1, trigger+2] window resolves the fork in one pass.
        "S1": ToyEpisodeSpec(
            segments=(ROUTINE, ROUTINE, ROUTINE, FORK),
            p_short_correct=0.55,
            p_long_correct=0.95,
            fork_deliberation_len=2,
        ),
        # Twelve segments, three forks: the cost/accuracy benchmark task.
        "S2": ToyEpisodeSpec(
            segments=(ROUTINE, ROUTINE, ROUTINE, FORK) * 3,
            p_short_correct=0.55,
            p_long_correct=0.95,
        ),
        # All routine, no forks: nothing should ever trigger.
        "S3": ToyEpisodeSpec(
            segments=(ROUTINE,) * 6,
            p_short_correct=0.55,
            p_long_correct=0.95,
        ),
    }


def scenario(name: str) -> ToyEpisodeSpec:
    """Look up a named scripted scenario (S1, S2, S3)."""
    specs = _scenario_specs()
    if name not in specs:
        raise ConfigError(f"unknown scenario {name!r}; available: {sorted(specs)}")
    return specs[name]
