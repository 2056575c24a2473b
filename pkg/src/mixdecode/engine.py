"""The decode loop: entropy monitoring, windowed rollback, mode annealing.

Each iteration asks the backend for one token under the active mode's
adapter strength and computes the normalized entropy of that step.  A
trigger (concise mode, entropy at or above tau_up, uncovered position)
aborts the step before anything is committed: the engine rolls the kept
sequence back to the window's left edge and regenerates every window
position in thinking mode.  Past the window end the hysteresis rule holds
thinking while entropy stays above tau_down and anneals back to concise
once it drops to or below it.

Accounting rules the rest of the package relies on:

* kept + discarded == compute on every trace (the aborted trigger sample
  is never committed, so it counts toward none of the three);
* rollback truncates the backend prefix and the KV ledger but never
  rewinds the RNG, so regenerated positions draw fresh samples;
* switch prefill costs are logged exactly at generation-mode changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import Action, CoverageMap, apply_decision, mark_covered
from .controller import step as controller_step
from .entropy import normalized_entropy
from .kv_ledger import KVCacheLedger
from .trace import DecodeTrace, DiscardedToken, KeptToken, TraceEvent, event
from .types import ConfigError, EngineConfig, InternalError, Mode, ModeState, TokenId


@dataclass
class SessionState:
    """Mutable engine-side state for one decode session."""

    prompt_len: int
    backend_session: object
    ledger: KVCacheLedger
    cfg: EngineConfig
    kept: list[KeptToken] = field(default_factory=list)
    discarded: list[DiscardedToken] = field(default_factory=list)
    events: list[TraceEvent] = field(default_factory=list)
    mode_state: ModeState = field(default_factory=lambda: ModeState(Mode.CONCISE))
    coverage: CoverageMap = field(default_factory=CoverageMap)
    compute_tokens: int = 0
    last_generation_mode: Mode = Mode.CONCISE


def rollback(state: SessionState, to_pos: int) -> None:
    """Discard kept tokens at positions >= to_pos and truncate caches.

    Moves every dropped token to the discarded list, truncates the backend
    prefix and the KV ledger to prompt_len + to_pos.  The RNG is not
    rewound: regeneration draws fresh samples.  Rolling back to the
    current length is a no-op.
    """
    if to_pos < 0 or to_pos > len(state.kept):
        raise InternalError(f"rollback to {to_pos} outside [0, {len(state.kept)}]")
    for tok in state.kept[to_pos:]:
        state.discarded.append(DiscardedToken(tok.token, tok.pos, tok.mode))
    del state.kept[to_pos:]
    state.backend_session.rollback(state.prompt_len + to_pos)
    state.ledger.truncate(state.prompt_len + to_pos)


def decode(
    prompt: list[TokenId],
    backend,
    cfg: EngineConfig,
    *,
    ledger: KVCacheLedger | None = None,
    session=None,
) -> DecodeTrace:
    """Run one decode session to eos or budget exhaustion.

    Deterministic: identical (prompt, backend spec, cfg) produce an
    identical trace byte-for-byte.  A caller may inject a ledger (e.g. an
    instrumented one) or a pre-opened session; by default both are created
    here, the ledger matching the backend's cache-sharing capability.
    """
    if not prompt:
        raise ConfigError("prompt must be non-empty")
    ctl = cfg.controller
    if session is None:
        session = backend.open_session()
    if ledger is None:
        ledger = KVCacheLedger(
            prompt_len=len(prompt),
            shared=backend.capabilities.kv_invariant_adapter,
        )
    session.prefill(ctl.alpha_high, list(prompt))
    state = SessionState(
        prompt_len=len(prompt), backend_session=session, ledger=ledger, cfg=cfg
    )
    rng = np.random.default_rng(cfg.seed)

    while True:
        pos = len(state.kept)
        if pos >= cfg.max_kept_tokens:
            state.events.append(event("budget_stop", pos=pos, limit="kept"))
            break
        if state.compute_tokens >= cfg.max_compute_tokens:
            state.events.append(event("budget_stop", pos=pos, limit="compute"))
            break
        mode = state.mode_state.mode
        if mode is not state.last_generation_mode:
            cost = ledger.on_switch(mode, state.prompt_len + pos)
            state.events.append(event("prefill", mode=mode, n_tokens=cost))
            state.last_generation_mode = mode

        seed_draw = int(rng.integers(0, 2**64, dtype=np.uint64))
        result = session.step(ctl.alpha_for(mode), cfg.temperature, seed_draw)
        if result.eos:
            if state.mode_state.in_window:
                state.events.append(event("window_close", pos=pos, reason="eos"))
            state.events.append(event("eos", pos=pos))
            break

        if result.dist is not None:
            entropy = normalized_entropy(result.dist)
        elif result.entropy is not None:
            entropy = min(1.0, max(0.0, float(result.entropy)))
        else:
            raise InternalError("backend returned neither distribution nor entropy")

        decision = controller_step(state.mode_state, entropy, pos, ctl, state.coverage)
        if decision.action is Action.OPEN_WINDOW:
            left, right = decision.window
            state.events.append(event("trigger", pos=pos, entropy=entropy))
            state.events.append(event("window_open", left=left, right=right))
            rollback(state, left)  # also wipes the uncommitted trigger sample
            mark_covered(state.coverage, left, right)
            state.mode_state = ModeState(Mode.THINKING, in_window=True, window_end=right)
            continue

        state.kept.append(KeptToken(pos, result.token, mode, entropy, ctl.alpha_for(mode)))
        state.compute_tokens += 1
        ledger.on_generate(mode, 1)

        if decision.action is Action.CLOSE_WINDOW:
            state.events.append(event("window_close", pos=pos, reason="end"))
            if decision.next_mode is Mode.CONCISE:
                state.events.append(event("anneal", pos=pos + 1))
        elif decision.action is Action.ANNEAL:
            state.events.append(event("anneal", pos=pos + 1))
        state.mode_state = apply_decision(state.mode_state, decision)

    session.close()
    if state.compute_tokens != len(state.kept) + len(state.discarded):
        raise InternalError("accounting identity violated: kept + discarded != compute")
    trace = DecodeTrace(
        prompt_len=state.prompt_len,
        vocab_size=backend.vocab_size,
        seed=cfg.seed,
        kept=state.kept,
        discarded=state.discarded,
        events=state.events,
        switches=ledger.switches,
        total_prefill_tokens=ledger.total_prefill_tokens,
    )
    trace.validate()
    return trace


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one episode: the trace plus headline numbers."""

    trace: DecodeTrace
    correct: bool
    kept_tokens: int
    compute_tokens: int
    thinking_coverage: float

    @property
    def overhead_ratio(self) -> float:
        return self.trace.overhead_ratio()


def run_episode(task, backend, cfg: EngineConfig, prompt: list[TokenId] | None = None) -> EpisodeResult:
    """Decode one episode and score it.

    Either pass a ToyEpisodeSpec as task (a scripted backend is built from
    it) or an already-constructed backend.  Backends without ground truth
    (replay, remote) report correct == True vacuously.
    """
    if backend is None:
        if task is None:
            raise ConfigError("need a task or a backend")
        from .backends.scripted import ScriptedBackend

        backend = ScriptedBackend(task, cfg.controller.alpha_low, cfg.controller.alpha_high)
    if prompt is None:
        prompt = [0, 0, 0, 0]
    session = backend.open_session()
    trace = decode(prompt, backend, cfg, session=session)
    correct = session.outcome()
    return EpisodeResult(
        trace=trace,
        correct=correct,
        kept_tokens=trace.kept_tokens,
        compute_tokens=trace.compute_tokens,
        thinking_coverage=trace.thinking_coverage,
    )


def relabel_modes(trace: DecodeTrace, cfg: EngineConfig) -> list[Mode]:
    """Re-derive per-token modes from a trace's entropies and window events.

    Replays the controller transitions over the kept entropy sequence,
    entering windows where the event log recorded them.  A well-formed
    trace relabels to exactly its recorded mode annotations.
    """
    ctl = cfg.controller
    window_opens = [
        (e.fields["left"], e.fields["right"])
        for e in trace.events
        if e.kind == "window_open"
    ]
    opens = iter(window_opens)
    next_open = next(opens, None)
    labels: list[Mode] = []
    mode = Mode.CONCISE
    window_end: int | None = None
    for tok in trace.kept:
        pos = tok.pos
        if next_open is not None and pos == next_open[0]:
            mode = Mode.THINKING
            window_end = next_open[1]
            next_open = next(opens, None)
        labels.append(mode)
        h = tok.entropy
        if window_end is not None:
            if pos >= window_end:
                window_end = None
                mode = Mode.THINKING if h > ctl.tau_down else Mode.CONCISE
        elif mode is Mode.THINKING and h <= ctl.tau_down:
            mode = Mode.CONCISE
    return labels
