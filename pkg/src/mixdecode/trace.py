"""Decode traces: per-token records, event log, and the wire text format.

A trace records everything needed to audit a decode: every kept token with
the mode and normalized entropy observed when it was generated, every
discarded token, the ordered event log (triggers, window opens/closes,
prefills, anneals, eos, budget stops), and the KV ledger totals.

Serialized format (exact; one record per line, floats rendered with
Python's repr so they round-trip bit-exactly):

    mixdecode-trace v1
    prompt_len=<int> vocab_size=<int> seed=<int>
    token pos=<int> token=<int> mode=<thinking|concise> entropy=<float> alpha=<float>
    ...                         (one line per kept token, in position order)
    events
    trigger pos=<int> entropy=<float>
    window_open left=<int> right=<int>
    prefill mode=<thinking|concise> n_tokens=<int>
    window_close pos=<int> reason=<end|eos>
    anneal pos=<int>
    eos pos=<int>
    budget_stop pos=<int> limit=<kept|compute>
    summary kept=<int> discarded=<int> compute=<int> thinking_kept=<int> switches=<int> prefill_tokens=<int>
    end
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .types import InternalError, Mode

FORMAT_HEADER = "mixdecode-trace v1"

# Field order per event kind, used for serialization and validation.
_EVENT_FIELDS = {
    "trigger": ("pos", "entropy"),
    "window_open": ("left", "right"),
    "prefill": ("mode", "n_tokens"),
    "window_close": ("pos", "reason"),
    "anneal": ("pos",),
    "eos": ("pos",),
    "budget_stop": ("pos", "limit"),
}

_TERMINAL_EVENTS = ("eos", "budget_stop")


@dataclass(frozen=True, slots=True)
class KeptToken:
    pos: int
    token: int
    mode: Mode
    entropy: float
    alpha: float


@dataclass(frozen=True, slots=True)
class DiscardedToken:
    token: int
    pos: int
    mode: Mode


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    fields: dict[str, object]

    def __post_init__(self) -> None:
        expected = _EVENT_FIELDS.get(self.kind)
        if expected is None:
            raise InternalError(f"unknown event kind {self.kind!r}")
        if tuple(self.fields) != expected:
            raise InternalError(f"{self.kind} event needs fields {expected}, got {tuple(self.fields)}")


def event(kind: str, **fields: object) -> TraceEvent:
    return TraceEvent(kind, fields)


@dataclass
class DecodeTrace:
    """Complete record of one decode session (prompt excluded)."""

    prompt_len: int
    vocab_size: int
    seed: int
    kept: list[KeptToken] = field(default_factory=list)
    discarded: list[DiscardedToken] = field(default_factory=list)
    events: list[TraceEvent] = field(default_factory=list)
    switches: int = 0
    total_prefill_tokens: int = 0

    # -- derived quantities ------------------------------------------------

    @property
    def kept_tokens(self) -> int:
        return len(self.kept)

    @property
    def compute_tokens(self) -> int:
        return len(self.kept) + len(self.discarded)

    @property
    def thinking_kept(self) -> int:
        return sum(1 for t in self.kept if t.mode is Mode.THINKING)

    @property
    def thinking_coverage(self) -> float:
        """Fraction of kept tokens generated in thinking mode."""
        if not self.kept:
            return 0.0
        return self.thinking_kept / len(self.kept)

    def overhead_ratio(self, discount: float = 0.05) -> float:
        work = discount * self.total_prefill_tokens
        denom = work + self.compute_tokens
        return 0.0 if denom == 0 else work / denom

    def validate(self) -> None:
        """Assert structural invariants; raises InternalError on violation."""
        for i, tok in enumerate(self.kept):
            if tok.pos != i:
                raise InternalError(f"kept positions not consecutive at index {i}")
            if not (0.0 <= tok.entropy <= 1.0):
                raise InternalError(f"entropy {tok.entropy} outside [0, 1] at pos {i}")
        opens = sum(1 for e in self.events if e.kind == "window_open")
        closes = sum(1 for e in self.events if e.kind == "window_close")
        terminated = bool(self.events) and self.events[-1].kind in _TERMINAL_EVENTS
        if opens != closes and not terminated:
            raise InternalError("window_open without matching window_close or terminal event")
        if opens < closes:
            raise InternalError("more window_close events than window_open")
        if not terminated and self.events:
            raise InternalError("trace must end with eos or budget_stop")

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        lines = [FORMAT_HEADER]
        lines.append(
            f"prompt_len={self.prompt_len} vocab_size={self.vocab_size} seed={self.seed}"
        )
        for t in self.kept:
            lines.append(
                f"token pos={t.pos} token={t.token} mode={t.mode} "
                f"entropy={t.entropy!r} alpha={t.alpha!r}"
            )
        lines.append("events")
        for e in self.events:
            parts = [e.kind]
            for name in _EVENT_FIELDS[e.kind]:
                parts.append(f"{name}={_render(e.fields[name])}")
            lines.append(" ".join(parts))
        lines.append(
            f"summary kept={self.kept_tokens} discarded={len(self.discarded)} "
            f"compute={self.compute_tokens} thinking_kept={self.thinking_kept} "
            f"switches={self.switches} prefill_tokens={self.total_prefill_tokens}"
        )
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DecodeTrace":
        lines = text.splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValueError("not a mixdecode trace")
        head = _parse_kv(lines[1])
        trace = cls(
            prompt_len=int(head["prompt_len"]),
            vocab_size=int(head["vocab_size"]),
            seed=int(head["seed"]),
        )
        i = 2
        while i < len(lines) and lines[i] != "events":
            kind, kv = _parse_record(lines[i])
            if kind != "token":
                raise ValueError(f"unexpected record {kind!r} before events block")
            trace.kept.append(
                KeptToken(
                    pos=int(kv["pos"]),
                    token=int(kv["token"]),
                    mode=Mode(kv["mode"]),
                    entropy=float(kv["entropy"]),
                    alpha=float(kv["alpha"]),
                )
            )
            i += 1
        if i == len(lines):
            raise ValueError("missing events block")
        i += 1
        for line in lines[i:]:
            if line == "end":
                break
            kind, kv = _parse_record(line)
            if kind == "summary":
                trace.switches = int(kv["switches"])
                trace.total_prefill_tokens = int(kv["prefill_tokens"])
                n_disc = int(kv["discarded"])
                # Discarded token identities are not serialized; keep counts
                # consistent for compute accounting on round-trip.
                trace.discarded = [DiscardedToken(-1, -1, Mode.CONCISE)] * n_disc
                continue
            fields: dict[str, object] = {}
            for name in _EVENT_FIELDS[kind]:
                raw = kv[name]
                if name == "mode":
                    fields[name] = Mode(raw)
                elif name == "entropy":
                    fields[name] = float(raw)
                elif name in ("reason", "limit"):
                    fields[name] = raw
                else:
                    fields[name] = int(raw)
            trace.events.append(TraceEvent(kind, fields))
        return trace


def _render(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_kv(line: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in line.split():
        key, _, val = part.partition("=")
        out[key] = val
    return out


def _parse_record(line: str) -> tuple[str, dict[str, str]]:
    head, _, rest = line.partition(" ")
    return head, _parse_kv(rest)
