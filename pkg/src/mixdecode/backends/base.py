"""Backend interface the decode engine drives.

A backend owns the model (or stand-in) and its per-session prefix state;
the engine owns the controller, budgets, RNG schedule and accounting.  A
session's prefix is prompt plus generated tokens; rollback truncates it to
an absolute length.  Backends that do not expose a full next-token
distribution must report normalized entropy themselves.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

from ..types import NextTokenDistribution, TokenId


@dataclass(frozen=True)
class BackendCapabilities:
    emits_full_dist: bool
    kv_invariant_adapter: bool
    concurrent_sessions: bool


@dataclass
class StepResult:
    """One generation step: the sampled token plus its uncertainty signal.

    Exactly one of dist / entropy is populated for non-eos results,
    according to the backend's emits_full_dist capability.  eos results
    carry no token (the step produced no countable output).
    """

    token: TokenId = -1
    eos: bool = False
    dist: NextTokenDistribution | None = None
    entropy: float | None = None
    logprob: float = 0.0


class BackendError(RuntimeError):
    """Backend or protocol failure; carries the offending session id."""

    def __init__(self, message: str, session_id: object = None, code: str | None = None):
        super().__init__(message)
        self.session_id = session_id
        self.code = code


class BackendSession(ABC):
    """One decoding session against a backend."""

    session_id: object

    @abstractmethod
    def prefill(self, alpha: float, tokens: list[TokenId]) -> int:
        """Append tokens to the prefix under strength alpha; return cached length."""

    @abstractmethod
    def step(self, alpha: float, temperature: float, seed_draw: int) -> StepResult:
        """Generate one token under strength alpha and extend the prefix."""

    @abstractmethod
    def rollback(self, to_len: int) -> None:
        """Truncate the prefix (prompt included) to absolute length to_len."""

    def close(self) -> None:
        return None

    def outcome(self) -> bool:
        """Episode verdict for the kept prefix.

        Scripted sessions judge fork resolutions; backends with no ground
        truth (replay, remote) report vacuous success.
        """
        return True


class ModelBackend(ABC):
    """Factory for sessions plus static capability/vocabulary metadata."""

    capabilities: BackendCapabilities
    vocab_size: int

    @abstractmethod
    def open_session(self) -> BackendSession:
        ...

    def close(self) -> None:
        return None
