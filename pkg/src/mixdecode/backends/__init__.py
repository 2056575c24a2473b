"""Model backends: deterministic in-process doubles and a protocol client."""

from .base import (
    BackendCapabilities,
    BackendError,
    BackendSession,
    ModelBackend,
    StepResult,
)
from .replay import ReplayBackend, load_entropy_trace, replay_coverage, replay_triggers
from .remote import PROTOCOL_VERSION, RemoteBackend
from .scripted import ScriptedBackend, ToyEpisodeSpec, scenario

__all__ = [
    "BackendCapabilities",
    "BackendError",
    "BackendSession",
    "ModelBackend",
    "StepResult",
    "ReplayBackend",
    "load_entropy_trace",
    "replay_coverage",
    "replay_triggers",
    "PROTOCOL_VERSION",
    "RemoteBackend",
    "ScriptedBackend",
    "ToyEpisodeSpec",
    "scenario",
]
