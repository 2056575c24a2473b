"""mixdecode: entropy-triggered mode-switching decoding with rollback windows.

A decoding controller watches the normalized entropy of each next-token
distribution.  When it crosses a trigger threshold, the engine rolls back
a bounded window, regenerates it in a deliberate ("thinking") mode driven
by a different adapter strength, and anneals back to the concise mode once
uncertainty subsides.  A cache ledger prices every switch so the prefill
overhead of mode changes is observable.
"""

from .controller import (
    Action,
    ControllerDecision,
    CoverageMap,
    apply_decision,
    label_modes,
    mark_covered,
    open_window,
    step,
)
from .engine import EpisodeResult, decode, relabel_modes, run_episode
from .entropy import normalized_entropy
from .kv_ledger import KVCacheLedger
from .metrics import CSV_HEADER, SweepResult, aggregate, pareto_table, to_csv
from .sampling import sample_token
from .trace import DecodeTrace, DiscardedToken, KeptToken, TraceEvent, event
from .types import (
    AdapterStrength,
    ConfigError,
    ControllerConfig,
    DistributionError,
    EngineConfig,
    InternalError,
    Mode,
    ModeState,
    NextTokenDistribution,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AdapterStrength",
    "CSV_HEADER",
    "ConfigError",
    "ControllerConfig",
    "ControllerDecision",
    "CoverageMap",
    "DecodeTrace",
    "DiscardedToken",
    "DistributionError",
    "EngineConfig",
    "EpisodeResult",
    "InternalError",
    "KVCacheLedger",
    "KeptToken",
    "Mode",
    "ModeState",
    "NextTokenDistribution",
    "SweepResult",
    "TraceEvent",
    "aggregate",
    "apply_decision",
    "decode",
    "event",
    "label_modes",
    "mark_covered",
    "normalized_entropy",
    "open_window",
    "pareto_table",
    "relabel_modes",
    "run_episode",
    "sample_token",
    "step",
    "to_csv",
]
