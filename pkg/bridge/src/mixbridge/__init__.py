"""Model bridge: serves an adapter-scaled causal LM over the line protocol."""

from .model import StubModel, load_model
from .server import Bridge, BridgeConfig, PROTOCOL_VERSION, serve

__all__ = [
    "Bridge",
    "BridgeConfig",
    "PROTOCOL_VERSION",
    "StubModel",
    "load_model",
    "serve",
]

__version__ = "0.1.0"
