"""Line-protocol server: one JSON object per line over stdio.

Message shapes (requests left, responses right):

    {"op":"init","session":S,"protocol":1}
        -> {"ok":true,"capabilities":{...},"vocab_size":V}
    {"op":"prefill","session":S,"alpha":A,"tokens":[...]}
        -> {"ok":true,"cached_len":N}
    {"op":"step","session":S,"alpha":A,"temperature":T,"seed_draw":D}
        -> {"ok":true,"token":X,"entropy":H,"logprob":L,"eos":false}
        -> {"ok":true,"eos":true}
    {"op":"rollback","session":S,"to_len":N}    -> {"ok":true}
    {"op":"close","session":S}                  -> {"ok":true}

Every failure is answered in-band with {"ok":false,"code":...}; a bad
message never kills the stream.  Reported entropy is the normalized
entropy of the full next-token distribution under the requested strength,
computed before temperature is applied; logprob is the sampled token's
log probability under that same distribution.  Floats are rounded to nine
decimals so transcripts are stable.

State per session is the token prefix plus cached K/V rows.  A strength
change invalidates the K/V cache unless the adapter leaves the attention
projections untouched (targets="mlp"), in which case switching is free;
the init capability kv_invariant_adapter reports which case holds.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .model import TARGET_CHOICES, StubModel, load_model

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class BridgeConfig:
    """Launch-time configuration of the bridge process."""

    model_id: str = "stub:tiny"
    adapter_id: str = "builtin"
    device: str = "cpu"
    max_sessions: int = 8
    entropy_mode: str = "full"
    targets: str = "all"

    def __post_init__(self) -> None:
        if self.device != "cpu":
            raise ValueError("only device=cpu is supported")
        if self.max_sessions < 1:
            raise ValueError("max_sessions must be >= 1")
        if self.entropy_mode != "full":
            raise ValueError("only entropy_mode=full is supported")
        if self.targets not in TARGET_CHOICES:
            raise ValueError(f"targets must be one of {TARGET_CHOICES}")


@dataclass
class _Session:
    """Prefix tokens plus the K/V rows cached for them.

    Embeddings depend only on token and position, so they survive strength
    changes unconditionally; K/V rows are tied to cached_alpha and get
    recomputed on a strength change unless the adapter is attention-free.
    """

    model: StubModel
    tokens: list[int] = field(default_factory=list)
    xs: list[np.ndarray] = field(default_factory=list)
    keys: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    floor: int = 0  # rollback cannot cut into prefilled prompt
    cached_alpha: float | None = None

    def ensure_alpha(self, alpha: float) -> None:
        if self.cached_alpha is None:
            self.cached_alpha = alpha
            return
        if alpha == self.cached_alpha:
            return
        if not self.model.kv_invariant:
            # Full re-prefill of the attention cache under the new strength.
            self.keys = []
            self.values = []
            for x in self.xs:
                k, v = self.model.kv_row(x, alpha)
                self.keys.append(k)
                self.values.append(v)
        self.cached_alpha = alpha

    def append(self, token: int) -> None:
        x = self.model.embed(token, len(self.tokens))
        k, v = self.model.kv_row(x, self.cached_alpha)
        self.tokens.append(token)
        self.xs.append(x)
        self.keys.append(k)
        self.values.append(v)

    def truncate(self, to_len: int) -> None:
        del self.tokens[to_len:]
        del self.xs[to_len:]
        del self.keys[to_len:]
        del self.values[to_len:]

    def next_distribution(self) -> np.ndarray:
        logits = self.model.logits(
            self.xs[-1],
            np.stack(self.keys),
            np.stack(self.values),
            self.cached_alpha,
        )
        return self.model.dist(logits)


class Bridge:
    """Request dispatcher over a session registry; one model, serialized."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        self.model = load_model(config.model_id, config.adapter_id, config.targets)
        self.sessions: dict[object, _Session] = {}

    def handle(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            return {"ok": False, "code": "bad_message"}
        if not isinstance(msg, dict) or not isinstance(msg.get("op"), str):
            return {"ok": False, "code": "bad_message"}
        op = msg["op"]
        sid = msg.get("session")
        if op == "init":
            return self._init(sid, msg)
        session = self.sessions.get(sid)
        if session is None:
            return {"ok": False, "code": "no_such_session"}
        try:
            if op == "prefill":
                return self._prefill(session, msg)
            if op == "step":
                return self._step(session, msg)
            if op == "rollback":
                return self._rollback(session, msg)
            if op == "close":
                del self.sessions[sid]
                return {"ok": True}
        except (KeyError, TypeError, ValueError):
            return {"ok": False, "code": "bad_request"}
        return {"ok": False, "code": "unknown_op"}

    def _init(self, sid, msg) -> dict:
        if msg.get("protocol") != PROTOCOL_VERSION:
            return {"ok": False, "code": "unsupported_protocol"}
        if sid not in self.sessions and len(self.sessions) >= self.config.max_sessions:
            return {"ok": False, "code": "too_many_sessions"}
        self.sessions[sid] = _Session(model=self.model)
        return {
            "ok": True,
            "capabilities": {
                "emits_full_dist": False,
                "kv_invariant_adapter": self.model.kv_invariant,
                "concurrent_sessions": True,
            },
            "vocab_size": self.model.vocab_size,
        }

    def _prefill(self, session: _Session, msg) -> dict:
        alpha = float(msg["alpha"])
        tokens = msg["tokens"]
        if not isinstance(tokens, list):
            return {"ok": False, "code": "bad_request"}
        # Validate the whole batch up front; a rejected request must not
        # leave the session half-extended.
        validated = []
        for t in tokens:
            token = int(t)
            if not (0 <= token < self.model.vocab_size):
                return {"ok": False, "code": "bad_request"}
            validated.append(token)
        session.ensure_alpha(alpha)
        at_prompt_edge = len(session.tokens) == session.floor
        for token in validated:
            session.append(token)
        if at_prompt_edge:
            session.floor += len(validated)
        return {"ok": True, "cached_len": len(session.tokens)}

    def _step(self, session: _Session, msg) -> dict:
        if not session.tokens:
            return {"ok": False, "code": "empty_prefix"}
        alpha = float(msg["alpha"])
        temperature = float(msg["temperature"])
        seed_draw = int(msg["seed_draw"])
        if temperature < 0.0 or seed_draw < 0:
            return {"ok": False, "code": "bad_request"}
        session.ensure_alpha(alpha)
        probs = session.next_distribution()
        token = self.model.sample(probs, temperature, seed_draw)
        if token == self.model.eos_token:
            return {"ok": True, "eos": True}
        entropy = self.model.normalized_entropy(probs)
        logprob = float(math.log(probs[token]))
        session.append(token)
        return {
            "ok": True,
            "token": token,
            "entropy": round(entropy, 9),
            "logprob": round(logprob, 9),
            "eos": False,
        }

    def _rollback(self, session: _Session, msg) -> dict:
        to_len = msg.get("to_len")
        # bool is an int subclass; a JSON true/false is not a length.
        if (
            not isinstance(to_len, int)
            or isinstance(to_len, bool)
            or to_len < session.floor
            or to_len > len(session.tokens)
        ):
            return {"ok": False, "code": "bad_rollback"}
        session.truncate(to_len)
        return {"ok": True}


def serve(config: BridgeConfig, rfile=None, wfile=None) -> None:
    """Answer requests line by line until the input stream closes."""
    rfile = sys.stdin if rfile is None else rfile
    wfile = sys.stdout if wfile is None else wfile
    bridge = Bridge(config)
    for line in rfile:
        if not line.strip():
            continue
        reply = bridge.handle(line)
        wfile.write(json.dumps(reply, separators=(",", ":")) + "\n")
        wfile.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mixbridge",
        description="Serve an adapter-scaled language model over the line protocol.",
    )
    parser.add_argument("--model", default="stub:tiny", help="model identifier")
    parser.add_argument("--adapter", default="builtin", help="adapter identifier")
    parser.add_argument("--targets", default="all", choices=list(TARGET_CHOICES),
                        help="adapter placement; mlp leaves attention caches strength-invariant")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-sessions", type=int, default=8)
    parser.add_argument("--entropy-mode", default="full")
    args = parser.parse_args(argv)
    try:
        config = BridgeConfig(
            model_id=args.model,
            adapter_id=args.adapter,
            device=args.device,
            max_sessions=args.max_sessions,
            entropy_mode=args.entropy_mode,
            targets=args.targets,
        )
        serve(config)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
