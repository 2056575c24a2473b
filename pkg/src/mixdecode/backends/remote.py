"""Client for external model servers speaking the line-delimited protocol.

Transport is either the stdio of a child process or a TCP socket.  Every
message is one JSON object per line, UTF-8, floats as decimal text.
Requests carry an "op" plus a session id; the client awaits exactly one
response line per request.  Field names and ordering used on the wire:

    {"op":"init","session":S,"protocol":1}
        -> {"ok":true,"capabilities":{...},"vocab_size":V}
    {"op":"prefill","session":S,"alpha":A,"tokens":[...]}
        -> {"ok":true,"cached_len":N}
    {"op":"step","session":S,"alpha":A,"temperature":T,"seed_draw":D}
        -> {"ok":true,"token":X,"entropy":H,"logprob":L,"eos":false}
    {"op":"rollback","session":S,"to_len":N}
        -> {"ok":true} | {"ok":false,"code":"bad_rollback"}
    {"op":"close","session":S}
        -> {"ok":true}

Unknown fields in responses are ignored.  A malformed response, timeout,
eof, or protocol version mismatch raises BackendError and poisons the
session: it cannot continue, because client and server state may have
diverged.
"""

from __future__ import annotations

import json
import os
import re
import selectors
import shlex
import socket
import subprocess

from ..types import TokenId
from .base import BackendCapabilities, BackendError, BackendSession, ModelBackend, StepResult

PROTOCOL_VERSION = 1
_ADDRESS_RE = re.compile(r"^[A-Za-z0-9_.\-]+:\d+$")


def _encode(payload: dict) -> bytes:
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")


class _PipeChannel:
    """Line transport over a child process's stdin/stdout."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,  # server diagnostics pass through
        )
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def request_line(self, data: bytes, timeout: float) -> bytes:
        if self.proc.poll() is not None:
            raise BackendError("backend process has exited")
        self.proc.stdin.write(data)
        self.proc.stdin.flush()
        while b"\n" not in self._buf:
            if not self._sel.select(timeout):
                raise BackendError(f"backend timed out after {timeout}s")
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise BackendError("backend closed its output stream")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        self._sel.close()
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except Exception:
                self.proc.kill()


class _SocketChannel:
    """Line transport over a TCP connection."""

    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port))
        self._buf = b""

    def request_line(self, data: bytes, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        self.sock.sendall(data)
        while b"\n" not in self._buf:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise BackendError(f"backend timed out after {timeout}s") from None
            if not chunk:
                raise BackendError("backend closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        self.sock.close()


class RemoteSession(BackendSession):
    def __init__(self, backend: "RemoteBackend", session_id: int):
        self.backend = backend
        self.session_id = session_id
        self.poisoned = False

    def _request(self, payload: dict) -> dict:
        if self.poisoned:
            raise BackendError(
                "session is poisoned by an earlier protocol failure",
                session_id=self.session_id,
            )
        try:
            reply = self.backend._request(payload)
        except BackendError as err:
            self.poisoned = True
            err.session_id = self.session_id
            raise
        if not reply.get("ok", False):
            self.poisoned = True
            code = reply.get("code")
            raise BackendError(
                f"backend refused {payload.get('op')}: {code}",
                session_id=self.session_id,
                code=code,
            )
        return reply

    def init(self) -> dict:
        reply = self._request(
            {"op": "init", "session": self.session_id, "protocol": PROTOCOL_VERSION}
        )
        caps = reply.get("capabilities")
        vocab = reply.get("vocab_size")
        if not isinstance(caps, dict) or not isinstance(vocab, int) or vocab < 2:
            self.poisoned = True
            raise BackendError("malformed init response", session_id=self.session_id)
        return reply

    def prefill(self, alpha: float, tokens: list[TokenId]) -> int:
        reply = self._request(
            {
                "op": "prefill",
                "session": self.session_id,
                "alpha": float(alpha),
                "tokens": [int(t) for t in tokens],
            }
        )
        return int(reply["cached_len"])

    def step(self, alpha: float, temperature: float, seed_draw: int) -> StepResult:
        reply = self._request(
            {
                "op": "step",
                "session": self.session_id,
                "alpha": float(alpha),
                "temperature": float(temperature),
                "seed_draw": int(seed_draw),
            }
        )
        if reply.get("eos", False):
            return StepResult(eos=True)
        try:
            token = int(reply["token"])
            entropy = float(reply["entropy"])
            logprob = float(reply["logprob"])
        except (KeyError, TypeError, ValueError):
            self.poisoned = True
            raise BackendError("malformed step response", session_id=self.session_id) from None
        if not (0.0 <= entropy <= 1.0):
            self.poisoned = True
            raise BackendError(
                f"step entropy {entropy} outside [0, 1]", session_id=self.session_id
            )
        return StepResult(token=token, entropy=entropy, logprob=logprob)

    def rollback(self, to_len: int) -> None:
        self._request({"op": "rollback", "session": self.session_id, "to_len": int(to_len)})

    def close(self) -> None:
        if self.poisoned:
            return
        try:
            self._request({"op": "close", "session": self.session_id})
        except BackendError:
            pass


class RemoteBackend(ModelBackend):
    """Connects to a protocol server given 'host:port' or a command line."""

    def __init__(self, target: str, timeout: float = 30.0):
        self.target = target
        self.timeout = timeout
        self.capabilities = BackendCapabilities(
            emits_full_dist=False, kv_invariant_adapter=False, concurrent_sessions=False
        )
        self.vocab_size = 2
        self._next_id = 0
        if _ADDRESS_RE.match(target):
            host, port = target.rsplit(":", 1)
            self._channel = _SocketChannel(host, int(port))
        else:
            self._channel = _PipeChannel(target)

    def _request(self, payload: dict) -> dict:
        line = self._channel.request_line(_encode(payload), self.timeout)
        try:
            reply = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise BackendError(f"malformed response line: {line[:200]!r}") from None
        if not isinstance(reply, dict):
            raise BackendError("response is not a JSON object")
        return reply

    def open_session(self) -> RemoteSession:
        self._next_id += 1
        session = RemoteSession(self, self._next_id)
        reply = session.init()
        caps = reply["capabilities"]
        self.capabilities = BackendCapabilities(
            emits_full_dist=bool(caps.get("emits_full_dist", False)),
            kv_invariant_adapter=bool(caps.get("kv_invariant_adapter", False)),
            concurrent_sessions=bool(caps.get("concurrent_sessions", False)),
        )
        self.vocab_size = int(reply["vocab_size"])
        return session

    def close(self) -> None:
        self._channel.close()
