import subprocess
import sys
from pathlib import Path

import pytest

from mixdecode.backends.base import BackendError
from mixdecode.backends.remote import PROTOCOL_VERSION, RemoteBackend

STUB = str(Path(__file__).with_name("stub_backend.py"))


def stub_cmd(*flags):
    return " ".join([sys.executable, STUB, *flags])


@pytest.fixture
def backend():
    b = RemoteBackend(stub_cmd())
    yield b
    b.close()


class TestHandshake:
    def test_protocol_version_pinned(self):
        assert PROTOCOL_VERSION == 1

    def test_capabilities_adopted_from_init(self, backend):
        session = backend.open_session()
        assert backend.vocab_size == 5
        assert backend.capabilities.kv_invariant_adapter
        assert not backend.capabilities.emits_full_dist
        session.close()

    def test_version_mismatch_rejected(self):
        b = RemoteBackend(stub_cmd("--require-protocol", "2"))
        try:
            with pytest.raises(BackendError) as err:
                b.open_session()
            assert err.value.code == "unsupported_protocol"
        finally:
            b.close()

    def test_malformed_init_reply(self):
        b = RemoteBackend(stub_cmd("--bad-init"))
        try:
            with pytest.raises(BackendError, match="malformed init"):
                b.open_session()
        finally:
            b.close()


class TestSessionOps:
    def test_prefill_reports_cached_len(self, backend):
        session = backend.open_session()
        assert session.prefill(1.0, [1, 2, 3]) == 3
        assert session.prefill(1.0, [4]) == 4

    def test_steps_are_position_indexed(self, backend):
        session = backend.open_session()
        session.prefill(1.0, [0, 0])
        r0 = session.step(1.0, 1.0, 7)
        r1 = session.step(1.0, 1.0, 8)
        assert (r0.token, r0.entropy) == (1, 0.30)
        assert (r1.token, r1.entropy) == (2, 0.92)
        assert r0.logprob == pytest.approx(-0.5)

    def test_alpha_changes_the_signal(self, backend):
        session = backend.open_session()
        session.prefill(1.0, [0])
        r = session.step(0.0, 1.0, 7)  # thinking strength
        assert r.token == 2
        assert r.entropy == pytest.approx(0.075)

    def test_eos_after_budget(self, backend):
        session = backend.open_session()
        session.prefill(1.0, [0])
        for _ in range(6):
            assert not session.step(1.0, 1.0, 0).eos
        assert session.step(1.0, 1.0, 0).eos

    def test_rollback_then_replay_same_position(self, backend):
        session = backend.open_session()
        session.prefill(1.0, [0, 0])
        first = [session.step(1.0, 1.0, s) for s in range(3)]
        session.rollback(3)  # keep one generated token
        again = session.step(1.0, 1.0, 99)
        assert (again.token, again.entropy) == (first[1].token, first[1].entropy)

    def test_sessions_are_independent(self, backend):
        a = backend.open_session()
        b = backend.open_session()
        a.prefill(1.0, [0])
        b.prefill(1.0, [0])
        a.step(1.0, 1.0, 0)
        a.step(1.0, 1.0, 1)
        r = b.step(1.0, 1.0, 2)
        assert r.entropy == 0.30  # b is still at its first position

    def test_outcome_is_vacuously_true(self, backend):
        session = backend.open_session()
        assert session.outcome() is True


class TestFailurePaths:
    def test_bad_rollback_code_and_poisoning(self, backend):
        session = backend.open_session()
        session.prefill(1.0, [0, 0])
        with pytest.raises(BackendError) as err:
            session.rollback(1)
        assert err.value.code == "bad_rollback"
        assert err.value.session_id == session.session_id
        with pytest.raises(BackendError, match="poisoned"):
            session.step(1.0, 1.0, 0)

    def test_malformed_reply_poisons_session(self):
        b = RemoteBackend(stub_cmd("--malformed-after", "2"))
        try:
            session = b.open_session()
            session.prefill(1.0, [0])
            with pytest.raises(BackendError, match="malformed response"):
                session.step(1.0, 1.0, 0)
            with pytest.raises(BackendError, match="poisoned"):
                session.prefill(1.0, [0])
        finally:
            b.close()

    def test_out_of_range_entropy_rejected(self):
        b = RemoteBackend(stub_cmd("--entropy-out-of-range"))
        try:
            session = b.open_session()
            session.prefill(1.0, [0])
            with pytest.raises(BackendError, match="outside"):
                session.step(1.0, 1.0, 0)
        finally:
            b.close()

    def test_timeout(self):
        b = RemoteBackend(stub_cmd("--hang-after", "1"), timeout=0.5)
        try:
            session = b.open_session()
            with pytest.raises(BackendError, match="timed out"):
                session.prefill(1.0, [0])
        finally:
            b.close()

    def test_server_exit_detected(self):
        b = RemoteBackend(stub_cmd("--exit-after", "1"))
        try:
            session = b.open_session()
            with pytest.raises(BackendError):
                session.prefill(1.0, [0])
        finally:
            b.close()


class TestTcpTransport:
    def test_socket_channel_round_trip(self):
        proc = subprocess.Popen(
            [sys.executable, STUB, "--tcp"],
            stdout=subprocess.PIPE,
            text=True,
        )
        try:
            port = int(proc.stdout.readline())
            b = RemoteBackend(f"127.0.0.1:{port}", timeout=5.0)
            session = b.open_session()
            session.prefill(1.0, [0])
            r = session.step(1.0, 1.0, 0)
            assert (r.token, r.entropy) == (1, 0.30)
            session.close()
            b.close()
        finally:
            proc.kill()
            proc.wait()
