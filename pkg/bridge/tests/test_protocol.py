"""Wire-protocol behavior of the server process.

Every test drives a real subprocess through stdin/stdout; nothing here
reaches into server internals.
"""

import json
import subprocess

import pytest

from wireclient import BridgeProc, server_cmd, transcript_pairs


@pytest.fixture()
def bridge():
    with BridgeProc("--model", "stub:tiny") as proc:
        yield proc


class TestGoldenTranscript:
    def test_replay_is_byte_exact(self, bridge):
        pairs = transcript_pairs()
        assert len(pairs) >= 20
        for i, (request, expected) in enumerate(pairs):
            reply = bridge.send_raw(request)
            assert reply == expected, f"exchange {i}: {request!r}"

    def test_transcript_covers_the_error_codes(self):
        codes = {
            json.loads(reply)["code"]
            for _, reply in transcript_pairs()
            if not json.loads(reply)["ok"]
        }
        assert codes >= {
            "bad_message",
            "unsupported_protocol",
            "no_such_session",
            "unknown_op",
            "bad_request",
            "bad_rollback",
            "empty_prefix",
        }


class TestInit:
    def test_capabilities_default_placement(self, bridge):
        reply = bridge.init()
        assert reply["ok"] is True
        assert reply["vocab_size"] == 13
        assert reply["capabilities"] == {
            "emits_full_dist": False,
            "kv_invariant_adapter": False,
            "concurrent_sessions": True,
        }

    def test_capabilities_mlp_placement(self):
        with BridgeProc("--targets", "mlp") as proc:
            reply = proc.init()
            assert reply["capabilities"]["kv_invariant_adapter"] is True

    def test_protocol_version_pinned(self, bridge):
        assert bridge.init(protocol=2)["code"] == "unsupported_protocol"
        assert bridge.send(op="init", session="s")["code"] == "unsupported_protocol"

    def test_session_cap(self):
        with BridgeProc("--max-sessions", "1") as proc:
            assert proc.init(session="a")["ok"] is True
            assert proc.init(session="b")["code"] == "too_many_sessions"
            # Re-initializing a live session does not count against the cap.
            assert proc.init(session="a")["ok"] is True

    def test_reinit_resets_the_session(self, bridge):
        bridge.init()
        bridge.prefill([1, 2])
        bridge.init()
        assert bridge.step()["code"] == "empty_prefix"


class TestSessionOps:
    def test_prefill_extends_and_reports_length(self, bridge):
        bridge.init()
        assert bridge.prefill([1, 2, 3])["cached_len"] == 3
        assert bridge.prefill([4])["cached_len"] == 4

    def test_failed_prefill_leaves_state_untouched(self, bridge):
        bridge.init()
        bridge.prefill([1, 2])
        assert bridge.prefill([5, 99])["code"] == "bad_request"
        assert bridge.prefill([])["cached_len"] == 2

    def test_rollback_edges(self, bridge):
        bridge.init()
        bridge.prefill([1, 2])
        for _ in range(3):
            assert bridge.step()["ok"] is True
        assert bridge.rollback(5)["ok"] is True
        assert bridge.rollback(6)["code"] == "bad_rollback"  # beyond prefix
        assert bridge.rollback(1)["code"] == "bad_rollback"  # below prompt floor
        assert bridge.rollback(-1)["code"] == "bad_rollback"
        assert bridge.rollback("2")["code"] == "bad_rollback"
        assert bridge.rollback(True)["code"] == "bad_rollback"  # bool is not a length
        assert bridge.send(op="rollback", session="s")["code"] == "bad_rollback"
        assert bridge.rollback(2)["ok"] is True

    def test_rollback_to_prompt_keeps_prompt_protected(self, bridge):
        # The floor covers only prompt prefills; tokens added after generation
        # starts are ordinary prefix and may be rolled away.
        bridge.init()
        bridge.prefill([1, 2])
        bridge.step()
        bridge.prefill([3])
        assert bridge.rollback(2)["ok"] is True
        assert bridge.rollback(1)["code"] == "bad_rollback"

    def test_step_requires_prefix_and_valid_fields(self, bridge):
        bridge.init()
        assert bridge.step()["code"] == "empty_prefix"
        bridge.prefill([1])
        assert bridge.send(op="step", session="s", alpha=0.0)["code"] == "bad_request"
        assert bridge.step(temperature=-0.5)["code"] == "bad_request"
        assert bridge.step(seed_draw=-1)["code"] == "bad_request"
        assert bridge.step(alpha="high")["code"] == "bad_request"

    def test_step_reply_shape(self, bridge):
        bridge.init()
        bridge.prefill([1, 2, 3])
        reply = bridge.step(alpha=1.0)
        assert reply["ok"] is True
        assert reply["eos"] is False
        assert 0 <= reply["token"] < 13
        assert 0.0 <= reply["entropy"] <= 1.0
        assert reply["logprob"] <= 0.0

    def test_sessions_are_independent(self, bridge):
        bridge.init(session="a")
        bridge.init(session="b")
        bridge.prefill([1, 2, 3], session="a")
        bridge.prefill([7, 7, 7, 7], session="b")
        solo = None
        with BridgeProc() as twin:
            twin.init(session="a")
            twin.prefill([1, 2, 3], session="a")
            solo = [twin.step(session="a", alpha=1.0) for _ in range(4)]
        interleaved = []
        for _ in range(4):
            interleaved.append(bridge.step(session="a", alpha=1.0))
            bridge.step(session="b", alpha=0.0)
        assert interleaved == solo

    def test_close_frees_the_session(self, bridge):
        bridge.init()
        assert bridge.send(op="close", session="s")["ok"] is True
        assert bridge.step()["code"] == "no_such_session"
        assert bridge.send(op="close", session="s")["code"] == "no_such_session"


class TestFraming:
    def test_blank_lines_ignored(self, bridge):
        bridge.proc.stdin.write("\n\n")
        bridge.proc.stdin.flush()
        assert bridge.init()["ok"] is True

    def test_survives_garbage_burst(self, bridge):
        for i in range(20):
            reply = bridge.send_raw(f"garbage {i}")
            assert json.loads(reply)["code"] == "bad_message"
        assert bridge.init()["ok"] is True

    def test_non_object_payloads(self, bridge):
        assert json.loads(bridge.send_raw("[1,2,3]"))["code"] == "bad_message"
        assert json.loads(bridge.send_raw('"init"'))["code"] == "bad_message"
        assert json.loads(bridge.send_raw('{"op":7}'))["code"] == "bad_message"

    def test_replies_are_single_compact_lines(self, bridge):
        reply = bridge.send_raw('{"op":"init","session":"s","protocol":1}')
        assert "\n" not in reply
        assert ": " not in reply


class TestLaunchValidation:
    @pytest.mark.parametrize(
        "flags",
        [
            ("--max-sessions", "0"),
            ("--device", "cuda"),
            ("--entropy-mode", "sparse"),
            ("--model", "stub:huge"),
        ],
    )
    def test_bad_flag_values_exit_2(self, flags):
        result = subprocess.run(
            server_cmd(*flags), input="", capture_output=True, text=True
        )
        assert result.returncode == 2
        assert "error:" in result.stderr

    def test_unknown_targets_rejected_by_argparse(self):
        result = subprocess.run(
            server_cmd("--targets", "bogus"), input="", capture_output=True, text=True
        )
        assert result.returncode == 2

    def test_valid_flags_serve_until_eof(self):
        result = subprocess.run(
            server_cmd("--targets", "mlp", "--max-sessions", "2"),
            input='{"op":"init","session":1,"protocol":1}\n',
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0
        assert json.loads(result.stdout)["ok"] is True
