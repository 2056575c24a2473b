import pytest

from mixdecode import ConfigError, InternalError, KVCacheLedger, Mode


def test_first_switch_prefills_whole_prefix():
    # Prompt 20, then 30 kept concise tokens; first switch to thinking
    # must prefill all 50 positions.
    ledger = KVCacheLedger(prompt_len=20)
    ledger.on_generate(Mode.CONCISE, 30)
    cost = ledger.on_switch(Mode.THINKING, 50)
    assert cost == 50


def test_switch_back_prefills_only_new_tokens():
    ledger = KVCacheLedger(prompt_len=20)
    ledger.on_generate(Mode.CONCISE, 30)
    ledger.on_switch(Mode.THINKING, 50)
    ledger.on_generate(Mode.THINKING, 9)
    cost = ledger.on_switch(Mode.CONCISE, 59)
    assert cost == 9
    assert ledger.total_prefill_tokens == 59
    assert ledger.switches == 2


def test_shared_cache_switches_are_free():
    ledger = KVCacheLedger(prompt_len=20, shared=True)
    ledger.on_generate(Mode.CONCISE, 30)
    assert ledger.on_switch(Mode.THINKING, 50) == 0
    ledger.on_generate(Mode.THINKING, 9)
    assert ledger.on_switch(Mode.CONCISE, 59) == 0
    assert ledger.total_prefill_tokens == 0
    assert ledger.switches == 2


def test_generate_extends_only_active_mode():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.on_generate(Mode.CONCISE, 5)
    assert ledger.cache_len[Mode.CONCISE] == 15
    assert ledger.cache_len[Mode.THINKING] == 0


def test_generate_shared_extends_both():
    ledger = KVCacheLedger(prompt_len=10, shared=True)
    ledger.on_generate(Mode.CONCISE, 5)
    assert ledger.cache_len[Mode.CONCISE] == 15
    assert ledger.cache_len[Mode.THINKING] == 15


def test_generate_zero_is_noop():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.on_generate(Mode.CONCISE, 0)
    assert ledger.cache_len[Mode.CONCISE] == 10


def test_truncate_min_rule():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.cache_len[Mode.CONCISE] = 50
    ledger.cache_len[Mode.THINKING] = 50
    ledger.truncate(47)
    assert ledger.cache_len[Mode.CONCISE] == 47
    assert ledger.cache_len[Mode.THINKING] == 47


def test_truncate_only_shrinks_exceeding_cache():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.cache_len[Mode.CONCISE] = 50
    ledger.cache_len[Mode.THINKING] = 20
    ledger.truncate(47)
    assert ledger.cache_len[Mode.CONCISE] == 47
    assert ledger.cache_len[Mode.THINKING] == 20


def test_truncate_below_prompt_is_internal_error():
    ledger = KVCacheLedger(prompt_len=10)
    with pytest.raises(InternalError):
        ledger.truncate(9)


def test_switch_onto_stale_longer_cache_is_internal_error():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.on_generate(Mode.CONCISE, 10)
    with pytest.raises(InternalError):
        ledger.on_switch(Mode.CONCISE, 15)  # prefix shorter than cache


def test_rollback_then_reswitch_costs_regenerated_span():
    # The composed sequence a single-window decode performs: trigger,
    # rollback, switch to thinking, regenerate, switch back.  Mirrors the
    # S1 scenario with prompt 4, trigger at 3, window [2, 5].
    ledger = KVCacheLedger(prompt_len=4)
    ledger.on_generate(Mode.CONCISE, 3)  # positions 0..2 kept
    ledger.truncate(6)  # rollback to position 2
    assert ledger.on_switch(Mode.THINKING, 6) == 6
    ledger.on_generate(Mode.THINKING, 4)  # regenerate window [2, 5]
    assert ledger.on_switch(Mode.CONCISE, 10) == 4  # exactly the span length
    assert ledger.total_prefill_tokens == 10
    assert ledger.switches == 2


def test_overhead_zero_without_switches():
    ledger = KVCacheLedger(prompt_len=4)
    ledger.on_generate(Mode.CONCISE, 12)
    assert ledger.overhead_ratio(12, discount=1.0) == 0.0
    assert ledger.overhead_ratio(12) == 0.0


def test_overhead_ratio_arithmetic():
    ledger = KVCacheLedger(prompt_len=10)
    ledger.on_generate(Mode.CONCISE, 40)
    ledger.on_switch(Mode.THINKING, 50)
    assert ledger.overhead_ratio(100, discount=1.0) == pytest.approx(50 / 150, abs=1e-15)
    assert ledger.overhead_ratio(100, discount=0.05) == pytest.approx(
        2.5 / 102.5, abs=1e-15
    )


def test_overhead_requires_positive_compute_and_valid_discount():
    ledger = KVCacheLedger(prompt_len=4)
    with pytest.raises(ConfigError):
        ledger.overhead_ratio(0)
    with pytest.raises(ConfigError):
        ledger.overhead_ratio(10, discount=0.0)
    with pytest.raises(ConfigError):
        ledger.overhead_ratio(10, discount=1.5)


def test_zero_cost_switches_still_logged():
    ledger = KVCacheLedger(prompt_len=4, shared=True)
    ledger.on_switch(Mode.THINKING, 4)
    ledger.on_switch(Mode.CONCISE, 4)
    assert ledger.switches == 2
    assert ledger.total_prefill_tokens == 0
