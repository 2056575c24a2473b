"""Prefill cost accounting for per-mode KV caches.

Switching modes mid-sequence invalidates nothing that was already cached
for the *other* mode, but the mode being switched to must prefill every
prefix position it has not yet cached.  The ledger tracks, per mode, how
many prefix positions are cached, and logs the prefill cost paid at each
switch.  With a cache-sharing adapter (one that leaves attention K/V
untouched) both modes read the same cache, so every switch costs zero.

The ledger never evicts: a mode's cache survives while the other mode is
active and is only shortened by explicit truncation after a rollback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .types import ConfigError, InternalError, Mode


@dataclass
class KVCacheLedger:
    """Per-mode cached-prefix lengths plus a log of switch prefill costs.

    One ledger per decode session; mutated only by that session.  The
    initial mode starts with the prompt cached (prompt ingestion is a cost
    every policy pays, so it is not logged as switch overhead); the other
    mode starts cold unless the cache is shared.
    """

    prompt_len: int
    shared: bool = False
    initial_mode: Mode = Mode.CONCISE
    cache_len: dict[Mode, int] = field(init=False)
    prefill_log: list[tuple[Mode, int]] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        if self.prompt_len < 0:
            raise ConfigError("prompt_len must be >= 0")
        self.cache_len = {Mode.THINKING: 0, Mode.CONCISE: 0}
        if self.shared:
            self.cache_len[Mode.THINKING] = self.prompt_len
            self.cache_len[Mode.CONCISE] = self.prompt_len
        else:
            self.cache_len[self.initial_mode] = self.prompt_len

    def on_switch(self, to_mode: Mode, current_prefix_len: int) -> int:
        """Log the prefill cost of activating to_mode at the given prefix.

        Cost is current_prefix_len - cache_len[to_mode] (zero when shared).
        The caller must truncate first after a rollback; a cache longer
        than the prefix indicates that was skipped.
        """
        cached = self.cache_len[to_mode]
        if cached > current_prefix_len:
            raise InternalError(
                f"cache for {to_mode} covers {cached} > prefix {current_prefix_len}; "
                "truncate before switching"
            )
        cost = 0 if self.shared else current_prefix_len - cached
        self.cache_len[to_mode] = current_prefix_len
        if self.shared:
            self.cache_len[Mode.THINKING] = current_prefix_len
            self.cache_len[Mode.CONCISE] = current_prefix_len
        self.prefill_log.append((to_mode, cost))
        return cost

    def on_generate(self, active_mode: Mode, n_tokens: int = 1) -> None:
        """Advance the active mode's cache by n_tokens freshly decoded tokens."""
        if n_tokens < 0:
            raise InternalError("n_tokens must be >= 0")
        if self.shared:
            self.cache_len[Mode.THINKING] += n_tokens
            self.cache_len[Mode.CONCISE] += n_tokens
        else:
            self.cache_len[active_mode] += n_tokens

    def truncate(self, new_prefix_len: int) -> None:
        """Shorten both caches after a rollback to new_prefix_len."""
        if new_prefix_len < self.prompt_len:
            raise InternalError(
                f"cannot truncate below prompt length ({new_prefix_len} < {self.prompt_len})"
            )
        for mode in (Mode.THINKING, Mode.CONCISE):
            self.cache_len[mode] = min(self.cache_len[mode], new_prefix_len)

    @property
    def total_prefill_tokens(self) -> int:
        return sum(cost for _, cost in self.prefill_log)

    @property
    def switches(self) -> int:
        return len(self.prefill_log)

    def overhead_ratio(self, compute_tokens: int, discount: float = 0.05) -> float:
        """Fraction of discounted work spent on switch prefills.

        Returns (discount * total_prefill) / (discount * total_prefill +
        compute_tokens).  discount in (0, 1] models prefill positions being
        cheaper than decoded tokens (they batch in one forward pass); the
        default 0.05 reflects a prefill pass costing a couple of generated
        tokens even for windows dozens of positions long.
        """
        if compute_tokens <= 0:
            raise ConfigError("compute_tokens must be positive")
        if not (0.0 < discount <= 1.0):
            raise ConfigError("discount must lie in (0, 1]")
        work = discount * self.total_prefill_tokens
        return work / (work + compute_tokens)
