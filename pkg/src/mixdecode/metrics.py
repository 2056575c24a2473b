"""Aggregation of episode results into per-config rows and sweep tables.

A sweep table is comma-separated text with a fixed header; the pareto
column marks rows on the kept-tokens/accuracy frontier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .types import ConfigError, ControllerConfig

CSV_HEADER = (
    "tau_up,tau_down,B,F,alpha_low,alpha_high,episodes,"
    "accuracy,ci95,kept_tokens,compute_tokens,coverage,overhead_ratio,pareto"
)


@dataclass(frozen=True)
class SweepResult:
    """Mean outcomes of a batch of episodes at one config point."""

    config: ControllerConfig
    episodes: int
    mean_accuracy: float
    accuracy_ci95: float
    mean_kept_tokens: float
    mean_compute_tokens: float
    mean_thinking_coverage: float
    mean_overhead_ratio: float

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ConfigError("a sweep row needs at least one episode")
        if self.mean_kept_tokens > self.mean_compute_tokens:
            raise ConfigError("mean kept tokens cannot exceed mean compute tokens")
        if not (0.0 <= self.mean_thinking_coverage <= 1.0):
            raise ConfigError("mean thinking coverage must lie in [0, 1]")


def aggregate(results, config: ControllerConfig) -> SweepResult:
    """Mean accuracy/token/coverage over episodes run at a single config.

    Means use math.fsum, so the result is invariant under permutation of
    the episode list.  The accuracy CI is the normal approximation
    1.96 * sqrt(p(1-p)/n).
    """
    results = list(results)
    if not results:
        raise ConfigError("cannot aggregate an empty result list")
    n = len(results)
    p = math.fsum(1.0 if r.correct else 0.0 for r in results) / n
    return SweepResult(
        config=config,
        episodes=n,
        mean_accuracy=p,
        accuracy_ci95=1.96 * math.sqrt(p * (1.0 - p) / n),
        mean_kept_tokens=math.fsum(r.kept_tokens for r in results) / n,
        mean_compute_tokens=math.fsum(r.compute_tokens for r in results) / n,
        mean_thinking_coverage=math.fsum(r.thinking_coverage for r in results) / n,
        mean_overhead_ratio=math.fsum(r.overhead_ratio for r in results) / n,
    )


def pareto_table(sweep: list[SweepResult]) -> list[tuple[SweepResult, bool]]:
    """Rows sorted by mean kept tokens, each flagged pareto-optimal or not.

    A row is flagged unless some other row has strictly fewer kept tokens
    and strictly higher accuracy.  Ties dominate nothing, so identical
    rows are all flagged.
    """
    if len(sweep) < 2:
        raise ConfigError("a pareto table needs at least two config points")
    rows = sorted(sweep, key=lambda r: r.mean_kept_tokens)
    table = []
    for row in rows:
        dominated = any(
            other.mean_kept_tokens < row.mean_kept_tokens
            and other.mean_accuracy > row.mean_accuracy
            for other in rows
        )
        table.append((row, not dominated))
    return table


def _fmt(x: float) -> str:
    return repr(float(x))


def to_csv(table: list[tuple[SweepResult, bool]]) -> str:
    """Render a pareto table as comma-separated text with the fixed header."""
    lines = [CSV_HEADER]
    for row, flag in table:
        c = row.config
        lines.append(
            ",".join(
                [
                    _fmt(c.tau_up),
                    _fmt(c.tau_down),
                    str(c.back),
                    str(c.fwd),
                    _fmt(c.alpha_low),
                    _fmt(c.alpha_high),
                    str(row.episodes),
                    _fmt(row.mean_accuracy),
                    _fmt(row.accuracy_ci95),
                    _fmt(row.mean_kept_tokens),
                    _fmt(row.mean_compute_tokens),
                    _fmt(row.mean_thinking_coverage),
                    _fmt(row.mean_overhead_ratio),
                    "1" if flag else "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"
