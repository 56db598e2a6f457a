"""Affinity-map bookkeeping and closed-form operation counts.

An :class:`AffinityLedger` is installed as a context manager around a
forward pass. Attention code reports every affinity map it creates and
releases; the ``matmul`` primitive reports multiply-accumulates. The
closed-form :func:`analytic_counts` values are what the measured
counters get checked against, entry for entry.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

from .errors import GeometryError

_STACK = threading.local()


def active_ledger() -> "AffinityLedger | None":
    """Innermost ledger installed on the current thread, or None."""
    stack = getattr(_STACK, "ledgers", None)
    return stack[-1] if stack else None


class AffinityLedger:
    """Counts affinity-map entries, attention MACs, and peak live entries.

    Counters are monotone within a run; `reset` is the only way back to
    zero. With ``counting_only=True``, attention forwards record the same
    counters without materializing any affinity map (the output is a
    zero tensor of the contractual shape).
    """

    def __init__(self, counting_only: bool = False) -> None:
        self.counting_only = counting_only
        self.affinity_entries = 0
        self.attention_macs = 0
        self.peak_live_entries = 0
        self._live = 0

    def open_map(self, entries: int) -> None:
        """Register a newly materialized affinity map of `entries` cells."""
        self.affinity_entries += entries
        self._live += entries
        if self._live > self.peak_live_entries:
            self.peak_live_entries = self._live

    def close_map(self, entries: int) -> None:
        """Mark a previously opened affinity map as released."""
        self._live -= entries

    def add_macs(self, count: int) -> None:
        self.attention_macs += count

    def reset(self) -> None:
        self.affinity_entries = 0
        self.attention_macs = 0
        self.peak_live_entries = 0
        self._live = 0

    def __enter__(self) -> "AffinityLedger":
        stack = getattr(_STACK, "ledgers", None)
        if stack is None:
            stack = _STACK.ledgers = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STACK.ledgers.pop()

    def __repr__(self) -> str:
        return (
            f"AffinityLedger(entries={self.affinity_entries}, "
            f"macs={self.attention_macs}, peak={self.peak_live_entries})"
        )


# Complexity descriptors for the four analytic regimes.

@dataclass(frozen=True)
class NonLocal:
    """Full pairwise attention: every pixel attends to every pixel."""


@dataclass(frozen=True)
class HsaNoPool:
    """Segmented attention without key/value pooling."""

    segments: int


@dataclass(frozen=True)
class Hsa:
    """Segmented attention with keys/values pooled to (pooled_h, pooled_w)."""

    segments: int
    pooled_h: int
    pooled_w: int


@dataclass(frozen=True)
class Psa:
    """Whole-map attention against a pyramid of pooled grids."""

    scales: tuple[tuple[int, int], ...]


def analytic_counts(height: int, width: int, cfg) -> int:
    """Closed-form affinity-entry count for a feature map of (height, width).

    NonLocal   -> (H*W)^2
    HsaNoPool  -> (H*W)^2 / N
    Hsa        -> H*W*ph*pw
    Psa        -> H*W * sum_i ph_i*pw_i
    """
    if height < 1 or width < 1:
        raise GeometryError(f"extents must be positive, got {height}x{width}")
    hw = height * width
    if isinstance(cfg, NonLocal):
        return hw * hw
    if isinstance(cfg, HsaNoPool):
        _check_segments(height, cfg.segments)
        return (hw * hw) // cfg.segments
    if isinstance(cfg, Hsa):
        _check_segments(height, cfg.segments)
        return hw * cfg.pooled_h * cfg.pooled_w
    if isinstance(cfg, Psa):
        return hw * sum(ph * pw for ph, pw in cfg.scales)
    raise TypeError(f"unknown complexity config: {cfg!r}")


def _check_segments(height: int, segments: int) -> None:
    if segments < 1 or height % segments != 0:
        raise GeometryError(
            f"height {height} is not divisible into {segments} segments"
        )


def measured_counts(run: Callable[[], object], counting_only: bool = False) -> AffinityLedger:
    """Execute `run` under a fresh ledger and return the populated ledger."""
    ledger = AffinityLedger(counting_only=counting_only)
    with ledger:
        run()
    return ledger
