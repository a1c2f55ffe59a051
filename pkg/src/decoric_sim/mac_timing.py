"""Timing arithmetic: CSMA-CA backoff bounds, round and cycle lengths, and the
radio duty cycling schedule.

All durations are integer ticks of one microsecond.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

TICKS_PER_SECOND = 1_000_000


@dataclass(frozen=True)
class MacParams:
    N: int = 100
    maxR: int = 2
    maxBE: tuple = (3, 3, 3)
    tau_symb: int = 320
    tau_cca: int = 128
    tau_fr: int = 2872
    tau_ifs: int = 640
    min_round: int = 800_000

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if self.maxR < 0:
            raise ValueError("maxR must be non-negative")
        if len(self.maxBE) != self.maxR + 1:
            raise ValueError("maxBE needs one entry per attempt (maxR + 1)")
        if any(int(be) < 1 for be in self.maxBE):
            raise ValueError("maxBE entries must be >= 1")
        for name in ("tau_symb", "tau_cca", "tau_fr", "tau_ifs"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"{name} must be a positive integer tick count")
        if self.min_round < 0:
            raise ValueError("min_round must be non-negative")


@dataclass(frozen=True)
class RdcParams:
    rdc_rate: int = 32
    duty_fraction: float = 0.5
    txn_freq: int = 1_100_000  # round duration in ticks

    def __post_init__(self):
        if self.rdc_rate < 1:
            raise ValueError("rdc_rate must be >= 1")
        if not 0 < self.duty_fraction <= 1:
            raise ValueError("duty_fraction must be in (0, 1]")
        if TICKS_PER_SECOND % self.rdc_rate:
            raise ValueError("rdc_rate must divide the tick frequency")

    @property
    def period(self) -> int:
        return TICKS_PER_SECOND // self.rdc_rate

    @property
    def on_ticks(self) -> int:
        return max(1, round(self.period * self.duty_fraction))


def worst_case_backoff(i: int, p: MacParams) -> int:
    if not 0 <= i <= p.maxR:
        raise IndexError(f"retry index {i} outside 0..{p.maxR}")
    return (2 ** p.maxBE[i] - 1) * p.tau_symb + 2 * p.tau_cca


def per_node_budget(p: MacParams) -> int:
    return sum(worst_case_backoff(i, p) for i in range(p.maxR + 1)) + p.tau_fr + p.tau_ifs


def round_duration_unclamped(p: MacParams) -> int:
    return p.N * per_node_budget(p)


def round_duration(p: MacParams) -> int:
    return max(round_duration_unclamped(p), p.min_round)


def cycle_length(txn_freq: int, rdc_rate: int) -> int:
    """h * LCM(a/h, b/h) with h = GCD(a, b); equal to LCM(a, b)."""
    if txn_freq <= 0 or rdc_rate <= 0:
        raise ValueError("cycle_length needs positive integers")
    h = math.gcd(txn_freq, rdc_rate)
    a, b = txn_freq // h, rdc_rate // h
    return h * (a * b // math.gcd(a, b))


def cycle_rounds(round_ticks: int, rdc_rate: int, drift_rounds: int = 1) -> int:
    """Rounds per cycle: the round/RDC-period alignment length in rounds plus a
    margin for unsynchronized node clocks."""
    period = TICKS_PER_SECOND // rdc_rate
    return cycle_length(round_ticks, period) // round_ticks + drift_rounds


def backoff_delay(attempt: int, p: MacParams, rng: random.Random) -> int:
    """Random backoff for one attempt, bounded by worst_case_backoff(attempt)."""
    k = rng.randrange(2 ** p.maxBE[attempt])
    return k * p.tau_symb + 2 * p.tau_cca


def slot_length(round_ticks: int, p: MacParams) -> int:
    return round_ticks // max(p.N, 1)


# ---------------------------------------------------------------------------
# Radio duty cycling


def rdc_offset(node: int, r: RdcParams, seed: int = 0) -> int:
    return random.Random(f"rdc:{seed}:{node}").randrange(r.period)


def rdc_schedule(node: int, t: int, r: RdcParams, seed: int = 0, offset: int | None = None) -> bool:
    if offset is None:
        offset = rdc_offset(node, r, seed)
    return (t - offset) % r.period < r.on_ticks


def rdc_on_time(t0: int, t1: int, offset: int, r: RdcParams) -> int:
    """Ticks in [t0, t1) during which the receiver is on."""
    if t1 <= t0:
        return 0
    return _on_before(t1, offset, r) - _on_before(t0, offset, r)


def _on_before(t: int, offset: int, r: RdcParams) -> int:
    # on-ticks in [offset - k*period, t) measured from a fixed anchor below t
    period, w = r.period, r.on_ticks
    u = t - offset
    q, rem = divmod(u, period)
    return q * w + min(rem, w)


def rdc_windows(t0: int, t1: int, offset: int, r: RdcParams):
    """Yield (start, end) on-intervals intersected with [t0, t1)."""
    period, w = r.period, r.on_ticks
    k = (t0 - offset) // period
    start = offset + k * period
    while start < t1:
        a, b = max(start, t0), min(start + w, t1)
        if a < b:
            yield a, b
        start += period


# ---------------------------------------------------------------------------
# Stand-alone CSMA-CA resolution on a single shared channel


@dataclass
class CsmaOutcome:
    sent_at: int | None = None
    attempts: int = 0
    collided: bool = False

    @property
    def dropped(self) -> bool:
        return self.sent_at is None


def csma_transmit(t: int, contenders, p: MacParams, rng: random.Random,
                  busy: list | None = None) -> dict:
    """Resolve unslotted CSMA-CA for nodes that all hear each other.

    Each contender draws a backoff, then assesses the channel. A busy channel
    costs a retry with the next backoff exponent; after maxR retries the frame is
    dropped. Two nodes whose assessments fall before either transmission starts
    both transmit and collide. ``busy`` lists pre-existing (start, end) intervals.
    """
    intervals = list(busy or [])
    pending = []
    out = {n: CsmaOutcome() for n in contenders}
    for n in sorted(contenders):
        pending.append((t + backoff_delay(0, p, rng), n, 0))
    pending.sort()
    tx = {}
    while pending:
        when, n, attempt = pending.pop(0)
        out[n].attempts = attempt + 1
        if any(a < when < b for a, b in intervals):  # same-tick starts are not sensed
            if attempt == p.maxR:
                continue
            pending.append((when + backoff_delay(attempt + 1, p, rng), n, attempt + 1))
            pending.sort()
            continue
        start = when
        intervals.append((start, start + p.tau_fr))
        tx[n] = (start, start + p.tau_fr)
        out[n].sent_at = start
    for n, (a, b) in tx.items():
        for m, (c, d) in tx.items():
            if m != n and a < d and c < b:
                out[n].collided = True
    return out
