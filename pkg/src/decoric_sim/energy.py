"""Per-node energy ledger.

Units are integers throughout: power in nW, time in µs ticks, energy in fJ
(1 nW x 1 µs = 1 fJ). A node is in exactly one state at a time with priority
transmit > cpu > receive/listen > low-power. Listening time comes from the
radio mode (always on, duty cycled, off) plus receive extensions, i.e. periods
in which a duty-cycled radio stays on to finish a frame it started hearing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .mac_timing import RdcParams, rdc_on_time
from .protocol import RadioMode

STATES = ("tx", "cpu", "rx", "lpm")


def mwh_to_fj(mwh: float) -> int:
    return round(mwh * 3.6e15)


def mw_to_nw(mw: float) -> int:
    return round(mw * 1_000_000)


@dataclass(frozen=True)
class EnergyParams:
    tx_nw: int = 52_200_000
    rx_nw: int = 56_400_000
    cpu_nw: int = 5_400_000
    lpm_nw: int = 163_500
    battery_fj: int = mwh_to_fj(6.0)

    def __post_init__(self):
        for name in ("tx_nw", "rx_nw", "cpu_nw", "lpm_nw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.battery_fj <= 0:
            raise ValueError("battery must be positive")

    def power(self, state: str) -> int:
        return getattr(self, f"{state}_nw")

    @property
    def max_power(self) -> int:
        return max(self.tx_nw, self.rx_nw, self.cpu_nw, self.lpm_nw)


@dataclass
class NodeEnergy:
    mode: RadioMode
    since: int
    rdc_offset: int = 0
    times: dict = field(default_factory=lambda: dict.fromkeys(STATES, 0))
    busy: list = field(default_factory=list)  # (start, end, state) for tx/cpu
    ext: list = field(default_factory=list)  # (start, end) forced listening
    alive: bool = True
    death_time: int | None = None
    start: int = 0

    def consumed(self, p: EnergyParams) -> int:
        return sum(self.times[s] * p.power(s) for s in STATES)


def _segment_times(a: int, b: int, mode: RadioMode, offset: int, rdc: RdcParams,
                   busy, ext) -> dict:
    """State times over [a, b) given the overlay intervals."""
    out = dict.fromkeys(STATES, 0)
    if b <= a:
        return out
    cuts = {a, b}
    for s, e, _ in busy:
        if e > a and s < b:
            cuts.add(max(s, a))
            cuts.add(min(e, b))
    for s, e in ext:
        if e > a and s < b:
            cuts.add(max(s, a))
            cuts.add(min(e, b))
    pts = sorted(cuts)
    for lo, hi in zip(pts, pts[1:]):
        d = hi - lo
        state = None
        for s, e, st in busy:
            if s <= lo and hi <= e:
                if state is None or st == "tx":
                    state = st
        if state is not None:
            out[state] += d
            continue
        if any(s <= lo and hi <= e for s, e in ext):
            out["rx"] += d
            continue
        if mode is RadioMode.ALWAYS_ON:
            on = d
        elif mode is RadioMode.RDC:
            on = rdc_on_time(lo, hi, offset, rdc)
        else:
            on = 0
        out["rx"] += on
        out["lpm"] += d - on
    return out


class EnergyLedger:
    def __init__(self, params: EnergyParams, rdc: RdcParams):
        self.p = params
        self.rdc = rdc
        self.nodes: dict[int, NodeEnergy] = {}

    def add_node(self, node: int, t: int, mode: RadioMode, offset: int):
        self.nodes[node] = NodeEnergy(mode, t, offset, start=t)

    def add_busy(self, node: int, start: int, end: int, state: str):
        self.nodes[node].busy.append((start, end, state))

    def add_ext(self, node: int, start: int, end: int):
        n = self.nodes[node]
        if n.mode is not RadioMode.ALWAYS_ON:
            n.ext.append((start, end))

    def _pending(self, n: NodeEnergy, t: int) -> dict:
        return _segment_times(n.since, t, n.mode, n.rdc_offset, self.rdc, n.busy, n.ext)

    def settle(self, node: int, t: int) -> bool:
        """Integrate up to tick t. Returns False if the battery ran out, in which
        case the node is closed at its exact crossing tick."""
        n = self.nodes[node]
        if not n.alive or t <= n.since:
            return n.alive
        add = self._pending(n, t)
        used = n.consumed(self.p) + sum(add[s] * self.p.power(s) for s in STATES)
        if used <= self.p.battery_fj:
            self._commit(n, add, t)
            return True
        td = self.crossing_tick(node, t)
        self._commit(n, self._pending(n, td), td)
        n.alive = False
        n.death_time = td
        return False

    def crossing_tick(self, node: int, t: int) -> int:
        """Largest tick td in [since, t) whose accumulated use stays within the battery."""
        n = self.nodes[node]
        base = n.consumed(self.p)
        lo, hi = n.since, t  # use(lo) <= battery < use(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            add = self._pending(n, mid)
            if base + sum(add[s] * self.p.power(s) for s in STATES) <= self.p.battery_fj:
                lo = mid
            else:
                hi = mid
        return lo

    def _commit(self, n: NodeEnergy, add: dict, t: int):
        for s in STATES:
            n.times[s] += add[s]
        n.since = t
        n.busy = [x for x in n.busy if x[1] > t]
        n.ext = [x for x in n.ext if x[1] > t]

    def set_mode(self, node: int, t: int, mode: RadioMode) -> bool:
        ok = self.settle(node, t)
        if ok:
            self.nodes[node].mode = mode
        return ok

    def kill(self, node: int, t: int):
        n = self.nodes[node]
        if n.alive:
            self.settle(node, t)
        if n.alive:
            n.alive = False
            n.death_time = t

    def remaining(self, node: int) -> int:
        n = self.nodes[node]
        return self.p.battery_fj - n.consumed(self.p)

    def next_check(self, node: int, t: int) -> int:
        """Earliest tick at which the node could possibly run dry."""
        return t + max(1, self.remaining(node) // self.p.max_power)

    def residual(self, node: int) -> int:
        return self.remaining(node)

    def conservation_ok(self, node: int) -> bool:
        n = self.nodes[node]
        used = sum(n.times[s] * self.p.power(s) for s in STATES)
        elapsed = (n.death_time if not n.alive else n.since) - n.start
        return (self.residual(node) + used == self.p.battery_fj and self.residual(node) >= 0
                and sum(n.times.values()) == elapsed)
