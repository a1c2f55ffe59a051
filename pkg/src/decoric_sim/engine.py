"""Deterministic discrete-event engine.

Rounds are globally aligned. Each round every live node may request one
broadcast slot; the engine runs CSMA-CA inside the slot, delivers the frame to
in-range nodes whose receiver is on, destroys overlapping receptions, and keeps
the energy ledger. Faults (kills and additions) come from a plan.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from enum import IntEnum

from .energy import EnergyLedger, EnergyParams
from .frame import encode
from .mac_timing import (MacParams, RdcParams, backoff_delay, rdc_offset, round_duration,
                         slot_length)
from .protocol import RadioMode, Role
from .topology import LinkClass, Topology, classify_link, link_rssi


class Kind(IntEnum):
    TX_END = 0
    RECEPTION = 1
    RDC_TOGGLE = 2
    ROUND_TICK = 3
    INJECT = 4
    TX_START = 5


@dataclass(frozen=True)
class FaultEvent:
    time: int  # ticks
    node: int
    action: str  # "kill" or "add"
    position: tuple | None = None


@dataclass
class _Tx:
    sender: int
    start: int
    end: int
    frame: object
    receivers: dict  # receiver -> ok flag
    aborted: bool = False


@dataclass
class Trace:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"ev": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        meta = {}
        if recs and recs[0].get("ev") == "meta":
            meta = recs.pop(0)
            meta.pop("ev")
        return cls(recs, meta)

    def of(self, ev: str) -> list:
        return [r for r in self.records if r["ev"] == ev]


class Simulation:
    def __init__(self, topology: Topology, node_factory, *, mac: MacParams | None = None,
                 rdc: RdcParams | None = None, energy: EnergyParams | None = None,
                 seed: int = 0, horizon: int = 1_000_000_000, faults=(),
                 trace_level: str = "summary", snapshot_every: int = 1,
                 access: str = "slotted", stop_when=None, requeues: int = 4):
        self.topo = topology
        self.factory = node_factory
        self.mac = mac or MacParams(N=max(len(topology.positions), 1))
        self.round = round_duration(self.mac)
        self.rdc = rdc or RdcParams(txn_freq=self.round)
        self.slot = slot_length(self.round, self.mac)
        self.seed = seed
        self.horizon = horizon
        self.trace_level = trace_level
        self.snapshot_every = snapshot_every
        if access not in ("slotted", "random"):
            raise ValueError("access must be 'slotted' or 'random'")
        self.access = access
        self.stop_when = stop_when
        self.requeues = requeues
        self.ledger = EnergyLedger(energy or EnergyParams(), self.rdc)
        self.trace = Trace(meta={"seed": seed, "round_ticks": self.round, "horizon": horizon,
                                 "n_slots": self.mac.N, "radio_range": topology.radio_range,
                                 "positions": {str(k): list(v) for k, v in
                                               sorted(topology.positions.items())},
                                 "power_nw": [self.ledger.p.tx_nw, self.ledger.p.cpu_nw,
                                              self.ledger.p.rx_nw, self.ledger.p.lpm_nw],
                                 "battery_fj": self.ledger.p.battery_fj})
        self.nodes = {}
        self.alive = set()
        self.modes = {}
        self.offsets = {}
        self.rngs = {}
        self.links = {}  # node -> list of (other, LinkClass, rssi)
        self.active: list[_Tx] = []
        self.transmitting = {}  # node -> _Tx
        self.last_rx = {}  # (receiver, sender) -> tick of last good reception
        self.queue = []
        self._seq = 0
        self.now = 0
        self.round_index = -1
        self.stopped = False
        for ev in sorted(faults, key=lambda e: (e.time, e.node)):
            self._push(ev.time, Kind.INJECT, ev.node, ev)
        for nid in topology.ids:
            self._spawn(nid, 0, joining=False)
        self._push(0, Kind.ROUND_TICK, -1, 0)

    # -- setup --------------------------------------------------------------

    def _push(self, t, kind, node, payload):
        self._seq += 1
        heapq.heappush(self.queue, (t, int(kind), node, self._seq, payload))

    def _spawn(self, nid, t, joining):
        node = self.factory(nid, joining)
        node.energy_probe = lambda nid=nid: self.ledger.residual(nid) / self.ledger.p.battery_fj
        self.nodes[nid] = node
        self.alive.add(nid)
        self.offsets[nid] = rdc_offset(nid, self.rdc, self.seed)
        self.rngs[nid] = random.Random(f"mac:{self.seed}:{nid}")
        mode = node.radio_mode()
        self.modes[nid] = mode
        self.ledger.add_node(nid, t, mode, self.offsets[nid])
        self._build_links(nid)
        self._push(self.ledger.next_check(nid, t), Kind.INJECT, nid, "death_check")

    def _build_links(self, nid):
        out = []
        for other in self.topo.ids:
            if other == nid:
                continue
            cls = classify_link(nid, other, self.topo)
            if cls is LinkClass.OUT_OF_RANGE:
                continue
            r = link_rssi(nid, other, self.topo)
            out.append((other, cls, r))
            if other in self.links:
                self.links[other] = [x for x in self.links[other] if x[0] != nid] + [(nid, cls, r)]
                self.links[other].sort()
        self.links[nid] = sorted(out)

    # -- main loop ----------------------------------------------------------

    def schedule_fault(self, ev: FaultEvent):
        if ev.time < self.now:
            raise ValueError("cannot schedule a fault in the past")
        self._push(ev.time, Kind.INJECT, ev.node, ev)

    def run(self) -> Trace:
        self.run_until(self.horizon)
        return self.finish()

    def run_until(self, limit: int) -> bool:
        """Process every event at or before ``limit``. Returns False if stopped early."""
        limit = min(limit, self.horizon)
        while self.queue:
            t, kind, node, _, payload = self.queue[0]
            if t > limit:
                break
            heapq.heappop(self.queue)
            self.now = t
            if kind == Kind.TX_END:
                self._tx_end(payload)
            elif kind == Kind.RECEPTION:
                self._deliver(payload)
            elif kind == Kind.ROUND_TICK:
                self._round_tick(payload)
                if self.stop_when is not None and self.stop_when(self):
                    self.stopped = True
                    return False
            elif kind == Kind.INJECT:
                self._inject(node, payload)
            elif kind == Kind.TX_START:
                self._tx_start(node, payload)
        return True

    def finish(self) -> Trace:
        end = self.now
        for nid in sorted(self.alive):
            self.ledger.settle(nid, end)
        self._check_deaths(end)
        self.trace.records.append({"ev": "end", "t": end, "energy": self._energy_view()})
        return self.trace

    def _log(self, rec):
        self.trace.records.append(rec)

    def _drain_events(self, nid):
        node = self.nodes[nid]
        evs = getattr(node, "events", None)
        if not evs:
            return
        for e in evs:
            rec = {"ev": "node", "t": self.now, "node": nid, "round": self.round_index,
                   "what": e[0], "data": list(e[1:])}
            if e[0] == "removed":
                rec["last_rx"] = self.last_rx.get((nid, e[1]))
            self._log(rec)
        evs.clear()

    # -- rounds -------------------------------------------------------------

    def _round_tick(self, r):
        self.round_index = r
        t = self.now
        for nid in sorted(self.alive):
            if nid not in self.alive:
                continue
            req = self.nodes[nid].on_round(r)
            self._drain_events(nid)
            mode = self.nodes[nid].radio_mode()
            if mode is not self.modes[nid]:
                if not self.ledger.set_mode(nid, t, mode):
                    self._die(nid, "battery")
                    continue
                self.modes[nid] = mode
            if req is not None:
                for q in (req if isinstance(req, list) else [req]):
                    self._push(self._slot_time(nid, q, t), Kind.TX_START, nid, 0)
        self._record_snapshot_if_due()
        self._push(t + self.round, Kind.ROUND_TICK, -1, r + 1)

    def _slot_time(self, nid, req, t):
        rng = self.rngs[nid]
        if self.access == "random":
            span = self.round - self.slot
            return t + rng.randrange(max(span, 1)) + backoff_delay(0, self.mac, rng)
        if req.half is not None:
            return (t + req.half * (self.round // 2) + req.slot * (self.slot // 2)
                    + backoff_delay(0, self.mac, rng))
        sub_span = max(self.slot - 2 * self.mac.tau_fr, self.mac.N) // self.mac.N
        return t + req.slot * self.slot + req.sub * sub_span + backoff_delay(0, self.mac, rng)

    # -- transmission ---------------------------------------------------------

    def _channel_busy(self, nid):
        if nid in self.transmitting:
            return True
        near = {o for o, _, _ in self.links[nid]}
        return any(tx.sender in near and tx.start < self.now < tx.end for tx in self.active)

    def _tx_start(self, nid, attempt):
        if nid not in self.alive:
            return
        if self._channel_busy(nid):
            retries = attempt % (self.mac.maxR + 1)
            if retries < self.mac.maxR:
                delay = backoff_delay(retries + 1, self.mac, self.rngs[nid])
                self._push(self.now + delay, Kind.TX_START, nid, attempt + 1)
            elif attempt // (self.mac.maxR + 1) < self.requeues:
                # retries exhausted: queue the frame again after the channel clears
                near = {o for o, _, _ in self.links[nid]}
                clear = max((tx.end for tx in self.active if tx.sender in near), default=self.now)
                delay = backoff_delay(0, self.mac, self.rngs[nid])
                self._push(max(clear, self.now) + self.mac.tau_ifs + delay, Kind.TX_START, nid,
                           attempt + 1)
            else:
                self._log({"ev": "drop", "t": self.now, "node": nid})
            return
        if not self.ledger.settle(nid, self.now):
            self._die(nid, "battery")
            return
        frame = self.nodes[nid].build_frame()
        self._drain_events(nid)
        if frame is None:
            return
        end = self.now + self.mac.tau_fr
        self.ledger.add_busy(nid, self.now, end, "tx")
        # a node that starts sending loses whatever it was receiving
        for tx in self.active:
            if nid in tx.receivers:
                tx.receivers[nid] = False
        receivers = {}
        for other, _, _ in self.links[nid]:
            if other not in self.alive or other in self.transmitting:
                continue
            if not self._radio_on(other):
                continue
            receivers[other] = True
            self.ledger.add_ext(other, self.now, end)
        # receiver-side overlap destroys both frames
        for tx in self.active:
            if tx.end <= self.now:
                continue
            near = {o for o, _, _ in self.links[tx.sender]}
            for other in receivers:
                if other in near:
                    receivers[other] = False
                    if other in tx.receivers:
                        tx.receivers[other] = False
        tx = _Tx(nid, self.now, end, frame, receivers)
        self.active.append(tx)
        self.transmitting[nid] = tx
        if self.trace_level == "full":
            self._log({"ev": "tx", "t": self.now, "node": nid,
                       "frame": _frame_hex(frame, self.mac.N)})
        self._push(end, Kind.TX_END, nid, tx)

    def _radio_on(self, nid):
        mode = self.modes[nid]
        if mode is RadioMode.ALWAYS_ON:
            return True
        if mode is RadioMode.OFF:
            return False
        return (self.now - self.offsets[nid]) % self.rdc.period < self.rdc.on_ticks

    def _tx_end(self, tx):
        self.active.remove(tx)
        if self.transmitting.get(tx.sender) is tx:
            del self.transmitting[tx.sender]
        if not tx.aborted:
            self._push(self.now, Kind.RECEPTION, tx.sender, tx)

    def _deliver(self, tx):
        full = self.trace_level == "full"
        links = {o: (c, r) for o, c, r in self.links[tx.sender]}
        for rid in sorted(tx.receivers):
            if not tx.receivers[rid] or rid not in self.alive:
                continue
            if not self.ledger.settle(rid, self.now):
                self._die(rid, "battery")
                continue
            cls, rssi = links[rid]
            self.ledger.add_busy(rid, self.now, self.now + 1, "cpu")
            self.last_rx[(rid, tx.sender)] = self.now
            self.nodes[rid].on_receive(tx.frame, cls, rssi, self.now)
            self._drain_events(rid)
            if full:
                self._log({"ev": "rx", "t": self.now, "node": rid, "from": tx.sender})

    # -- faults and deaths ----------------------------------------------------

    def _inject(self, nid, payload):
        if payload == "death_check":
            if nid not in self.alive:
                return
            if not self.ledger.settle(nid, self.now):
                self._die(nid, "battery")
            else:
                self._push(self.ledger.next_check(nid, self.now), Kind.INJECT, nid, "death_check")
            return
        ev = payload
        if ev.action == "kill":
            if nid not in self.alive:
                self._log({"ev": "fault_skipped", "t": self.now, "node": nid})
                return
            role = self.nodes[nid].role().value
            self.ledger.kill(nid, self.now)
            self._die(nid, "kill", role=role)
        elif ev.action == "add":
            if nid in self.nodes:
                raise ValueError(f"node {nid} already exists")
            self.topo = self.topo.with_node(nid, ev.position)
            self._spawn(nid, self.now, joining=True)
            self._log({"ev": "fault", "t": self.now, "node": nid, "action": "add",
                       "position": list(ev.position)})
        else:
            raise ValueError(f"unknown fault action {ev.action!r}")

    def _die(self, nid, cause, role=None):
        if nid not in self.alive:
            return
        n = self.ledger.nodes[nid]
        t = n.death_time if n.death_time is not None else self.now
        if role is None:
            role = self.nodes[nid].role().value
        self.alive.discard(nid)
        tx = self.transmitting.pop(nid, None)
        if tx is not None:
            tx.aborted = True
        rec = {"ev": "death" if cause == "battery" else "fault", "t": t, "node": nid, "role": role}
        if cause == "kill":
            rec["action"] = "kill"
        self._log(rec)

    def _check_deaths(self, t):
        for nid in sorted(self.alive):
            if not self.ledger.nodes[nid].alive:
                self._die(nid, "battery")

    # -- snapshots ------------------------------------------------------------

    def _energy_view(self):
        out = {}
        for nid in sorted(self.nodes):
            n = self.ledger.nodes[nid]
            out[str(nid)] = [n.times["tx"], n.times["cpu"], n.times["rx"], n.times["lpm"],
                             self.ledger.residual(nid), n.start,
                             n.death_time if not n.alive else None]
        return out

    def _record_snapshot_if_due(self, force=False):
        r = max(self.round_index, 0)
        if not force and r % self.snapshot_every:
            return
        for nid in sorted(self.alive):
            if not self.ledger.settle(nid, self.now):
                self._die(nid, "battery")
        view = {}
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if nid in self.alive:
                view[str(nid)] = [node.role().value, node.cluster_head(),
                                  bool(node.is_settled())]
            else:
                view[str(nid)] = [Role.DEAD.value, None, False]
        self._log({"ev": "snap", "t": self.now, "round": r, "nodes": view,
                   "energy": self._energy_view()})


def _frame_hex(frame, max_nodes):
    try:
        return encode(frame, max_nodes).hex()
    except (ValueError, AttributeError, TypeError):
        return json.dumps(frame.__dict__ if hasattr(frame, "__dict__") else str(frame),
                          sort_keys=True, default=str)
