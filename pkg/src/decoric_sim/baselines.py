"""LEACH and BEEM baselines behind the engine's node interface.

Both re-cluster at epoch boundaries. An epoch starts with CH advertisements
and a join round, then a schedule round, and the remaining rounds carry one
TDMA data frame per member. CHs keep the radio on for the whole epoch; members
sleep between their own transmissions.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .protocol import ProtocolNode, RadioMode, Role, TxRequest


@dataclass(frozen=True)
class LeachParams:
    p: float = 0.1
    epoch: int = 10
    member_sleep: str = "rdc"  # "rdc" or "off"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must be in (0, 1)")
        if self.epoch < 4:
            raise ValueError("epoch needs at least 4 rounds (advert, join, schedule, data)")
        if self.member_sleep not in ("rdc", "off"):
            raise ValueError("member_sleep must be 'rdc' or 'off'")

    @property
    def rotation(self) -> int:
        return math.ceil(1 / self.p)


@dataclass(frozen=True)
class BeemParams:
    c_prob: float = 0.1
    epoch: int = 10
    energy_max: float = 1.0  # residual energy is reported as a fraction of this
    member_sleep: str = "rdc"

    def __post_init__(self):
        if not 0 < self.c_prob < 1:
            raise ValueError("c_prob must be in (0, 1)")
        if self.epoch < 5:
            raise ValueError("epoch needs at least 5 rounds")
        if self.member_sleep not in ("rdc", "off"):
            raise ValueError("member_sleep must be 'rdc' or 'off'")


@dataclass(frozen=True)
class BaselineFrame:
    kind: str  # "ping", "advert", "join", "schedule", "data"
    node_id: int
    ch_id: int
    degree: int = 0
    score: float = 0.0


def leach_threshold(p: float, r: int, was_ch_this_cycle: bool) -> float:
    if was_ch_this_cycle:
        return 0.0
    rot = math.ceil(1 / p)
    denom = 1 - p * (r % rot)
    return 1.0 if denom <= p else min(1.0, p / denom)


def beem_score(c_prob: float, residual: float, energy_max: float) -> float:
    return c_prob * residual / energy_max


def beem_rank(score: float, degree: int, node: int):
    """Candidate ordering for BEEM, larger is better."""
    return (score, degree, -node)


@dataclass
class BaselineCtx:
    role: Role = Role.MEMBER
    ch_id: int | None = None
    residual_energy: float = 1.0
    epoch: int = 0
    rounds_since_election: int = 0


class _ClusterNode(ProtocolNode):
    sleep_mode = RadioMode.RDC

    def __init__(self, node_id: int, n_slots: int, seed: int, sleep: str):
        self.id = node_id
        self.n_slots = n_slots
        self.rng = random.Random(f"cluster:{seed}:{node_id}")
        self.ctx = BaselineCtx()
        self.sleep = RadioMode.RDC if sleep == "rdc" else RadioMode.OFF
        self.events = []
        self._mode = RadioMode.ALWAYS_ON
        self._out = None
        self.adverts = {}  # ch -> (rssi, score, degree)
        self.settled = False
        self.energy_probe = lambda: 1.0

    def _slot(self):
        return TxRequest(min(self.id, self.n_slots - 1))

    def _send(self, kind, **kw):
        self._out = BaselineFrame(kind, self.id, self.ctx.ch_id if self.ctx.ch_id is not None else self.id, **kw)
        return self._slot()

    def build_frame(self):
        return self._out

    def radio_mode(self):
        return self._mode

    def role(self):
        return Role.CH if self.ctx.role is Role.CH else Role.MEMBER

    def cluster_head(self):
        return self.id if self.ctx.role is Role.CH else self.ctx.ch_id

    def is_settled(self):
        return self.settled

    def _become_ch(self):
        self.ctx.role = Role.CH
        self.ctx.ch_id = self.id
        self.ctx.rounds_since_election = 0

    def _join_best(self, rank):
        if self.adverts:
            best = max(self.adverts, key=lambda c: rank(c, self.adverts[c]))
            self.ctx.ch_id = best
        else:
            self.ctx.ch_id = None
        self.ctx.role = Role.MEMBER

    def _data_round(self):
        self.settled = True
        if self.ctx.role is Role.CH:
            self._mode = RadioMode.ALWAYS_ON
            return None
        self._mode = self.sleep
        return self._send("data")


class LeachNode(_ClusterNode):
    def __init__(self, node_id, params: LeachParams, n_slots: int, seed: int = 0):
        super().__init__(node_id, n_slots, seed, params.member_sleep)
        self.p = params
        self.last_ch_rotation = None

    def on_round(self, r):
        pos = r % self.p.epoch
        epoch = r // self.p.epoch
        self.ctx.epoch = epoch
        self.ctx.rounds_since_election += 1
        if pos == 0:
            self.settled = False
            self._mode = RadioMode.ALWAYS_ON
            self.adverts = {}
            rotation = epoch // self.p.rotation
            was = self.last_ch_rotation == rotation
            if self.rng.random() < leach_threshold(self.p.p, epoch, was):
                self._become_ch()
                self.last_ch_rotation = rotation
                self.events.append(("elected", epoch))
                return self._send("advert")
            self.ctx.role = Role.MEMBER
            self.ctx.ch_id = None
            return None
        if pos == 1:
            if self.ctx.role is Role.CH:
                return None
            # strongest received advert wins
            self._join_best(lambda c, v: (v[0], -c))
            if self.ctx.ch_id is None:
                self.events.append(("standalone", epoch))
                return None
            return self._send("join")
        if pos == 2:
            return self._send("schedule") if self.ctx.role is Role.CH else None
        return self._data_round()

    def on_receive(self, frame, link, rssi, now):
        if frame.kind == "advert":
            self.adverts[frame.node_id] = (rssi, 0.0, 0)


class BeemNode(_ClusterNode):
    """Epoch layout: retained CHs and self-elected nodes advertise, uncovered
    nodes promote themselves and advertise, members join, CH sends its
    schedule, data rounds follow. Round 0 of the run is a degree discovery."""

    def __init__(self, node_id, params: BeemParams, n_slots: int, seed: int = 0):
        super().__init__(node_id, n_slots, seed, params.member_sleep)
        self.p = params
        self.degree = 0
        self.heard = set()

    def score(self):
        return beem_score(self.p.c_prob, self.energy_probe() * self.p.energy_max, self.p.energy_max)

    def on_round(self, r):
        if r == 0:
            self._mode = RadioMode.ALWAYS_ON
            return self._send("ping")
        self.degree = len(self.heard)
        q = r - 1
        pos = q % self.p.epoch
        epoch = q // self.p.epoch
        self.ctx.epoch = epoch
        if pos == 0:
            self.settled = False
            self._mode = RadioMode.ALWAYS_ON
            self.adverts = {}
            if self.ctx.role is Role.CH:
                self.events.append(("retained", epoch))
                return self._send("advert", degree=self.degree, score=self.score())
            self.ctx.ch_id = None
            if self.rng.random() < self.score():
                self._become_ch()
                self.events.append(("elected", epoch))
                return self._send("advert", degree=self.degree, score=self.score())
            return None
        if pos == 1:
            if self.ctx.role is not Role.CH and not self.adverts:
                self._become_ch()
                self.events.append(("elected", epoch))
                return self._send("advert", degree=self.degree, score=self.score())
            return None
        if pos == 2:
            if self.ctx.role is Role.CH:
                return None
            self._join_best(lambda c, v: beem_rank(v[1], v[2], c))
            return self._send("join")
        if pos == 3:
            return self._send("schedule") if self.ctx.role is Role.CH else None
        return self._data_round()

    def on_receive(self, frame, link, rssi, now):
        self.heard.add(frame.node_id)
        if frame.kind == "advert":
            self.adverts[frame.node_id] = (rssi, frame.score, frame.degree)


def leach_step(node: LeachNode, event):
    """Drive one step: ``("round", r)`` or ``("rx", frame, rssi)``."""
    if event[0] == "round":
        return node, node.on_round(event[1])
    node.on_receive(event[1], None, event[2], 0)
    return node, None


def beem_step(node: BeemNode, event):
    if event[0] == "round":
        return node, node.on_round(event[1])
    node.on_receive(event[1], None, event[2], 0)
    return node, None
