"""DeCoRIC node state machine.

A node passes through Discovery, Election and Correction (one round each) and
then stays in Stable, where duty-cycled health frames feed a gossip failure
detector. The step functions below mutate the given context in place and return
it, so they compose in scripted tests as well as under the engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .frame import Frame
from .protocol import ProtocolNode, RadioMode, Role, TxRequest
from .topology import LinkClass


class Phase(Enum):
    DISCOVERY = "discovery"
    ELECTION = "election"
    CORRECTION = "correction"
    STABLE = "stable"


class ActionKind(Enum):
    NONE = "none"
    BROADCAST = "broadcast"
    TRANSITION = "transition"


@dataclass(frozen=True)
class Action:
    kind: ActionKind = ActionKind.NONE
    frame: Frame | None = None
    phase: Phase | None = None


NO_ACTION = Action()


@dataclass(frozen=True)
class DecoricParams:
    t_fail_ch: int = 6
    t_fail_nch: int = 36
    cycle_rounds: int = 6
    tie_rule: object = "lower"  # "lower", "higher" or a priority list of ids
    literal_corroboration: bool = False
    pair_bridges: bool = True
    correction_order: str = "two_pass"  # "two_pass", "key" or "id"
    join_listen_rounds: int = 3
    max_nodes: int = 200

    def __post_init__(self):
        if self.t_fail_ch < 1 or self.t_fail_nch < 1:
            raise ValueError("fail thresholds must be >= 1 round")
        if self.cycle_rounds < 1:
            raise ValueError("cycle_rounds must be >= 1")
        if self.correction_order not in ("two_pass", "key", "id"):
            raise ValueError("correction_order must be 'two_pass', 'key' or 'id'")
        if not (self.tie_rule in ("lower", "higher") or isinstance(self.tie_rule, (list, tuple))):
            raise ValueError("tie_rule must be 'lower', 'higher' or a list of ids")


def election_key(degree: int, node: int, tie_rule="lower"):
    """Total order used for CH choice: larger key wins."""
    if tie_rule == "lower":
        return (degree, -node)
    if tie_rule == "higher":
        return (degree, node)
    prio = list(tie_rule)
    rank = prio.index(node) if node in prio else len(prio) + node
    return (degree, -rank)


@dataclass
class NeighborEntry:
    id: int
    external: bool
    fail_counter: object = 0  # int, or Fraction once halved
    connected: bool = True
    role: Role = Role.MEMBER
    degree: int = 0
    ch_id: int | None = None
    neighbors: frozenset = frozenset()


@dataclass
class NodeCtx:
    id: int
    params: DecoricParams = field(default_factory=DecoricParams)
    phase: Phase = Phase.DISCOVERY
    ch_id: int = -1
    neighbors: dict = field(default_factory=dict)
    is_bridge: bool = False
    rounds_elapsed: int = 0
    cycle_pos: int = 0
    promoted: bool = False
    pending_election: bool = False
    announce_new_ch: bool = False
    joining: bool = False
    join_rounds: int = 0
    ch_degree: int = 0
    best_key: tuple | None = None
    events: list = field(default_factory=list)

    def __post_init__(self):
        if self.ch_id < 0:
            self.ch_id = self.id

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    @property
    def t_fail_ch(self) -> int:
        return self.params.t_fail_ch

    @property
    def t_fail_nch(self) -> int:
        return self.params.t_fail_nch

    @property
    def is_ch(self) -> bool:
        return self.ch_id == self.id

    def connectivity(self) -> frozenset:
        return frozenset(i for i, e in self.neighbors.items() if e.connected)

    def key(self, node: int, degree: int):
        return election_key(degree, node, self.params.tie_rule)

    def role(self) -> Role:
        if self.is_bridge:
            return Role.BRIDGE
        return Role.CH if self.is_ch else Role.MEMBER

    def frame(self, new_ch: bool = False) -> Frame:
        if self.phase is Phase.DISCOVERY and not self.joining:
            return Frame.ping(self.id)
        ch = self.id if self.phase is Phase.ELECTION else self.ch_id
        return Frame(self.id, ch, self.degree, frozenset(self.neighbors), self.connectivity(),
                     self.id if new_ch else None)


# ---------------------------------------------------------------------------
# Receive handlers


def _touch(ctx: NodeCtx, f: Frame, link: LinkClass) -> tuple:
    """Record direct evidence from the sender. Returns (entry, was_new)."""
    e = ctx.neighbors.get(f.node_id)
    new = e is None
    if new:
        e = NeighborEntry(f.node_id, external=link is LinkClass.EXTERNAL)
        ctx.neighbors[f.node_id] = e
    e.fail_counter = 0
    e.connected = True
    return e, new


def _learn(e: NeighborEntry, f: Frame, role: bool = True):
    if f.neighbors or f.degree:
        e.degree = f.degree
        e.neighbors = f.neighbors
    if role:
        e.ch_id = f.ch_id
        e.role = Role.CH if f.ch_id == f.node_id else Role.MEMBER


def discovery_on_receive(ctx: NodeCtx, f: Frame, link: LinkClass) -> NodeCtx:
    if link is LinkClass.OUT_OF_RANGE or f.node_id == ctx.id:
        return ctx
    e, new = _touch(ctx, f, link)
    if ctx.joining and (f.degree or f.neighbors):
        _learn(e, f)
    return ctx


def election_on_receive(ctx: NodeCtx, f: Frame, link: LinkClass = LinkClass.POTENTIAL) -> NodeCtx:
    if link is LinkClass.OUT_OF_RANGE or f.node_id == ctx.id:
        return ctx
    e, _ = _touch(ctx, f, link)
    # every election frame names its sender, so it says nothing about roles
    _learn(e, f, role=False)
    if ctx.best_key is None:
        ctx.best_key = ctx.key(ctx.id, ctx.degree)
    # only self-candidate frames (election frames and CH health frames) compete
    if link is LinkClass.POTENTIAL and f.ch_id == f.node_id:
        k = ctx.key(f.node_id, f.degree)
        if k > ctx.best_key:
            ctx.best_key = k
            ctx.ch_id = f.node_id
            ctx.ch_degree = f.degree
    return ctx


def correction_on_receive(ctx: NodeCtx, f: Frame, link: LinkClass = LinkClass.POTENTIAL) -> NodeCtx:
    """Record the sender's cluster view; a frame naming this node as CH promotes it.

    Bridge decisions need every Correction frame of the round, so they are taken
    by ``finalize_correction`` at the round boundary.
    """
    if link is LinkClass.OUT_OF_RANGE or f.node_id == ctx.id:
        return ctx
    e, _ = _touch(ctx, f, link)
    _learn(e, f)
    if f.ch_id == ctx.id and not ctx.is_ch:
        ctx.ch_id = ctx.id
        ctx.promoted = True
        ctx.events.append(("promoted", f.node_id))
    elif f.ch_id == ctx.id:
        ctx.promoted = True
    return ctx


def _heard_chs(ctx: NodeCtx) -> dict:
    return {i: e for i, e in ctx.neighbors.items() if e.role is Role.CH}


def bridge_pairs(ctx: NodeCtx) -> set:
    """CH pairs this member should bridge, after the tie rule among candidates."""
    if ctx.is_ch:
        return set()
    c1 = ctx.ch_id
    chs = _heard_chs(ctx)
    mine = set()
    for c2, e2 in chs.items():
        if c2 == c1 or c1 in e2.neighbors:
            continue
        mine.add(frozenset((c1, c2)))
    won = set()
    my_key = ctx.key(ctx.id, ctx.degree)
    for pair in mine:
        a, b = tuple(pair)
        beaten = False
        for y, ey in ctx.neighbors.items():
            if ey.role is not Role.MEMBER or ey.ch_id not in pair:
                continue
            other = b if ey.ch_id == a else a
            if other in ey.neighbors and ctx.key(y, ey.degree) > my_key:
                beaten = True
                break
        if not beaten:
            won.add(pair)
    return won


def pair_bridge_partners(ctx: NodeCtx) -> set:
    """Members of foreign clusters that, together with this node, must form a
    two-hop bridge because no single node hears both CHs."""
    if ctx.is_ch:
        return set()
    c1 = ctx.ch_id
    e1 = ctx.neighbors.get(c1)
    if e1 is None:
        return set()
    out = set()
    for y, ey in ctx.neighbors.items():
        if ey.role is not Role.MEMBER or ey.ch_id is None:
            continue
        c2 = ey.ch_id
        if c2 == c1 or c2 in e1.neighbors or c2 in ctx.neighbors or c1 in ey.neighbors:
            continue
        if c2 == ctx.id:
            continue
        shared = any(c1 in ez.neighbors and c2 in ez.neighbors
                     for z, ez in ctx.neighbors.items() if z != y)
        if not shared:
            out.add(y)
    return out


def finalize_correction(ctx: NodeCtx) -> NodeCtx:
    pairs = bridge_pairs(ctx)
    partners = pair_bridge_partners(ctx) if ctx.params.pair_bridges else set()
    if pairs or partners:
        ctx.is_bridge = True
        ctx.ch_id = ctx.id
        ctx.events.append(("bridge", sorted(tuple(sorted(p)) for p in pairs), sorted(partners)))
    return ctx


def stable_on_receive(ctx: NodeCtx, f: Frame, link: LinkClass = LinkClass.POTENTIAL):
    if link is LinkClass.OUT_OF_RANGE or f.node_id == ctx.id:
        return ctx, NO_ACTION
    e, new = _touch(ctx, f, link)
    _learn(e, f)
    if new:
        ctx.events.append(("neighbor_added", f.node_id))
    if f.node_id == ctx.ch_id and not ctx.is_ch:
        ctx.ch_degree = f.degree
        if f.ch_id != f.node_id and not ctx.pending_election:
            # my CH has joined another cluster
            ctx.pending_election = True
            ctx.events.append(("trigger", "ch_abdicated", f.node_id))
    if f.ch_id == ctx.id and not ctx.is_ch and f.node_id != ctx.id:
        ctx.ch_id = ctx.id
        ctx.events.append(("promoted", f.node_id))
    for i in f.connectivity:
        if i == ctx.id:
            continue
        g = ctx.neighbors.get(i)
        if g is None:
            continue  # gossip about nodes we never heard directly is ignored
        if g.connected:
            if ctx.params.literal_corroboration:
                g.fail_counter = 0
        else:
            g.fail_counter = Fraction(g.fail_counter) / 2
    action = NO_ACTION
    if (f.new_ch_id is not None and f.new_ch_id == f.node_id and link is LinkClass.POTENTIAL
            and not ctx.pending_election):
        mine = ctx.key(ctx.id, ctx.degree) if ctx.is_ch else ctx.key(ctx.ch_id, ctx.ch_degree)
        if ctx.key(f.node_id, f.degree) > mine:
            ctx.pending_election = True
            ctx.events.append(("trigger", "new_ch", f.node_id))
            action = Action(ActionKind.TRANSITION, phase=Phase.ELECTION)
    return ctx, action


def on_receive(ctx: NodeCtx, f: Frame, link: LinkClass) -> NodeCtx:
    if ctx.phase is Phase.DISCOVERY:
        return discovery_on_receive(ctx, f, link)
    if ctx.phase is Phase.ELECTION:
        return election_on_receive(ctx, f, link)
    if ctx.phase is Phase.CORRECTION:
        return correction_on_receive(ctx, f, link)
    return stable_on_receive(ctx, f, link)[0]


# ---------------------------------------------------------------------------
# Round handlers


def update_fail_counters(ctx: NodeCtx) -> list:
    """Round-boundary block of the failure detector. Returns removed entries."""
    removed = []
    for i in sorted(ctx.neighbors):
        e = ctx.neighbors[i]
        t = ctx.t_fail_ch if e.role in (Role.CH, Role.BRIDGE) else ctx.t_fail_nch
        if e.fail_counter >= t:
            e.connected = False
        if e.fail_counter >= 2 * t:
            del ctx.neighbors[i]
            removed.append(e)
        else:
            e.fail_counter = e.fail_counter + 1
    for e in removed:
        ctx.events.append(("removed", e.id, e.role.value))
    return removed


def stable_on_round(ctx: NodeCtx):
    """Failure-detector step plus broadcast decision for one Stable round."""
    removed = update_fail_counters(ctx)
    actions = []
    lost_ch = not ctx.is_ch and ctx.ch_id not in ctx.neighbors
    if any(e.role in (Role.CH, Role.BRIDGE) for e in removed) or lost_ch:
        if not ctx.pending_election:
            ctx.events.append(("trigger", "ch_lost", [e.id for e in removed]))
        ctx.pending_election = True
    if ctx.pending_election:
        actions.append(Action(ActionKind.TRANSITION, phase=Phase.ELECTION))
    elif ctx.is_ch or ctx.cycle_pos == 0:
        actions.append(Action(ActionKind.BROADCAST, frame=ctx.frame()))
    return ctx, actions


def _enter(ctx: NodeCtx, phase: Phase):
    ctx.events.append(("phase", ctx.phase.value, phase.value))
    ctx.phase = phase


def start_election(ctx: NodeCtx) -> NodeCtx:
    ctx.pending_election = False
    ctx.is_bridge = False
    ctx.promoted = False
    best_id, best_deg = ctx.id, ctx.degree
    best = ctx.key(ctx.id, ctx.degree)
    for i, e in ctx.neighbors.items():
        if e.role is Role.CH and not e.external and e.connected:
            k = ctx.key(i, e.degree)
            if k > best:
                best, best_id, best_deg = k, i, e.degree
    ctx.best_key = best
    ctx.ch_id = best_id
    ctx.ch_degree = best_deg
    _enter(ctx, Phase.ELECTION)
    return ctx


def phase_timer(ctx: NodeCtx, round_elapsed: bool = True):
    """Advance the setup phases at a round boundary."""
    if not round_elapsed:
        return ctx, NO_ACTION
    ctx.rounds_elapsed += 1
    if ctx.phase is Phase.DISCOVERY:
        start_election(ctx)
        return ctx, Action(ActionKind.TRANSITION, phase=Phase.ELECTION)
    if ctx.phase is Phase.ELECTION:
        _enter(ctx, Phase.CORRECTION)
        return ctx, Action(ActionKind.TRANSITION, phase=Phase.CORRECTION)
    if ctx.phase is Phase.CORRECTION:
        finalize_correction(ctx)
        _enter(ctx, Phase.STABLE)
        return ctx, Action(ActionKind.TRANSITION, phase=Phase.STABLE)
    if ctx.pending_election:
        start_election(ctx)
        return ctx, Action(ActionKind.TRANSITION, phase=Phase.ELECTION)
    return ctx, NO_ACTION


# ---------------------------------------------------------------------------
# Joining an already stable network


def new_node_ctx(node_id: int, params: DecoricParams | None = None) -> NodeCtx:
    return NodeCtx(node_id, params or DecoricParams(), joining=True)


def _best_heard_ch(ctx: NodeCtx):
    best = None
    for i, e in ctx.neighbors.items():
        if e.role is Role.CH and not e.external:
            k = ctx.key(i, e.degree)
            if best is None or k > best[0]:
                best = (k, i, e.degree)
    return best


def join_on_round(ctx: NodeCtx) -> NodeCtx:
    """Round boundary while listening as a newly added node."""
    ctx.join_rounds += 1
    p = ctx.params
    if ctx.announce_new_ch:
        # announcement round done: run a normal re-election from here
        ctx.announce_new_ch = False
        ctx.joining = False
        start_election(ctx)
        return ctx
    if ctx.join_rounds >= p.join_listen_rounds and ctx.ch_id == ctx.id:
        best = _best_heard_ch(ctx)
        if best is not None:
            ctx.ch_id, ctx.ch_degree = best[1], best[2]
            ctx.events.append(("affiliated", best[1]))
    if ctx.join_rounds > p.cycle_rounds:  # one full cycle of member frames
        if ctx.ch_id == ctx.id:
            ctx.joining = False
            ctx.phase = Phase.STABLE
            ctx.events.append(("phase", "discovery", "stable"))
            ctx.events.append(("joined", "singleton"))
        elif ctx.key(ctx.id, ctx.degree) > ctx.key(ctx.ch_id, ctx.ch_degree):
            ctx.announce_new_ch = True
            ctx.events.append(("joined", "announce"))
        else:
            ctx.joining = False
            ctx.phase = Phase.STABLE
            ctx.events.append(("phase", "discovery", "stable"))
            ctx.events.append(("joined", "member"))
    return ctx


def integrate_new_node(ctx_new: NodeCtx, observed) -> NodeCtx:
    """Feed a newly added node the frames it hears, round by round.

    ``observed`` is a sequence of rounds, each a list of (Frame, LinkClass)."""
    for frames in observed:
        for f, link in frames:
            discovery_on_receive(ctx_new, f, link)
        if not ctx_new.joining:
            break
        join_on_round(ctx_new)
    return ctx_new


# ---------------------------------------------------------------------------
# Engine adapter


class DecoricNode(ProtocolNode):
    def __init__(self, node_id: int, params: DecoricParams, n_slots: int, joining: bool = False):
        self.id = node_id
        self.ctx = new_node_ctx(node_id, params) if joining else NodeCtx(node_id, params)
        self.n_slots = n_slots
        self._tx_new_ch = False
        self._announced_ch = None

    @property
    def events(self):
        return self.ctx.events

    def _id_slot(self):
        return TxRequest(min(self.id, self.n_slots - 1))

    def _correction_slots(self):
        c = self.ctx
        order = c.params.correction_order
        self._announced_ch = None
        if order == "id":
            return self._id_slot()
        n = self.n_slots
        if order == "key":
            return TxRequest(min(c.degree, n - 1), max(0, n - 1 - self.id))
        # first pass for everyone, second pass only for late promotions
        slot = min(self.id, n - 1)
        return [TxRequest(slot, half=0), TxRequest(slot, half=1)]

    def on_round(self, round_index: int):
        c = self.ctx
        c.cycle_pos = round_index % c.params.cycle_rounds
        if c.joining:
            join_on_round(c)
            if c.announce_new_ch:
                self._tx_new_ch = True
                return self._id_slot()
            if c.joining:
                return None
            if c.phase is Phase.STABLE:
                return self._id_slot() if (c.is_ch or c.cycle_pos == 0) else None
            return self._id_slot()
        if round_index == 0:
            return self._id_slot()
        if c.phase is Phase.STABLE:
            stable_on_round(c)
        elif c.phase is not Phase.DISCOVERY:
            update_fail_counters(c)
        phase_timer(c, True)
        if c.phase is Phase.CORRECTION:
            return self._correction_slots()
        if c.phase is Phase.ELECTION:
            return self._id_slot()
        if c.is_ch or c.cycle_pos == 0:
            return self._id_slot()
        return None

    def build_frame(self):
        c = self.ctx
        if c.phase is Phase.CORRECTION and c.params.correction_order == "two_pass":
            if self._announced_ch is None:
                self._announced_ch = c.ch_id
            elif self._announced_ch == c.ch_id:
                return None
            else:
                self._announced_ch = c.ch_id
        f = c.frame(new_ch=self._tx_new_ch)
        self._tx_new_ch = False
        return f

    def on_receive(self, frame, link, rssi, now):
        on_receive(self.ctx, frame, link)

    def radio_mode(self):
        c = self.ctx
        if c.joining or c.phase is not Phase.STABLE:
            return RadioMode.ALWAYS_ON
        return RadioMode.RDC

    def role(self):
        return self.ctx.role()

    def cluster_head(self):
        return self.ctx.ch_id

    def is_settled(self):
        return self.ctx.phase is Phase.STABLE and not self.ctx.joining

    @property
    def phase(self):
        return self.ctx.phase
