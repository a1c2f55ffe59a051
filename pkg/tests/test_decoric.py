from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from decoric_sim.decoric import (DecoricParams, NeighborEntry, NodeCtx, Phase, correction_on_receive,
                                 discovery_on_receive, election_key, election_on_receive,
                                 finalize_correction, integrate_new_node, new_node_ctx,
                                 phase_timer, stable_on_receive, stable_on_round, start_election,
                                 update_fail_counters)
from decoric_sim.experiments import golden_run
from decoric_sim.frame import Frame
from decoric_sim.protocol import Role
from decoric_sim.topology import LinkClass

P = LinkClass.POTENTIAL
X = LinkClass.EXTERNAL


def stable_ctx(node=0, **kw):
    return NodeCtx(node, DecoricParams(**kw), phase=Phase.STABLE)


def ch_frame(i, deg=3, conn=()):
    return Frame(i, i, deg, frozenset(conn), frozenset(conn))


def member_frame(i, ch, deg=3, conn=()):
    return Frame(i, ch, deg, frozenset(conn), frozenset(conn))


class ReferenceDetector:
    """Independent model of one neighbor's fail counter.

    Direct frame: counter 0, connected. Gossip while disconnected: halve.
    Round boundary: disconnect at >= T, remove at >= 2T, otherwise add one.
    """

    def __init__(self, t):
        self.t, self.c, self.conn, self.gone = t, Fraction(0), True, False

    def direct(self):
        self.c, self.conn = Fraction(0), True

    def gossip(self):
        if not self.conn:
            self.c /= 2

    def boundary(self):
        if self.c >= self.t:
            self.conn = False
        if self.c >= 2 * self.t:
            self.gone = True
        else:
            self.c += 1


# -- failure detector -------------------------------------------------------


def test_direct_frame_resets_counter():
    ctx = stable_ctx()
    stable_on_receive(ctx, ch_frame(1))
    for _ in range(5):
        update_fail_counters(ctx)
    assert ctx.neighbors[1].fail_counter == 5
    stable_on_receive(ctx, ch_frame(1))
    assert ctx.neighbors[1].fail_counter == 0 and ctx.neighbors[1].connected


def test_threshold_at_t_fail_and_removal_at_twice():
    ctx = stable_ctx(t_fail_ch=6)
    stable_on_receive(ctx, ch_frame(1))
    history = []
    for _ in range(13):
        removed = update_fail_counters(ctx)
        e = ctx.neighbors.get(1)
        history.append((e.fail_counter, e.connected) if e else ("removed", [r.id for r in removed]))
    # connected through six boundaries, dropped on the seventh, removed on the thirteenth
    assert history[5] == (6, True)
    assert history[6] == (7, False)
    assert history[11] == (12, False)
    assert history[12] == ("removed", [1])
    assert ("removed", 1, "ch") in ctx.events


def test_member_threshold_uses_member_timeout():
    ctx = stable_ctx(t_fail_nch=36)
    stable_on_receive(ctx, member_frame(2, 9))
    for r in range(1, 73):
        update_fail_counters(ctx)
        assert 2 in ctx.neighbors
        assert ctx.neighbors[2].connected == (r <= 36)
    update_fail_counters(ctx)
    assert 2 not in ctx.neighbors


def test_gossip_halves_only_when_disconnected():
    ctx = stable_ctx(t_fail_ch=6)
    stable_on_receive(ctx, ch_frame(1))
    stable_on_receive(ctx, member_frame(2, 1, conn={1}))
    for _ in range(4):
        update_fail_counters(ctx)
    stable_on_receive(ctx, member_frame(2, 1, conn={1}))
    assert ctx.neighbors[1].fail_counter == 4  # still connected, gossip is a no-op
    for _ in range(4):
        update_fail_counters(ctx)
    assert not ctx.neighbors[1].connected
    assert ctx.neighbors[1].fail_counter == 8
    stable_on_receive(ctx, member_frame(2, 1, conn={1}))
    assert ctx.neighbors[1].fail_counter == 4
    stable_on_receive(ctx, member_frame(2, 1, conn={1}))
    assert ctx.neighbors[1].fail_counter == 2


def test_gossip_about_unknown_node_is_ignored():
    ctx = stable_ctx()
    stable_on_receive(ctx, member_frame(2, 7, conn={5, 6}))
    assert set(ctx.neighbors) == {2}


def test_literal_corroboration_resets_connected_entries():
    ctx = stable_ctx(literal_corroboration=True)
    stable_on_receive(ctx, ch_frame(1))
    for _ in range(3):
        update_fail_counters(ctx)
    stable_on_receive(ctx, member_frame(2, 1, conn={1}))
    assert ctx.neighbors[1].fail_counter == 0


def _lockstep(literal, rounds=60):
    """Two members of CH 1 keep gossiping about it after it dies."""
    a, b = (stable_ctx(i, literal_corroboration=literal, t_fail_ch=6) for i in (2, 3))
    for ctx in (a, b):
        ctx.ch_id = 1
        stable_on_receive(ctx, ch_frame(1))
    stable_on_receive(a, b.frame())
    stable_on_receive(b, a.frame())
    for r in range(rounds):
        for ctx in (a, b):
            update_fail_counters(ctx)
        fa, fb = a.frame(), b.frame()
        stable_on_receive(a, fb)
        stable_on_receive(b, fa)
        if 1 not in a.neighbors and 1 not in b.neighbors:
            return r + 1
    return None


def test_literal_rule_never_detects_dead_ch_under_lockstep_gossip():
    assert _lockstep(literal=True) is None
    assert _lockstep(literal=False) == 13


@settings(max_examples=200)
@given(st.lists(st.sampled_from(["direct", "gossip", "boundary"]), max_size=80),
       st.integers(1, 8))
def test_detector_matches_reference(script, t):
    ctx = stable_ctx(t_fail_ch=t, t_fail_nch=6 * t)
    stable_on_receive(ctx, ch_frame(1))
    stable_on_receive(ctx, member_frame(2, 1, deg=2, conn={1}))
    ref = ReferenceDetector(t)
    for step in script:
        if ref.gone:
            break
        if step == "direct":
            stable_on_receive(ctx, ch_frame(1))
            ref.direct()
        elif step == "gossip":
            stable_on_receive(ctx, member_frame(2, 1, deg=2, conn={1}))
            ref.gossip()
        else:
            update_fail_counters(ctx)
            ref.boundary()
        ctx.neighbors.get(2, NeighborEntry(2, False)).fail_counter = 0  # keep the gossiper alive
        if ref.gone:
            assert 1 not in ctx.neighbors
        else:
            assert ctx.neighbors[1].fail_counter == ref.c
            assert ctx.neighbors[1].connected == ref.conn


# -- election and correction ------------------------------------------------


def test_election_key_tie_rules():
    assert election_key(5, 2) > election_key(5, 3)
    assert election_key(5, 3, "higher") > election_key(5, 2, "higher")
    assert election_key(6, 9) > election_key(5, 1)
    assert election_key(5, 9, [9, 2]) > election_key(5, 2, [9, 2])


def test_discovery_counts_in_range_senders():
    ctx = NodeCtx(0)
    for i, link in ((1, P), (2, X), (3, LinkClass.OUT_OF_RANGE), (1, P)):
        discovery_on_receive(ctx, Frame.ping(i), link)
    assert ctx.degree == 2
    assert ctx.neighbors[2].external


def test_election_picks_largest_potential_candidate():
    ctx = NodeCtx(0)
    for i in (1, 2, 3):
        discovery_on_receive(ctx, Frame.ping(i), P)
    start_election(ctx)
    election_on_receive(ctx, Frame(1, 1, 2), P)
    election_on_receive(ctx, Frame(2, 2, 5), X)  # external senders cannot be chosen
    election_on_receive(ctx, Frame(3, 3, 4), P)
    assert ctx.ch_id == 3 and ctx.ch_degree == 4
    # election frames do not tell us roles
    assert ctx.neighbors[3].role is Role.MEMBER


def test_correction_frame_naming_me_promotes():
    ctx = NodeCtx(5, phase=Phase.CORRECTION, ch_id=7)
    correction_on_receive(ctx, Frame(6, 5, 1), P)
    assert ctx.is_ch and ctx.promoted
    assert ("promoted", 6) in ctx.events


def test_member_hearing_two_unlinked_heads_becomes_bridge():
    ctx = NodeCtx(10, phase=Phase.CORRECTION, ch_id=3)
    correction_on_receive(ctx, Frame(3, 3, 7, frozenset({1, 2, 10})), P)
    correction_on_receive(ctx, Frame(9, 9, 4, frozenset({10, 12})), X)
    finalize_correction(ctx)
    assert ctx.role() is Role.BRIDGE
    assert ctx.events[-1][0] == "bridge"


def _bridge_candidate(node, deg, other, other_deg):
    """Member of CH 3 that hears foreign CH 9 and another member who hears it too."""
    ctx = NodeCtx(node, phase=Phase.CORRECTION, ch_id=3)
    correction_on_receive(ctx, Frame(3, 3, 7, frozenset({10, 14})), P)
    correction_on_receive(ctx, Frame(9, 9, 4, frozenset({10, 14})), X)
    correction_on_receive(ctx, Frame(other, 3, other_deg, frozenset({3, 9})), P)
    for k in range(deg - ctx.degree):  # pad to the wanted degree
        ctx.neighbors[100 + k] = NeighborEntry(100 + k, False)
    return finalize_correction(ctx)


def test_bridge_tie_goes_to_higher_key():
    assert _bridge_candidate(10, 5, 14, 4).role() is Role.BRIDGE
    assert _bridge_candidate(14, 4, 10, 5).role() is Role.MEMBER


def test_heads_in_range_need_no_bridge():
    ctx = NodeCtx(10, phase=Phase.CORRECTION, ch_id=3)
    correction_on_receive(ctx, Frame(3, 3, 7, frozenset({9, 10})), P)
    correction_on_receive(ctx, Frame(9, 9, 4, frozenset({3, 10})), X)
    finalize_correction(ctx)
    assert ctx.role() is Role.MEMBER


def test_setup_phase_sequence():
    ctx = NodeCtx(0)
    phases = []
    for _ in range(3):
        phase_timer(ctx)
        phases.append(ctx.phase)
    assert phases == [Phase.ELECTION, Phase.CORRECTION, Phase.STABLE]


# -- stable triggers --------------------------------------------------------


def test_losing_ch_triggers_election():
    ctx = stable_ctx(t_fail_ch=2)
    ctx.ch_id = 1
    stable_on_receive(ctx, ch_frame(1))
    for _ in range(4):  # removal happens on boundary 2T + 1
        _, actions = stable_on_round(ctx)
        assert not ctx.pending_election
    _, actions = stable_on_round(ctx)
    assert ctx.pending_election
    assert actions[0].phase is Phase.ELECTION
    phase_timer(ctx)
    assert ctx.phase is Phase.ELECTION


def test_member_loss_does_not_trigger():
    ctx = stable_ctx(t_fail_nch=1)
    ctx.ch_id = 1
    stable_on_receive(ctx, ch_frame(1))
    stable_on_receive(ctx, member_frame(2, 1))
    for _ in range(3):
        stable_on_receive(ctx, ch_frame(1))
        stable_on_round(ctx)
    assert 2 not in ctx.neighbors and not ctx.pending_election


def test_stronger_new_ch_triggers_election():
    ctx = stable_ctx()
    ctx.ch_id = 1
    stable_on_receive(ctx, ch_frame(1, deg=3))
    _, action = stable_on_receive(ctx, Frame(8, 1, 2, new_ch_id=8), P)
    assert not ctx.pending_election
    _, action = stable_on_receive(ctx, Frame(9, 1, 6, new_ch_id=9), P)
    assert ctx.pending_election and action.phase is Phase.ELECTION


def test_ch_abdication_triggers_election():
    ctx = stable_ctx()
    ctx.ch_id = 1
    stable_on_receive(ctx, ch_frame(1))
    stable_on_receive(ctx, member_frame(1, 4))
    assert ctx.pending_election


def test_stable_member_named_by_frame_is_promoted():
    ctx = stable_ctx(5)
    ctx.ch_id = 1
    stable_on_receive(ctx, member_frame(6, 5))
    assert ctx.is_ch


# -- joining ----------------------------------------------------------------


def _heard(ch_deg, members=()):
    frames = [(ch_frame(1, deg=ch_deg), P)]
    frames += [(member_frame(m, 1), P) for m in members]
    return frames


def test_lower_degree_node_joins_as_member():
    ctx = new_node_ctx(50)
    integrate_new_node(ctx, [_heard(6, members=(2,))] * 8)
    assert ("affiliated", 1) in ctx.events
    assert ("joined", "member") in ctx.events
    assert ctx.phase is Phase.STABLE and ctx.ch_id == 1


def test_higher_degree_node_announces_then_elects():
    ctx = new_node_ctx(50)
    integrate_new_node(ctx, [_heard(2, members=(2, 3, 4, 5))] * 7)
    assert ("joined", "announce") in ctx.events
    assert ctx.announce_new_ch and ctx.frame(new_ch=True).new_ch_id == 50
    integrate_new_node(ctx, [[]])
    assert ctx.phase is Phase.ELECTION


def test_isolated_node_becomes_singleton():
    ctx = new_node_ctx(50)
    integrate_new_node(ctx, [[]] * 8)
    assert ("joined", "singleton") in ctx.events and ctx.is_ch


# -- worked example ---------------------------------------------------------


@pytest.fixture(scope="module")
def golden():
    return golden_run()


def test_golden_degree(golden):
    assert golden.degree_3 == 7


def test_golden_heads_after_election(golden):
    assert golden.heads_after_election == {3, 4, 8, 9, 11}


def test_golden_bridge(golden):
    assert golden.bridges == {10}
    snap3 = next(r for r in golden.trace.of("snap") if r["round"] == 3)
    assert snap3["nodes"]["14"][0] == "member"


def test_golden_reelection_after_kill(golden):
    assert golden.cluster_of_12_13 == (12, 12)
    assert 4 not in golden.heads_after_kill and 12 in golden.heads_after_kill
