"""Scenario drivers behind the acceptance suite and the CLI sweeps."""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass

import networkx as nx

from . import metrics
from .config import build, validate
from .decoric import Phase
from .engine import FaultEvent
from .protocol import Role
from .topology import LinkClass, Topology, classify_link, generate_random_topology

CHANGE_KINDS = ("fail_ch", "fail_bridge", "fail_nch", "add_low", "add_high")


def all_stable(sim) -> bool:
    return all(sim.nodes[i].is_settled() for i in sim.alive)


def settle_network(sim, max_rounds: int = 10) -> bool:
    """Run until every node has finished setup, plus one round."""
    for r in range(1, max_rounds + 1):
        sim.run_until(r * sim.round)
        if all_stable(sim):
            return True
    return False


def _degree_key(deg, node):
    return (deg, -node)


# ---------------------------------------------------------------------------
# Worked 14-node example


@dataclass
class GoldenResult:
    degree_3: int
    heads_after_election: set
    heads_after_correction: set
    bridges: set
    heads_after_kill: set
    cluster_of_12_13: tuple
    trace: object


def golden_run(kill_round: int = 5, seed: int = 1, rounds: int = 40) -> GoldenResult:
    """Cluster the hand-built example network, then kill node 4."""
    from .decoric import DecoricNode, DecoricParams
    from .engine import Simulation
    from .mac_timing import MacParams
    from .topology import example_topology

    topo = example_topology()
    params = DecoricParams()
    mac = MacParams(N=15)
    R = mac.min_round
    sim = Simulation(topo, lambda i, joining: DecoricNode(i, params, mac.N, joining), mac=mac,
                     seed=seed, horizon=rounds * R,
                     faults=[FaultEvent(kill_round * R + 1000, 4, "kill")])
    trace = sim.run()
    snaps = {r["round"]: r["nodes"] for r in trace.of("snap")}

    def heads(r, roles=("ch", "bridge")):
        return {int(k) for k, v in snaps[r].items() if v[0] in roles}

    last = max(snaps)
    return GoldenResult(
        degree_3=len([e for e in sim.nodes[3].ctx.neighbors.values()]),
        heads_after_election=heads(2, ("ch",)),
        heads_after_correction=heads(3, ("ch",)),
        bridges=heads(3, ("bridge",)),
        heads_after_kill=heads(last),
        cluster_of_12_13=(snaps[last]["12"][1], snaps[last]["13"][1]),
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Resilience (one injected change per run)


@dataclass
class ResilienceRun:
    seed: int
    kind: str
    sample: metrics.ResilienceSample | None
    skipped: str = ""
    conserved: bool = True


def _pick_add_position(sim, topo: Topology, high: bool, rng: random.Random, new_id: int):
    """Search positions for a new node whose degree is below (or above) its
    prospective CH's degree."""
    heads = {i for i in sim.alive if sim.nodes[i].role() is Role.CH}
    deg = {i: sim.nodes[i].ctx.degree for i in sim.alive}
    w, h = topo.area
    best = None
    draws = ((rng.uniform(0, w), rng.uniform(0, h)) for _ in range(400))
    # high-degree spots can be small; fall back to a 1 m grid scan
    grid = ((float(x), float(y)) for x in range(int(w) + 1) for y in range(int(h) + 1))
    for k, pos in enumerate(itertools.chain(draws, grid)):
        if k == 400 and best:
            break
        t2 = topo.with_node(new_id, pos)
        inrange = [i for i in sim.alive if classify_link(new_id, i, t2) is not LinkClass.OUT_OF_RANGE]
        pot_heads = [c for c in heads if classify_link(new_id, c, t2) is LinkClass.POTENTIAL]
        if not pot_heads:
            continue
        d = len(inrange)
        c = max(pot_heads, key=lambda c: _degree_key(deg[c] + 1, c))
        mine, theirs = _degree_key(d, new_id), _degree_key(deg[c] + 1, c)
        if high and mine > theirs:
            if best is None or d > best[0]:
                best = (d, pos)
        if not high and mine < theirs and d <= deg[c] - 2:
            return pos
    return best[1] if best else None


def _resilience_cfg(n, cfg_over):
    # one spare slot for an added node, so kill and add runs share a schedule
    raw = {"n_nodes": n, "max_nodes": n + 1, "horizon_s": 10_000.0,
           "trace": {"snapshot_every": 1000}}
    raw.update(cfg_over or {})
    return validate(raw)


def resilience_run(seed: int, kind: str, n: int = 50, cfg_over=None) -> ResilienceRun:
    b = build(_resilience_cfg(n, cfg_over), seed)
    sim = b.sim
    rng = random.Random(f"resilience:{seed}:{kind}")
    if not settle_network(sim):
        return ResilienceRun(seed, kind, None, "setup did not settle")
    # let the failure detector warm up
    warm = sim.round_index + 2 * b.cycle_rounds
    sim.run_until(warm * sim.round)
    t_inj = sim.now + rng.randrange(sim.round)
    R = sim.round
    if kind.startswith("fail"):
        want = {"fail_ch": Role.CH, "fail_bridge": Role.BRIDGE, "fail_nch": Role.MEMBER}[kind]
        cands = sorted(i for i in sim.alive if sim.nodes[i].role() is want)
        if not cands:
            return ResilienceRun(seed, kind, None, f"no {want.value} node in this topology")
        victim = rng.choice(cands)
        sim.schedule_fault(FaultEvent(t_inj, victim, "kill"))
        T = sim.nodes[cands[0]].ctx.params.t_fail_ch if want is not Role.MEMBER else \
            sim.nodes[cands[0]].ctx.params.t_fail_nch
        limit = t_inj + (3 * T + 10) * R
    else:
        new_id = n
        pos = _pick_add_position(sim, sim.topo, kind == "add_high", rng, new_id)
        if pos is None:
            return ResilienceRun(seed, kind, None, "no suitable position")
        sim.schedule_fault(FaultEvent(t_inj, new_id, "add", pos))
        limit = t_inj + (3 * b.cycle_rounds + 10) * R
    sim.run_until(limit)
    trace = sim.finish()
    samples = metrics.resilience_latencies(trace)
    return ResilienceRun(seed, kind, samples[0] if samples else None,
                         conserved=not metrics.conservation_violations(trace))


# ---------------------------------------------------------------------------
# Setup-phase connectivity and CH counts


def connected_udg(topo: Topology) -> bool:
    g = nx.Graph()
    g.add_nodes_from(topo.ids)
    ids = topo.ids
    for k, a in enumerate(ids):
        for b_ in ids[k + 1:]:
            if topo.distance(a, b_) <= topo.radio_range:
                g.add_edge(a, b_)
    return nx.is_connected(g)


@dataclass
class StableResult:
    seed: int
    connectivity: float | None
    ch_count: int | None
    trace: object = None
    conserved: bool = True


def stable_run(seed: int, n: int, cfg_over=None, topology: Topology | None = None,
               keep_trace=False) -> StableResult:
    raw = {"n_nodes": n, "horizon_s": 60.0, "trace": {"snapshot_every": 1}}
    raw.update(cfg_over or {})
    cfg = validate(raw)
    b = build(cfg, seed, topology=topology, stop_when=all_stable)
    trace = b.sim.run()
    snap = metrics.stable_entry(trace)
    ok = not metrics.conservation_violations(trace)
    if snap is None:
        return StableResult(seed, None, None, trace if keep_trace else None, ok)
    return StableResult(seed, metrics.connectivity_ratio(snap), metrics.ch_count(snap),
                        trace if keep_trace else None, ok)


def connected_topologies(n: int, count: int, radio_range: float, start_seed: int = 0):
    """First ``count`` seeds whose random placement has a connected unit-disk graph."""
    out = []
    s = start_seed
    while len(out) < count:
        t = generate_random_topology(n, (100.0, 100.0), s, radio_range=radio_range)
        if connected_udg(t):
            out.append((s, t))
        s += 1
    return out


# ---------------------------------------------------------------------------
# Comparative power and lifetime


@dataclass
class PowerResult:
    protocol: str
    seed: int
    avg_power_mw: float
    first_death_s: float | None
    deaths: list
    conserved: bool = True


def power_run(protocol: str, seed: int, n: int = 50, horizon_s: float = 1000.0,
              cfg_over=None, keep_trace=False):
    raw = {"protocol": protocol, "n_nodes": n, "horizon_s": horizon_s,
           "trace": {"snapshot_every": 10**6}}
    raw.update(cfg_over or {})
    cfg = validate(raw)
    b = build(cfg, seed)
    trace = b.sim.run()
    ps = metrics.power_stats(trace)
    res = PowerResult(protocol, seed, ps.avg_power_mw, ps.first_death_s, ps.death_times_s,
                      not metrics.conservation_violations(trace))
    return (res, trace) if keep_trace else res


def bridge_seeds(count: int, n: int = 50, start: int = 0, cfg_over=None) -> list:
    """First ``count`` seeds whose settled network contains at least one Bridge-CH."""
    out = []
    s = start
    cfg = _resilience_cfg(n, cfg_over)
    while len(out) < count:
        b = build(cfg, s)
        settle_network(b.sim)
        if any(b.sim.nodes[i].role() is Role.BRIDGE for i in b.sim.alive):
            out.append(s)
        s += 1
    return out


# ---------------------------------------------------------------------------
# Round and cycle delivery guarantees


@dataclass
class GuaranteeResult:
    seed: int
    setup_violations: list  # (round, node) pairs with no transmission
    cycle_violations: list  # (cycle index, member, ch) with no frame from the CH
    cycles_checked: int
    conserved: bool = True


def guarantee_run(seed: int, n: int = 50, cycles: int = 5, cfg_over=None) -> GuaranteeResult:
    raw = {"n_nodes": n, "horizon_s": 1.0, "trace": {"level": "full", "snapshot_every": 1}}
    raw.update(cfg_over or {})
    cfg = validate(raw)
    b = build(cfg, seed)
    sim = b.sim
    C, R = b.cycle_rounds, sim.round
    sim.horizon = 10**12
    settle_network(sim)
    first_cycle = -(-(sim.round_index + 1) // C) * C  # next cycle boundary after Stable entry
    end_round = first_cycle + cycles * C
    sim.run_until(end_round * R)
    trace = sim.finish()
    tx_rounds = {}
    for r in trace.of("tx"):
        tx_rounds.setdefault(r["t"] // R, set()).add(r["node"])
    setup = [(k, v) for k in (0, 1, 2) for v in sorted(sim.topo.ids)
             if v not in tx_rounds.get(k, set())]
    heard = {}
    for r in trace.of("rx"):
        heard.setdefault((r["node"], r["from"]), []).append(r["t"])
    # memberships at each cycle start; use the snapshot taken at that boundary
    snaps = {s["round"]: s for s in trace.of("snap")}
    violations = []
    for k in range(cycles):
        r0 = first_cycle + k * C
        snap = snaps.get(r0)
        if snap is None:
            continue
        lo, hi = r0 * R, (r0 + C) * R
        for sid, (role, ch, _) in snap["nodes"].items():
            m = int(sid)
            if role != Role.MEMBER.value or ch is None:
                continue
            ts = heard.get((m, ch), [])
            if not any(lo <= t < hi for t in ts):
                violations.append((k, m, ch))
    return GuaranteeResult(seed, setup, violations, cycles,
                           not metrics.conservation_violations(trace))
