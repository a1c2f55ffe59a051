"""Evaluation quantities computed from traces.

Everything here is post-processing over trace records, so a stored JSONL trace
can be re-analysed without re-running the simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx

from .protocol import Role

CLUSTER_ROLES = (Role.CH.value, Role.BRIDGE.value)


@dataclass
class ClusterSnapshot:
    time: int
    roles: dict  # node -> Role value string
    ch: dict  # node -> ch id (or None)
    positions: dict = field(default_factory=dict)
    radio_range: float = 50.0
    settled: dict = field(default_factory=dict)

    @classmethod
    def from_record(cls, rec, positions, radio_range):
        roles, ch, settled = {}, {}, {}
        for k, v in rec["nodes"].items():
            roles[int(k)] = v[0]
            ch[int(k)] = v[1]
            settled[int(k)] = v[2]
        return cls(rec["t"], roles, ch, positions, radio_range, settled)

    @property
    def alive(self):
        return [i for i, r in self.roles.items() if r != Role.DEAD.value]

    def edges(self):
        """Member-CH edges plus CH-CH edges for heads within radio range."""
        out = set()
        heads = sorted(i for i, r in self.roles.items() if r in CLUSTER_ROLES)
        for i, r in self.roles.items():
            if r == Role.MEMBER.value:
                c = self.ch.get(i)
                if c is not None and c != i and self.roles.get(c) in CLUSTER_ROLES:
                    out.add((min(i, c), max(i, c)))
        for k, a in enumerate(heads):
            pa = self.positions[a]
            for b in heads[k + 1:]:
                if math.dist(pa, self.positions[b]) <= self.radio_range:
                    out.add((a, b))
        return out


def connectivity_ratio(s: ClusterSnapshot, n_total: int | None = None) -> float:
    alive = s.alive
    if n_total is None:
        n_total = len(alive)
    if n_total <= 0 or not alive:
        return 0.0
    g = nx.Graph()
    g.add_nodes_from(alive)
    g.add_edges_from(s.edges())
    return max(len(c) for c in nx.connected_components(g)) / n_total


def ch_count(s: ClusterSnapshot) -> int:
    alive = s.alive
    n = sum(1 for i in alive if s.roles[i] in CLUSTER_ROLES)
    if alive and n == 0:
        raise ValueError("snapshot has live nodes but no cluster head")
    return n


# ---------------------------------------------------------------------------
# Power and lifetime


def _energy_fj(v, power_nw):
    return sum(t * p for t, p in zip(v[:4], power_nw))


@dataclass
class PowerStats:
    avg_power_mw: float
    per_node_mw: dict
    first_death_s: float | None
    death_times_s: list


def power_stats(trace) -> PowerStats:
    end = next(r for r in reversed(trace.records) if r["ev"] == "end")
    power = trace.meta["power_nw"]
    per = {}
    deaths = []
    # injected hard faults are not battery deaths
    killed = {r["node"] for r in trace.records if r["ev"] == "fault" and r.get("action") == "kill"}
    for k, v in sorted(end["energy"].items(), key=lambda kv: int(kv[0])):
        alive_t = sum(v[:4])
        if alive_t > 0:
            per[int(k)] = _energy_fj(v, power) / alive_t / 1e6  # fJ/µs = nW -> mW
        if v[6] is not None and int(k) not in killed:
            deaths.append(v[6] / 1e6)
    deaths.sort()
    avg = sum(per.values()) / len(per) if per else 0.0
    return PowerStats(avg, per, deaths[0] if deaths else None, deaths)


def conservation_violations(trace) -> list:
    """(t, node) pairs where a snapshot's energy view does not balance exactly.

    A node balances when residual + sum(time * power) equals the battery and
    its state times add up to the time it has existed (or existed until death).
    """
    power = trace.meta["power_nw"]
    battery = trace.meta["battery_fj"]
    bad = []
    for rec in trace.records:
        if rec["ev"] not in ("snap", "end"):
            continue
        for k, v in rec["energy"].items():
            until = v[6] if v[6] is not None else rec["t"]
            if v[4] + _energy_fj(v, power) != battery or sum(v[:4]) != until - v[5] or v[4] < 0:
                bad.append((rec["t"], int(k)))
    return bad


# ---------------------------------------------------------------------------
# Clustering cost


@dataclass
class ClusteringCost:
    time_s: float | None
    energy_mwh: float | None
    connectivity: float
    time_norm_s: float | None
    energy_norm_mwh: float | None
    flag: str = ""
    unsettled_energy_mwh: float = 0.0  # over the whole run (all re-clusterings)
    epochs: int = 0


def snapshots(trace):
    pos = {int(k): tuple(v) for k, v in trace.meta["positions"].items()}
    rng = trace.meta["radio_range"]
    for r in trace.records:
        if r["ev"] == "fault" and r.get("action") == "add":
            pos[r["node"]] = tuple(r["position"])
        if r["ev"] == "snap":
            yield ClusterSnapshot.from_record(r, dict(pos), rng), r


def clustering_cost(trace) -> ClusteringCost:
    power = trace.meta["power_nw"]
    first = None
    prev_energy = None
    prev_settled = None
    unsettled = 0
    epochs = 0
    was_all = False
    for snap, rec in snapshots(trace):
        total = sum(_energy_fj(v, power) for v in rec["energy"].values())
        alive = snap.alive
        all_settled = bool(alive) and all(snap.settled[i] for i in alive)
        if prev_energy is not None and prev_settled is not None:
            # energy of the elapsed round is charged to clustering when some node was unsettled
            if not prev_settled:
                unsettled += total - prev_energy
        if all_settled and not was_all:
            epochs += 1
            if first is None:
                first = (snap, total)
        was_all = all_settled
        prev_energy, prev_settled = total, all_settled
    if first is None:
        return ClusteringCost(None, None, 0.0, None, None, "never settled", unsettled / 3.6e15, epochs)
    snap, energy = first
    conn = connectivity_ratio(snap)
    t = snap.time / 1e6
    e = energy / 3.6e15
    if conn == 0:
        return ClusteringCost(t, e, 0.0, t, e, "zero connectivity, unnormalized", unsettled / 3.6e15, epochs)
    return ClusteringCost(t, e, conn, t / conn, e / conn, "", unsettled / 3.6e15, epochs)


# ---------------------------------------------------------------------------
# Resilience


@dataclass
class ResilienceSample:
    kind: str  # "fail_ch", "fail_bridge", "fail_nch", "add"
    node: int
    injected_round: float
    detection_rounds: float | None
    raw_detection_rounds: float | None
    recovery_rounds: float | None
    window: tuple
    recovery_bound: float
    within: bool
    note: str = ""


def _node_events(trace):
    return [r for r in trace.records if r["ev"] == "node"]


def resilience_latencies(trace, plan=None) -> list:
    """One sample per injected change. ``plan`` defaults to the faults found in the trace."""
    R = trace.meta["round_ticks"]
    t_ch = trace.meta["t_fail_ch"]
    t_nch = trace.meta["t_fail_nch"]
    cycle = trace.meta["cycle_rounds"]
    evs = _node_events(trace)
    faults = [r for r in trace.records if r["ev"] == "fault"]
    if plan is not None:
        wanted = {(f.node, f.action) for f in plan}
        faults = [f for f in faults if (f["node"], f["action"]) in wanted]
    out = []
    for f in faults:
        v, t0 = f["node"], f["t"]
        r0 = t0 / R
        if f["action"] == "kill":
            role = f["role"]
            kind = {"ch": "fail_ch", "bridge": "fail_bridge"}.get(role, "fail_nch")
            T = t_ch if kind != "fail_nch" else t_nch
            window = (2 * T, 2.5 * T)
            removals = [e for e in evs if e["what"] == "removed" and e["data"][0] == v
                        and e["t"] >= t0]
            if not removals:
                out.append(ResilienceSample(kind, v, r0, None, None, None, window, 2, False,
                                            "unresolved at horizon"))
                continue
            first_t = min(e["t"] for e in removals)
            firsts = [e for e in removals if e["t"] == first_t]
            det = min((e["t"] - e["last_rx"]) / R for e in firsts if e["last_rx"] is not None)
            raw = (first_t - t0) / R
            triggers = [e for e in evs if e["what"] == "trigger" and e["t"] >= t0
                        and isinstance(e["data"][1], list) and v in e["data"][1]]
            if kind == "fail_nch" and not triggers:
                rec, bound, note = 0.0, 0, "immediate"
            else:
                rec, note = _recovery(evs, triggers, R)
                bound = 2
            ok = (det is not None and window[0] <= det <= window[1]
                  and rec is not None and rec <= bound)
            out.append(ResilienceSample(kind, v, r0, det, raw, rec, window, bound, ok, note))
        else:
            mine = [e for e in evs if e["node"] == v]
            aff = next((e for e in mine if e["what"] in ("affiliated",)
                        or (e["what"] == "joined" and e["data"][0] == "singleton")), None)
            joined = next((e for e in mine if e["what"] == "joined"), None)
            window = (0, cycle)
            if aff is None or joined is None:
                out.append(ResilienceSample("add", v, r0, None, None, None, window, 3, False,
                                            "unresolved at horizon"))
                continue
            det = aff["round"] - math.floor(r0)
            mode = joined["data"][0]
            if mode in ("member", "singleton"):
                rec, bound = 0.0, 0
            else:
                stable = next((e for e in mine if e["what"] == "phase" and e["data"][1] == "stable"
                               and e["t"] > joined["t"]), None)
                rec = None if stable is None else stable["round"] - joined["round"]
                bound = 3
            ok = det <= window[1] and rec is not None and rec <= bound
            out.append(ResilienceSample("add", v, r0, det, det, rec, window, bound, ok, mode))
    return out


def _recovery(evs, triggers, R):
    """Worst per-node time from trigger round to that node's return to Stable."""
    if not triggers:
        return None, "no trigger"
    worst = 0
    for tr in triggers:
        back = next((e for e in evs if e["node"] == tr["node"] and e["what"] == "phase"
                     and e["data"][1] == "stable" and e["t"] >= tr["t"]), None)
        if back is None:
            return None, "unresolved at horizon"
        worst = max(worst, back["round"] - tr["round"])
    return float(worst), f"{len(triggers)} nodes re-elected"


# ---------------------------------------------------------------------------
# Report assembly


@dataclass
class MetricsReport:
    connectivity: list  # (t_s, ratio)
    ch_counts: list  # (t_s, count)
    power: PowerStats
    clustering: ClusteringCost
    resilience: list
    stable_connectivity: float | None = None
    stable_ch_count: int | None = None


def stable_entry(trace):
    """First snapshot at which every live node reports settled clustering."""
    for snap, _ in snapshots(trace):
        alive = snap.alive
        if alive and all(snap.settled[i] for i in alive):
            return snap
    return None


def report(trace) -> MetricsReport:
    conn, chs = [], []
    for snap, _ in snapshots(trace):
        if not snap.alive:
            continue
        conn.append((snap.time / 1e6, connectivity_ratio(snap)))
        try:
            chs.append((snap.time / 1e6, ch_count(snap)))
        except ValueError:
            chs.append((snap.time / 1e6, 0))
    se = stable_entry(trace)
    return MetricsReport(conn, chs, power_stats(trace), clustering_cost(trace),
                         resilience_latencies(trace) if "t_fail_ch" in trace.meta else [],
                         connectivity_ratio(se) if se else None,
                         ch_count(se) if se else None)
