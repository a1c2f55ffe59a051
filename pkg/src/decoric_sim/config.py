"""Scenario configuration: schema, validation and construction of a run.

A scenario is a YAML mapping. Every field has a default, so an empty file
describes the reference setup: 100 x 100 m area, 50 m range, RDC at 32
activations per second, one frame per round, 6 mWh batteries, 1000 s horizon.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from .baselines import BeemNode, BeemParams, LeachNode, LeachParams
from .decoric import DecoricNode, DecoricParams
from .energy import EnergyParams, mw_to_nw, mwh_to_fj
from .engine import FaultEvent, Simulation
from .mac_timing import (TICKS_PER_SECOND, MacParams, RdcParams, cycle_rounds,
                         round_duration)
from .topology import RadioModel, Topology, from_csv, generate_random_topology

DEFAULTS = {
    "protocol": "decoric",
    "n_nodes": 100,
    "max_nodes": None,  # slot count; defaults to n_nodes plus added nodes
    "area": [100.0, 100.0],
    "radio_range": 50.0,
    "rssi_threshold": -65.0,
    "radio": {"kind": "linear", "tx_power_dbm": 0.0, "sensitivity_dbm": -95.0,
              "gamma": 2.0, "d0": 1.0, "pl0_db": 40.0},
    "topology": {"source": "random", "file": None},
    "mac": {"maxR": 2, "maxBE": [3, 3, 3], "tau_symb_us": 320, "tau_cca_us": 128,
            "tau_fr_us": 2872, "tau_ifs_us": 640, "min_round_s": 0.8, "access": "slotted"},
    "rdc": {"rate": 32, "duty_fraction": 0.5, "drift_rounds": 1},
    "energy": {"battery_mwh": 6.0, "tx_mw": 52.2, "rx_mw": 56.4, "cpu_mw": 5.4,
               "lpm_mw": 0.1635},
    "decoric": {"t_fail_ch_cycles": 1, "t_fail_nch_cycles": 6, "tie_rule": "lower",
                "literal_corroboration": False, "pair_bridges": True,
                "correction_order": "two_pass", "cycle_rounds": None},
    "leach": {"p": 0.1, "epoch": 10, "member_sleep": "rdc"},
    "beem": {"c_prob": 0.1, "epoch": 10, "member_sleep": "rdc"},
    "horizon_s": 1000.0,
    "faults": [],
    "seeds": [0],
    "trace": {"level": "summary", "snapshot_every": 1},
    "output": {"dir": "out", "figures": True},
}

PROTOCOLS = ("decoric", "leach", "beem")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _merge(base, over, path, errors):
    out = copy.deepcopy(base)
    if over is None:
        return out
    if not isinstance(over, dict):
        errors.append(f"{path or '<root>'}: expected a mapping")
        return out
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            errors.append(f"{p}: unknown field")
        elif isinstance(base[k], dict) and base[k] is not None:
            out[k] = _merge(base[k], v, p, errors)
        else:
            out[k] = v
    return out


def validate(raw) -> dict:
    """Fill defaults and check every field. Raises ConfigError listing all problems."""
    errors = []
    cfg = _merge(DEFAULTS, raw or {}, "", errors)

    def need(cond, path, msg):
        if not cond:
            errors.append(f"{path}: {msg}")

    need(cfg["protocol"] in PROTOCOLS, "protocol", f"must be one of {PROTOCOLS}")
    n = cfg["n_nodes"]
    need(isinstance(n, int) and n >= 1, "n_nodes", "must be an integer >= 1")
    area = cfg["area"]
    ok_area = isinstance(area, (list, tuple)) and len(area) == 2 and all(
        isinstance(a, (int, float)) and a > 0 for a in area)
    need(ok_area, "area", "must be [width, height] with positive values")
    need(isinstance(cfg["radio_range"], (int, float)) and cfg["radio_range"] > 0,
         "radio_range", "must be positive")
    need(cfg["radio"]["kind"] in ("linear", "log_distance"), "radio.kind",
         "must be linear or log_distance")
    need(cfg["topology"]["source"] in ("random", "file"), "topology.source", "must be random or file")
    if cfg["topology"]["source"] == "file":
        need(bool(cfg["topology"]["file"]), "topology.file", "required when source is file")
    mac = cfg["mac"]
    need(isinstance(mac["maxR"], int) and mac["maxR"] >= 0, "mac.maxR", "must be >= 0")
    need(isinstance(mac["maxBE"], list) and len(mac["maxBE"]) == (mac["maxR"] or 0) + 1
         and all(isinstance(b, int) and b >= 1 for b in mac["maxBE"]),
         "mac.maxBE", "needs maxR + 1 entries, each >= 1")
    for k in ("tau_symb_us", "tau_cca_us", "tau_fr_us", "tau_ifs_us"):
        need(isinstance(mac[k], int) and mac[k] > 0, f"mac.{k}", "must be a positive integer")
    need(mac["access"] in ("slotted", "random"), "mac.access", "must be slotted or random")
    rdc = cfg["rdc"]
    need(isinstance(rdc["rate"], int) and rdc["rate"] >= 1 and TICKS_PER_SECOND % rdc["rate"] == 0,
         "rdc.rate", "must be a positive divisor of 1e6")
    need(isinstance(rdc["duty_fraction"], (int, float)) and 0 < rdc["duty_fraction"] <= 1,
         "rdc.duty_fraction", "must be in (0, 1]")
    for k, v in cfg["energy"].items():
        need(isinstance(v, (int, float)) and v >= 0, f"energy.{k}", "must be non-negative")
    need(cfg["energy"]["battery_mwh"] > 0, "energy.battery_mwh", "must be positive")
    d = cfg["decoric"]
    need(d["tie_rule"] in ("lower", "higher") or isinstance(d["tie_rule"], list),
         "decoric.tie_rule", "must be lower, higher or a list of ids")
    need(d["correction_order"] in ("two_pass", "key", "id"), "decoric.correction_order",
         "must be two_pass, key or id")
    for k in ("t_fail_ch_cycles", "t_fail_nch_cycles"):
        need(isinstance(d[k], int) and d[k] >= 1, f"decoric.{k}", "must be an integer >= 1")
    need(0 < cfg["leach"]["p"] < 1, "leach.p", "must be in (0, 1)")
    need(isinstance(cfg["leach"]["epoch"], int) and cfg["leach"]["epoch"] >= 4, "leach.epoch", "must be >= 4")
    need(0 < cfg["beem"]["c_prob"] < 1, "beem.c_prob", "must be in (0, 1)")
    need(isinstance(cfg["beem"]["epoch"], int) and cfg["beem"]["epoch"] >= 5, "beem.epoch", "must be >= 5")
    need(isinstance(cfg["horizon_s"], (int, float)) and cfg["horizon_s"] >= 0, "horizon_s",
         "must be >= 0")
    seeds = cfg["seeds"]
    need(isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds), "seeds",
         "must be a non-empty list of integers")
    need(cfg["trace"]["level"] in ("full", "summary"), "trace.level", "must be full or summary")

    # cross-field rules
    if not errors:
        model = _radio(cfg)
        best = model.rssi(0.0, cfg["radio_range"])
        need(cfg["rssi_threshold"] <= best, "rssi_threshold",
             f"unreachable: strongest possible RSSI is {best:.1f} dBm")
        n_total = n if isinstance(n, int) else 0
        ids = set(range(n_total)) if cfg["topology"]["source"] == "random" else None
        killed = set()
        for i, f in enumerate(cfg["faults"] or []):
            p = f"faults[{i}]"
            if not isinstance(f, dict) or f.get("action") not in ("kill", "add"):
                errors.append(f"{p}: needs action kill or add")
                continue
            if not isinstance(f.get("node"), int) or f["node"] < 0:
                errors.append(f"{p}.node: must be a non-negative integer")
                continue
            if not isinstance(f.get("time_s"), (int, float)) or f["time_s"] < 0:
                errors.append(f"{p}.time_s: must be >= 0")
            if f["action"] == "kill":
                if ids is not None and f["node"] not in ids:
                    errors.append(f"{p}.node: unknown node {f['node']}")
                elif f["node"] in killed:
                    errors.append(f"{p}.node: node {f['node']} is already dead")
                killed.add(f["node"])
            else:
                pos = f.get("position")
                if not (isinstance(pos, (list, tuple)) and len(pos) == 2):
                    errors.append(f"{p}.position: required [x, y] for add")
                elif ok_area and not (0 <= pos[0] <= area[0] and 0 <= pos[1] <= area[1]):
                    errors.append(f"{p}.position: outside the area")
                if ids is not None:
                    if f["node"] in ids:
                        errors.append(f"{p}.node: id {f['node']} already in use")
                    ids.add(f["node"])
    if errors:
        raise ConfigError(errors)
    return cfg


def load(path) -> dict:
    with open(path) as fh:
        return validate(yaml.safe_load(fh))


def _radio(cfg) -> RadioModel:
    r = cfg["radio"]
    return RadioModel(r["kind"], r["tx_power_dbm"], r["sensitivity_dbm"], r["gamma"], r["d0"],
                      r["pl0_db"])


@dataclass
class Built:
    sim: Simulation
    cfg: dict
    topology: Topology
    cycle_rounds: int


def slot_count(cfg) -> int:
    adds = sum(1 for f in cfg["faults"] if f["action"] == "add")
    return cfg["max_nodes"] or (cfg["n_nodes"] + adds)


def mac_params(cfg) -> MacParams:
    m = cfg["mac"]
    return MacParams(N=slot_count(cfg), maxR=m["maxR"], maxBE=tuple(m["maxBE"]),
                     tau_symb=m["tau_symb_us"], tau_cca=m["tau_cca_us"], tau_fr=m["tau_fr_us"],
                     tau_ifs=m["tau_ifs_us"], min_round=round(m["min_round_s"] * TICKS_PER_SECOND))


def make_topology(cfg, seed: int) -> Topology:
    kw = dict(radio_range=cfg["radio_range"], rssi_threshold=cfg["rssi_threshold"], model=_radio(cfg))
    if cfg["topology"]["source"] == "file":
        with open(cfg["topology"]["file"]) as fh:
            return from_csv(fh.read(), area=tuple(cfg["area"]), **kw)
    return generate_random_topology(cfg["n_nodes"], tuple(cfg["area"]), seed, **kw)


def build(cfg: dict, seed: int, topology: Topology | None = None, **sim_kw) -> Built:
    mac = mac_params(cfg)
    rnd = round_duration(mac)
    rdc = RdcParams(cfg["rdc"]["rate"], cfg["rdc"]["duty_fraction"], rnd)
    cyc = cfg["decoric"]["cycle_rounds"] or cycle_rounds(rnd, rdc.rdc_rate, cfg["rdc"]["drift_rounds"])
    e = cfg["energy"]
    energy = EnergyParams(mw_to_nw(e["tx_mw"]), mw_to_nw(e["rx_mw"]), mw_to_nw(e["cpu_mw"]),
                          mw_to_nw(e["lpm_mw"]), mwh_to_fj(e["battery_mwh"]))
    topo = topology or make_topology(cfg, seed)
    n_slots = mac.N
    proto = cfg["protocol"]
    if proto == "decoric":
        d = cfg["decoric"]
        tie = d["tie_rule"] if isinstance(d["tie_rule"], str) else tuple(d["tie_rule"])
        params = DecoricParams(t_fail_ch=d["t_fail_ch_cycles"] * cyc,
                               t_fail_nch=d["t_fail_nch_cycles"] * cyc, cycle_rounds=cyc,
                               tie_rule=tie, literal_corroboration=d["literal_corroboration"],
                               pair_bridges=d["pair_bridges"], correction_order=d["correction_order"],
                               max_nodes=max(n_slots, 1))

        def factory(i, joining):
            return DecoricNode(i, params, n_slots, joining)
    elif proto == "leach":
        lp = LeachParams(**cfg["leach"])

        def factory(i, joining):
            return LeachNode(i, lp, n_slots, seed)
    else:
        bp = BeemParams(c_prob=cfg["beem"]["c_prob"], epoch=cfg["beem"]["epoch"],
                        member_sleep=cfg["beem"]["member_sleep"])

        def factory(i, joining):
            return BeemNode(i, bp, n_slots, seed)
    faults = [FaultEvent(round(f["time_s"] * TICKS_PER_SECOND), f["node"], f["action"],
                         tuple(f["position"]) if f.get("position") else None)
              for f in cfg["faults"]]
    kw = dict(mac=mac, rdc=rdc, energy=energy, seed=seed,
              horizon=round(cfg["horizon_s"] * TICKS_PER_SECOND), faults=faults,
              trace_level=cfg["trace"]["level"], snapshot_every=cfg["trace"]["snapshot_every"],
              access=cfg["mac"]["access"])
    kw.update(sim_kw)
    sim = Simulation(topo, factory, **kw)
    sim.trace.meta["config"] = cfg
    sim.trace.meta["cycle_rounds"] = cyc
    if proto == "decoric":
        sim.trace.meta["t_fail_ch"] = params.t_fail_ch
        sim.trace.meta["t_fail_nch"] = params.t_fail_nch
    sim.trace.meta["protocol"] = proto
    sim.trace.meta["n_total"] = len(topo.positions)
    return Built(sim, cfg, topo, cyc)


def run(cfg: dict, seed: int, **kw):
    b = build(cfg, seed, **kw)
    return b.sim.run(), b
