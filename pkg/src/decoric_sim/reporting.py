"""CSV and figure output for single runs and sweeps.

Column schemas:

snapshots.csv
    t_s, round, alive, heads, members, dead, connectivity
resilience.csv
    kind, node, injected_round, detection_rounds, raw_detection_rounds,
    recovery_rounds, window_lo, window_hi, recovery_bound, within, note
power.csv
    node, avg_power_mw, death_s
summary.csv
    key, value   (the last row holds the normalized config as JSON)
sweep.csv
    one row per cell: the axis values, then <metric>_min, <metric>_mean,
    <metric>_max for every metric in SWEEP_METRICS, then runs and failures
"""

from __future__ import annotations

import csv
import json
import os

from . import metrics
from .protocol import Role

SWEEP_METRICS = ("stable_connectivity", "stable_ch_count", "avg_power_mw", "first_death_s",
                 "clustering_time_s", "clustering_energy_mwh", "clustering_time_norm_s",
                 "clustering_energy_norm_mwh", "unsettled_energy_mwh")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 9))
    return v


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def config_json(cfg) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def summarize(trace) -> dict:
    """Scalar metrics of one run, keyed as in SWEEP_METRICS."""
    rep = metrics.report(trace)
    cc = rep.clustering
    return {
        "stable_connectivity": rep.stable_connectivity,
        "stable_ch_count": rep.stable_ch_count,
        "avg_power_mw": rep.power.avg_power_mw,
        "first_death_s": rep.power.first_death_s,
        "clustering_time_s": cc.time_s,
        "clustering_energy_mwh": cc.energy_mwh,
        "clustering_time_norm_s": cc.time_norm_s,
        "clustering_energy_norm_mwh": cc.energy_norm_mwh,
        "unsettled_energy_mwh": cc.unsettled_energy_mwh,
        "resilience_ok": all(s.within for s in rep.resilience),
    }


def write_run_report(trace, cfg, out_dir, figures=True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for snap, rec in metrics.snapshots(trace):
        roles = list(snap.roles.values())
        heads = sum(1 for r in roles if r in metrics.CLUSTER_ROLES)
        dead = sum(1 for r in roles if r == Role.DEAD.value)
        rows.append((snap.time / 1e6, rec["round"], len(roles) - dead, heads,
                     len(roles) - dead - heads, dead,
                     metrics.connectivity_ratio(snap) if snap.alive else 0.0))
    _write(os.path.join(out_dir, "snapshots.csv"),
           ("t_s", "round", "alive", "heads", "members", "dead", "connectivity"), rows)

    res = metrics.resilience_latencies(trace) if "t_fail_ch" in trace.meta else []
    _write(os.path.join(out_dir, "resilience.csv"),
           ("kind", "node", "injected_round", "detection_rounds", "raw_detection_rounds",
            "recovery_rounds", "window_lo", "window_hi", "recovery_bound", "within", "note"),
           [(s.kind, s.node, s.injected_round, s.detection_rounds, s.raw_detection_rounds,
             s.recovery_rounds, s.window[0], s.window[1], s.recovery_bound, s.within, s.note)
            for s in res])

    ps = metrics.power_stats(trace)
    end = next(r for r in reversed(trace.records) if r["ev"] == "end")
    _write(os.path.join(out_dir, "power.csv"), ("node", "avg_power_mw", "death_s"),
           [(int(k), ps.per_node_mw.get(int(k)), None if v[6] is None else v[6] / 1e6)
            for k, v in sorted(end["energy"].items(), key=lambda kv: int(kv[0]))])

    summary = summarize(trace)
    _write(os.path.join(out_dir, "summary.csv"), ("key", "value"),
           [(k, v) for k, v in summary.items()] + [("config", config_json(cfg))])
    if figures:
        _run_figures(rows, ps, out_dir)
    return summary


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "decoric-sim"  # stable element ids
    return plt


def _save(fig, path):
    fig.savefig(path, metadata={"Date": None})


def _run_figures(rows, ps, out_dir):
    plt = _plt()
    if rows:
        t = [r[0] for r in rows]
        fig, ax = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        ax[0].step(t, [r[3] for r in rows], where="post")
        ax[0].set_ylabel("cluster heads")
        ax[1].step(t, [r[6] for r in rows], where="post")
        ax[1].set_ylabel("connectivity")
        ax[1].set_xlabel("time [s]")
        fig.tight_layout()
        _save(fig, os.path.join(out_dir, "clusters.svg"))
        plt.close(fig)
    if ps.per_node_mw:
        fig, ax = plt.subplots(figsize=(6, 3))
        ids = sorted(ps.per_node_mw)
        ax.bar(ids, [ps.per_node_mw[i] for i in ids])
        ax.set_xlabel("node")
        ax.set_ylabel("average power [mW]")
        fig.tight_layout()
        _save(fig, os.path.join(out_dir, "power.svg"))
        plt.close(fig)


def aggregate(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, None
    return min(vals), sum(vals) / len(vals), max(vals)


def write_sweep_report(cells, axes, cfg, out_dir, figures=True):
    """``cells`` is a list of (axis values tuple, list of summaries, list of failures)."""
    os.makedirs(out_dir, exist_ok=True)
    header = list(axes)
    for m in SWEEP_METRICS:
        header += [f"{m}_min", f"{m}_mean", f"{m}_max"]
    header += ["runs", "failures"]
    rows = []
    for values, sums, fails in cells:
        row = list(values)
        for m in SWEEP_METRICS:
            row += list(aggregate([s[m] for s in sums]))
        row += [len(sums), len(fails)]
        rows.append(row)
    _write(os.path.join(out_dir, "sweep.csv"), header, rows)
    _write(os.path.join(out_dir, "failures.csv"), list(axes) + ["seed", "error"],
           [list(v) + [seed, err] for v, _, fails in cells for seed, err in fails])
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(config_json(cfg) + "\n")
    if figures:
        _sweep_figures(header, rows, len(axes), out_dir)
    return rows


def _sweep_figures(header, rows, n_axes, out_dir):
    """One bar chart per metric family; error bars span min..max across seeds."""
    plt = _plt()
    labels = ["/".join(str(v) for v in r[:n_axes]) for r in rows]
    panels = {
        "heads.svg": ("stable_ch_count", "cluster heads at Stable entry"),
        "power.svg": ("avg_power_mw", "average power [mW]"),
        "lifetime.svg": ("first_death_s", "first node death [s]"),
        "clustering_cost.svg": ("clustering_time_norm_s", "clustering time / connectivity [s]"),
    }
    for name, (m, ylabel) in panels.items():
        i = header.index(f"{m}_mean")
        mean = [r[i] for r in rows]
        if all(v is None for v in mean):
            continue
        lo = [0 if r[i] is None else r[i] - r[i - 1] for r in rows]
        hi = [0 if r[i] is None else r[i + 1] - r[i] for r in rows]
        fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows) + 2), 3.5))
        ax.bar(range(len(rows)), [0 if v is None else v for v in mean], yerr=[lo, hi], capsize=3)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        _save(fig, os.path.join(out_dir, name))
        plt.close(fig)
