"""Command line entry point: validate, run, sweep and replay.

    decoric-sim validate scenario.yaml
    decoric-sim run scenario.yaml [--out DIR] [--seed S ...]
    decoric-sim sweep scenario.yaml --axis rssi_threshold=-45,-65,-85 [--axis ...]
    decoric-sim replay out/seed_0/trace.jsonl [--out DIR]

Exit status is 0 on success, 2 for invalid configuration, 1 when a run fails
or a resilience sample falls outside its bound. DECORIC_WORKERS sets the size
of the process pool used by run and sweep.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import yaml

from . import config, reporting
from .engine import Trace


def workers() -> int:
    try:
        return max(1, int(os.environ.get("DECORIC_WORKERS", "1")))
    except ValueError:
        return 1


def _map(fn, jobs):
    n = workers()
    if n == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, jobs))


def _load(path):
    with open(path) as fh:
        return yaml.safe_load(fh) or {}


def _set(raw, dotted, value):
    cur = raw
    keys = dotted.split(".")
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


def parse_axis(text: str):
    """``path=v1,v2`` with values parsed as YAML scalars."""
    if "=" not in text:
        raise ValueError(f"axis {text!r} must look like field=v1,v2")
    path, vals = text.split("=", 1)
    values = [yaml.safe_load(v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ValueError(f"axis {path!r} has no values")
    return path.strip(), values


def _one_run(job):
    """Run one (config, seed) pair. Never raises: failures come back as text."""
    cfg, seed, out_dir, figures = job
    try:
        trace, _ = config.run(cfg, seed)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "trace.jsonl"), "w") as fh:
                fh.write(trace.to_jsonl())
            summary = reporting.write_run_report(trace, cfg, out_dir, figures)
        else:
            summary = reporting.summarize(trace)
        return seed, summary, None
    except Exception:  # isolate the failure to this run
        return seed, None, traceback.format_exc(limit=3).strip().splitlines()[-1]


def cmd_validate(args):
    try:
        cfg = config.validate(_load(args.config))
    except config.ConfigError as e:
        for err in e.errors:
            print(f"error: {err}", file=sys.stderr)
        return 2
    yaml.safe_dump(cfg, sys.stdout, sort_keys=True)
    return 0


def _validated(raw):
    try:
        return config.validate(raw)
    except config.ConfigError as e:
        for err in e.errors:
            print(f"error: {err}", file=sys.stderr)
        return None


def cmd_run(args):
    cfg = _validated(_load(args.config))
    if cfg is None:
        return 2
    out = args.out or cfg["output"]["dir"]
    seeds = args.seed or cfg["seeds"]
    figures = cfg["output"]["figures"] and not args.no_figures
    jobs = [(cfg, s, os.path.join(out, f"seed_{s}"), figures) for s in seeds]
    status = 0
    for seed, summary, err in _map(_one_run, jobs):
        if err:
            print(f"seed {seed}: FAILED {err}")
            status = 1
            continue
        ok = summary["resilience_ok"]
        print(f"seed {seed}: connectivity={summary['stable_connectivity']} "
              f"heads={summary['stable_ch_count']} power_mw={summary['avg_power_mw']:.3f} "
              f"first_death_s={summary['first_death_s']} resilience={'ok' if ok else 'OUT OF BOUNDS'}")
        if not ok:
            status = 1
    return status


def cmd_sweep(args):
    raw = _load(args.config)
    try:
        axes = [parse_axis(a) for a in args.axis]
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    base = _validated(raw)
    if base is None:
        return 2
    names = [a[0] for a in axes]
    cells, jobs = [], []
    for values in itertools.product(*[a[1] for a in axes]):
        r = copy.deepcopy(raw)
        for name, v in zip(names, values):
            _set(r, name, v)
        cfg = _validated(r)
        if cfg is None:
            return 2
        cells.append((values, len(cfg["seeds"])))
        jobs += [(cfg, s, None, False) for s in cfg["seeds"]]
    results = _map(_one_run, jobs)
    grouped, k = [], 0
    for values, n in cells:
        chunk = results[k:k + n]
        k += n
        grouped.append((values, [s for _, s, e in chunk if e is None],
                        [(seed, e) for seed, _, e in chunk if e is not None]))
    out = args.out or base["output"]["dir"]
    figures = base["output"]["figures"] and not args.no_figures
    rows = reporting.write_sweep_report(grouped, names, base, out, figures)
    failures = sum(len(g[2]) for g in grouped)
    for (values, _), row in zip(cells, rows):
        print(" ".join(f"{n}={v}" for n, v in zip(names, values)), f"runs={row[-2]} failures={row[-1]}")
    print(f"wrote {os.path.join(out, 'sweep.csv')}")
    return 1 if failures else 0


def cmd_replay(args):
    with open(args.trace) as fh:
        trace = Trace.from_jsonl(fh.read())
    out = args.out or os.path.dirname(os.path.abspath(args.trace))
    cfg = trace.meta.get("config", {})
    summary = reporting.write_run_report(trace, cfg, out, not args.no_figures)
    for k, v in summary.items():
        print(f"{k}={v}")
    return 0 if summary["resilience_ok"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="decoric-sim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    v = sub.add_parser("validate", help="check a scenario and print it with defaults filled")
    v.add_argument("config")
    v.set_defaults(fn=cmd_validate)
    r = sub.add_parser("run", help="run one scenario for each configured seed")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--seed", type=int, action="append", help="override the seed list")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(fn=cmd_run)
    s = sub.add_parser("sweep", help="run the cartesian product of axes x seeds")
    s.add_argument("config")
    s.add_argument("--axis", action="append", required=True, metavar="FIELD=V1,V2")
    s.add_argument("--out")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_sweep)
    y = sub.add_parser("replay", help="recompute the report from a stored trace")
    y.add_argument("trace")
    y.add_argument("--out")
    y.add_argument("--no-figures", action="store_true")
    y.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
