"""Command line entry point: ``python3 -m stsyn <command> ...``.

Run directories are created under ``$STSYN_OUTPUT_ROOT`` when ``--out`` is a
relative path. Failures print one JSON object ``{"error": ..., "type": ...,
"key": ...}`` on stderr and exit with status 2 (bad input) or 1 (anything
else).
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import analysis
from .config import load_config
from .errors import ConfigError
from .persist import load_trace, persist_trace
from .rng import derive_seed
from .simulator import comm_to_target, prepare, run_experiment, run_sweep, time_to_target
from .timing import OrderStatParams, analyze

OUTPUT_ROOT_ENV = "STSYN_OUTPUT_ROOT"


def _out_path(path):
    if os.path.isabs(path):
        return path
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "."), path)


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            out.append(tok)
    if not out:
        raise ConfigError("values", "empty value list")
    return out


def cmd_analyze(args):
    row = analyze(OrderStatParams(args.M, args.K, args.U), args.mu, mc_trials=args.mc_trials, seed=args.seed)
    if args.json:
        print(json.dumps(row))
        return 0
    print(f"{'quantity':<12}{'formula':>14}{'monte-carlo':>14}{'mc stderr':>12}")
    for name in ("t_bar", "u_bar", "s_bar"):
        mc = row.get(f"{name}_mc")
        se = row.get(f"{name[0]}_se_mc")
        mc_s = f"{mc:14.6g}" if mc is not None else f"{'-':>14}"
        se_s = f"{se:12.3g}" if se is not None else f"{'-':>12}"
        print(f"{name:<12}{row[name]:14.6g}{mc_s}{se_s}")
    print(f"quadrature abs err: {row['quadrature_abs_err']:.3g}   mc trials: {args.mc_trials}")
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config)
    trace = run_experiment(cfg)
    out = _out_path(args.out)
    man = persist_trace(trace, out)
    print(json.dumps({"out": out, "rounds": man.rounds, "termination": man.termination,
                      "config_hash": man.config_hash}))
    return 0 if trace.termination != "numeric-failure" else 3


def cmd_sweep(args):
    base = load_config(args.config)
    values = _parse_values(args.values)
    points = run_sweep(base, args.axis, values, n_jobs=args.jobs)
    out = _out_path(args.out)
    os.makedirs(out, exist_ok=True)
    rows = []
    for p in points:
        name = f"{args.axis}={p.value}"
        row = {"axis": args.axis, "value": p.value, "dir": name, "rounds": None, "termination": None,
               "T_cum": None, "C_cum": None, "final_loss": None, "time_to_target": None,
               "comm_to_target": None, "error": p.error}
        if p.trace is not None:
            persist_trace(p.trace, os.path.join(out, name))
            t = p.trace
            last = t.records[-1] if t.records else None
            row.update(rounds=len(t.records), termination=t.termination,
                       T_cum=last.T_cum if last else 0.0, C_cum=last.C_cum if last else 0,
                       final_loss=last.loss if last else None)
            if base.target_loss is not None:
                row.update(time_to_target=time_to_target(t, base.target_loss),
                           comm_to_target=comm_to_target(t, base.target_loss))
            elif base.target_accuracy is not None:
                row.update(time_to_target=time_to_target(t, base.target_accuracy, "accuracy"),
                           comm_to_target=comm_to_target(t, base.target_accuracy, "accuracy"))
        rows.append(row)
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    print(json.dumps({"out": out, "points": len(rows), "failed": sum(r["error"] is not None for r in rows)}))
    return 0 if all(r["error"] is None for r in rows) else 1


def replicate_configs(cfg, replicates):
    """Same config and partition, independent timing and batch streams per replicate."""
    return [cfg.replace(timing_seed=derive_seed(cfg.seed, "replicate", r, 0),
                        batch_seed=derive_seed(cfg.seed, "replicate", r, 1))
            for r in range(replicates)]


def cmd_verify_bound(args):
    cfg = load_trace(args.trace).config
    horizons = [int(v) for v in _parse_values(args.horizons)]
    rounds = max(horizons)
    obj, shards = prepare(cfg)
    traces = [run_experiment(c.replace(rounds=rounds, target_loss=None, target_accuracy=None, eval_every=1),
                             obj, shards, keep_models=True)
              for c in replicate_configs(cfg, args.replicates)]
    overrides = {}
    if args.delta is not None:
        overrides["delta"] = args.delta
    report = analysis.bound_report(traces, obj, horizons, **overrides)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(_out_path(args.out), "w") as fh:
            fh.write(text + "\n")
    print(text)
    print(f"conditions pass: {report['conditions_pass']}  step slack {report['step_slack']:.3g}"
          f"  delta slack {report['delta_slack']:.3g}", file=sys.stderr)
    print(f"{'J':>8}{'empirical':>14}{'bound':>14}{'holds':>7}", file=sys.stderr)
    for h in report["horizons"]:
        b = "-" if h["bound"] is None else f"{h['bound']:.6g}"
        print(f"{h['J']:>8}{h['empirical']:14.6g}{b:>14}{str(h['holds']):>7}", file=sys.stderr)
    ok = report["conditions_pass"] and all(h["holds"] for h in report["horizons"])
    return 0 if ok else 4


def cmd_trace_stats(args):
    trace = load_trace(args.trace)
    if not 0 <= args.round < len(trace.records):
        raise ConfigError("round", f"trace has {len(trace.records)} rounds")
    rec = trace.records[args.round]
    U = np.asarray(rec.U)
    values, counts = np.unique(U, return_counts=True)
    all_U = np.concatenate([np.asarray(r.U) for r in trace.records])
    out = {
        "round": rec.j, "S_size": rec.S_size, "T": rec.T,
        "histogram": {int(v): int(c) for v, c in zip(values, counts)},
        "per_worker": [int(u) for u in U],
        "mean_updates_round": float(U.mean()),
        "mean_updates_all_rounds": float(all_U.mean()),
        "mean_uploaders_all_rounds": float(np.mean([r.S_size for r in trace.records])),
    }
    print(json.dumps(out))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="stsyn", description="Straggler-tolerant local SGD simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="mean round time, local updates and uploaders")
    a.add_argument("--M", type=int, required=True)
    a.add_argument("--K", type=int, required=True)
    a.add_argument("--U", type=int, required=True)
    a.add_argument("--mu", type=float, default=1e-4)
    a.add_argument("--mc-trials", type=int, default=0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run one experiment and write its trace")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run one experiment per value of a scheme parameter")
    w.add_argument("--config", required=True)
    w.add_argument("--axis", required=True, choices=("K", "U", "sample_size", "tau0", "K0", "scheme"))
    w.add_argument("--values", required=True, help="comma separated")
    w.add_argument("--out", required=True)
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-bound", help="compare replicate gradient norms with the bound")
    v.add_argument("--trace", required=True, help="run directory written by simulate")
    v.add_argument("--replicates", type=int, default=32)
    v.add_argument("--horizons", default="10,100")
    v.add_argument("--delta", type=float, default=None)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify_bound)

    t = sub.add_parser("trace-stats", help="per-worker update histogram for one round")
    t.add_argument("--trace", required=True)
    t.add_argument("--round", type=int, default=0)
    t.set_defaults(func=cmd_trace_stats)
    return p


def _fail(exc, code):
    record = {"error": str(exc), "type": type(exc).__name__}
    if isinstance(exc, ConfigError):
        record["key"] = exc.key
    print(json.dumps(record), file=sys.stderr)
    return code


def cli_main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        return _fail(exc, 2)
    except Exception as exc:  # noqa: BLE001 - surfaced as a record, not a traceback
        return _fail(exc, 1)


def main():
    sys.exit(cli_main())
